# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

__version__ = '0.3.0'
