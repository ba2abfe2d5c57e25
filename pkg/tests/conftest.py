# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import pytest

from tilenbody.particles import ParticleSystem
from tilenbody.initial import plummer
from tilenbody.power import PowerTrace, PowerSample


#: Softening used where FP32 results are held to the validation tolerances
SOFTENING = 0.05


class FakeClock:
    "A monotonic clock that only moves when told to"
    def __init__(self, now=1000.0):
        self.now = now

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


@pytest.fixture()
def clock():
    return FakeClock()

@pytest.fixture()
def pair():
    # unit masses one unit apart on x, the second moving along y
    return ParticleSystem(
        [1.0, 1.0],
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    )

@pytest.fixture()
def triangle():
    # equilateral triangle of side 1 in the xy plane, at rest
    h = 3 ** 0.5 / 2
    return ParticleSystem(
        [1.0, 1.0, 1.0],
        [[0.0, 1.0, 0.5], [0.0, 0.0, h], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        layout='axes',
    )

@pytest.fixture()
def small_plummer():
    return plummer(64, seed=7)

@pytest.fixture()
def plummer_1000():
    return plummer(1000, seed=42)

@pytest.fixture()
def plummer_2048():
    return plummer(2048, seed=42)

@pytest.fixture()
def snapshot_file(tmp_path, small_plummer):
    path = tmp_path / 'ic.txt'
    small_plummer.write(path)
    return path

@pytest.fixture()
def constant_trace():
    # 300 W from t = 0 to t = 20, one sample per second
    return PowerTrace(PowerSample(float(t), 'card0', 300.0) for t in range(21))
