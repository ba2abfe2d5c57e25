# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

from pathlib import Path
from typing import Tuple, Union

import boto3


S3_SCHEME = 's3://'


class S3:
    """
    Class to defer initialising S3 resources until needed
    """
    def __init__(self):
        self._resource = None

    @property
    def resource(self):
        if self._resource is None:
            self._resource = boto3.resource('s3')
        return self._resource


def is_s3_uri(location: Union[Path, str]) -> bool:
    """
    Return ``True`` if *location* is an ``s3://bucket/key`` URI.
    """
    return isinstance(location, str) and location.startswith(S3_SCHEME)


def split_s3_uri(uri: str) -> Tuple[str, str]:
    """
    Split ``s3://bucket/key`` into ``(bucket, key)``.
    """
    if not is_s3_uri(uri):
        raise ValueError(f"not an S3 URI: {uri!r}")
    bucket, _, key = uri[len(S3_SCHEME):].partition('/')
    if not bucket or not key:
        raise ValueError(f"S3 URI needs a bucket and a key: {uri!r}")
    return bucket, key


def get_file_contents(bucket_name: str, file_key: str) -> str:
    """
    Open the S3 file and return its contents as a string
    """
    o = s3.resource.Object(bucket_name, file_key).get()
    body = o['Body'].read()
    if isinstance(body, bytes):
        return body.decode('utf-8')
    return body


def read_text(location: Union[Path, str]) -> str:
    """
    Return the text at *location*, which is either a local path or an
    ``s3://`` URI.
    """
    if is_s3_uri(location):
        return get_file_contents(*split_s3_uri(location))
    return Path(location).read_text()


s3 = S3()
