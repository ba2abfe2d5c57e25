# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import argparse
import configparser
import logging
import os
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from .utils import s3
from .exc import InvalidConfiguration


logger = logging.getLogger('tilenbody.config')

CONFIG_ENV = 'TILENBODY_CONFIG'
_SECTION = 'tilenbody'
_TRUE = ('1', 'yes', 'true', 'on')
_FALSE = ('0', 'no', 'false', 'off')


def config_path(path: Optional[Union[Path, str]] = None,
                environ: Optional[Mapping[str, str]] = None) -> Optional[str]:
    """
    The config file to use: *path* when given, else the file named by the
    ``TILENBODY_CONFIG`` environment variable, else ``None``.
    """
    if path:
        return str(path)
    if environ is None:
        environ = os.environ
    return environ.get(CONFIG_ENV) or None


def parse_config(text: str) -> Dict[str, str]:
    """
    Parse ``key = value`` lines (``#`` starts a comment) into a dict. Keys are
    long option names with ``-`` or ``_``; they come back with ``_``.
    """
    parser = configparser.ConfigParser(
        delimiters=('=', ), comment_prefixes=('#', ), inline_comment_prefixes=('#', ),
        interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(f'[{_SECTION}]\n{text}')
    except configparser.Error as e:
        raise InvalidConfiguration(f"malformed config file: {e}") from e
    return {
        key.strip().lstrip('-').replace('-', '_'): value.strip()
        for key, value in parser[_SECTION].items()
    }


def load_config(path: Union[Path, str]) -> Dict[str, str]:
    "Read and parse the config file at *path* (or an ``s3://`` URI)"
    logger.info("Reading config file %s", path)
    try:
        return parse_config(s3.read_text(path))
    except OSError as e:
        raise InvalidConfiguration(f"cannot read config file {path}: {e}") from e


def _convert(action: argparse.Action, key: str, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = raw.lower()
        if lowered not in _TRUE + _FALSE:
            raise InvalidConfiguration(f"{key}: expected a boolean, got {raw!r}")
        value = lowered in _TRUE
        return value if isinstance(action, argparse._StoreTrueAction) else not value
    if isinstance(action, argparse._AppendAction) or action.nargs in ('*', '+'):
        return [_convert_one(action, key, part.strip()) for part in raw.split(',')]
    return _convert_one(action, key, raw)


def _convert_one(action: argparse.Action, key: str, raw: str):
    try:
        value = action.type(raw) if callable(action.type) else raw
    except (TypeError, ValueError, argparse.ArgumentTypeError) as e:
        raise InvalidConfiguration(f"{key}: invalid value {raw!r}: {e}") from e
    if action.choices is not None and value not in action.choices:
        raise InvalidConfiguration(
            f"{key}: {raw!r} is not one of {', '.join(map(str, action.choices))}")
    return value


def apply_config(parser: argparse.ArgumentParser, values: Mapping[str, str]) -> dict:
    """
    Convert *values* with the types of *parser*'s options and install them as
    the parser's defaults, so options given on the command line still win.
    Returns the converted values. A key that names no option of *parser*
    raises :exc:`~tilenbody.exc.InvalidConfiguration`.
    """
    actions = {
        action.dest: action for action in parser._actions
        if action.option_strings and action.dest not in ('help', 'config')
    }
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise InvalidConfiguration(
            f"unknown config keys for {parser.prog}: {', '.join(unknown)}")
    converted = {key: _convert(actions[key], key, raw) for key, raw in values.items()}
    parser.set_defaults(**converted)
    return converted
