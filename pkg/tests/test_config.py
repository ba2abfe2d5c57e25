# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import argparse

import pytest
from mock import patch

from tilenbody.config import *
from tilenbody.exc import InvalidConfiguration


def make_parser():
    parser = argparse.ArgumentParser(prog='test')
    parser.add_argument('-c', '--config')
    parser.add_argument('--softening', type=float, default=0.0)
    parser.add_argument('--cycles', type=int, default=10)
    parser.add_argument('--backend', choices=('engine', 'oracle'), default='engine')
    parser.add_argument('--energy', action='store_true')
    parser.add_argument('--tag', dest='tags', action='append')
    return parser


def test_config_path():
    "Test an explicit path wins over the environment"
    env = {CONFIG_ENV: 'from-env.conf'}
    assert config_path('given.conf', env) == 'given.conf'
    assert config_path(None, env) == 'from-env.conf'
    assert config_path(None, {}) is None
    assert config_path(None, {CONFIG_ENV: ''}) is None

def test_parse_config():
    """
    GIVEN: Config text with comments and long option names in either spelling
    EXPECT: A dict keyed by option destinations
    """
    text = (
        "# engine settings\n"
        "softening = 0.05  # for close pairs\n"
        "--cb-capacity = 4\n"
        "snapshot_every=2\n"
    )
    assert parse_config(text) == {
        'softening': '0.05', 'cb_capacity': '4', 'snapshot_every': '2',
    }
    assert parse_config('') == {}

def test_parse_config_malformed():
    """
    GIVEN: A line without a value, or a repeated key
    EXPECT: InvalidConfiguration
    """
    with pytest.raises(InvalidConfiguration):
        parse_config("softening\n")
    with pytest.raises(InvalidConfiguration):
        parse_config("cycles = 1\ncycles = 2\n")

def test_load_config(tmp_path):
    "Test a config file is read from disk"
    path = tmp_path / 'tilenbody.conf'
    path.write_text("backend = oracle\n")
    assert load_config(path) == {'backend': 'oracle'}
    with pytest.raises(InvalidConfiguration):
        load_config(tmp_path / 'missing.conf')

@patch('tilenbody.utils.s3.get_file_contents')
def test_load_config_s3(get_file_contents):
    "Test a config file is read from an s3:// URI"
    get_file_contents.return_value = "cycles = 3\n"
    assert load_config('s3://bucket/conf/tilenbody.conf') == {'cycles': '3'}
    get_file_contents.assert_called_once_with('bucket', 'conf/tilenbody.conf')

def test_apply_config():
    """
    GIVEN: Config values for typed, boolean, choice and append options
    EXPECT: Converted defaults that the command line still overrides
    """
    parser = make_parser()
    converted = apply_config(parser, {
        'softening': '0.05', 'cycles': '3', 'backend': 'oracle',
        'energy': 'yes', 'tags': 'a, b',
    })
    assert converted == {
        'softening': 0.05, 'cycles': 3, 'backend': 'oracle',
        'energy': True, 'tags': ['a', 'b'],
    }
    args = parser.parse_args([])
    assert args.softening == 0.05
    assert args.cycles == 3
    assert args.backend == 'oracle'
    assert args.energy
    assert args.tags == ['a', 'b']
    args = parser.parse_args(['--cycles', '7', '--backend', 'engine'])
    assert args.cycles == 7
    assert args.backend == 'engine'
    assert args.softening == 0.05

def test_apply_config_false_boolean():
    "Test a store_true option can be switched off in a config file"
    parser = make_parser()
    apply_config(parser, {'energy': 'off'})
    assert not parser.parse_args([]).energy

def test_apply_config_errors():
    """
    GIVEN: An unknown key, an unparseable number, a value outside the choices
    or a bad boolean
    EXPECT: InvalidConfiguration
    """
    bad = [
        {'bogus': '1'}, {'config': 'other.conf'}, {'cycles': 'ten'},
        {'backend': 'gpu'}, {'energy': 'maybe'},
    ]
    for values in bad:
        with pytest.raises(InvalidConfiguration):
            apply_config(make_parser(), values)
