# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import pytest
from mock import patch

from tilenbody.cli import main, CLI
from tilenbody.particles import ParticleSystem, AccelJerk
from tilenbody.initial import plummer
from tilenbody.oracle import brute_force_fp64
from tilenbody.bench import BenchReport, RunRecord

from conftest import SOFTENING


def write_report(path, label, times, energies):
    runs = [
        RunRecord(k + 1, time_to_solution=t, energy={'card0': e}, energy_total=e)
        for k, (t, e) in enumerate(zip(times, energies))
    ]
    BenchReport(label=label, backend=label, n=64, repeats_requested=len(runs),
                runs=runs, config={'cycles': 10}).write(path)
    return path


def test_args_incorrect():
    with pytest.raises(SystemExit):
        main(['--nonexistentarg'])

def test_help(capsys):
    with pytest.raises(SystemExit) as ex:
        main(['--help'])
    out, err = capsys.readouterr()
    assert "emulated tile-based dataflow accelerator" in out

    with pytest.raises(SystemExit) as ex:
        main(['-h'])
    out, err = capsys.readouterr()
    assert "emulated tile-based dataflow accelerator" in out

    with pytest.raises(SystemExit) as ex:
        main(['help'])
    out, err = capsys.readouterr()
    assert "emulated tile-based dataflow accelerator" in out

    with pytest.raises(SystemExit) as ex:
        main(['help', 'run'])
    out, err = capsys.readouterr()
    assert "Integrate a snapshot forward in time" in out

def test_generate_args():
    args = main.parser.parse_args(['generate'])
    assert args.model == 'plummer'
    assert args.n == 102400
    assert args.seed == 0
    assert args.scale_radius is None
    assert not args.out

    args = main.parser.parse_args(
        ['generate', '--model', 'uniform_sphere', '--n', '1000', '--seed', '7',
         '--scale-radius', '2', '-o', 'ic.txt'])
    assert args.model == 'uniform_sphere'
    assert args.n == 1000
    assert args.seed == 7
    assert args.scale_radius == 2.0
    assert args.out == 'ic.txt'

    with pytest.raises(SystemExit):
        main.parser.parse_args(['generate', '--model', 'file'])

def test_run_args():
    args = main.parser.parse_args(['run', '--ic', 'ic.txt'])
    assert args.ic == 'ic.txt'
    assert args.backend == 'engine'
    assert args.cores == 64
    assert args.cb_capacity == 2
    assert args.cycles == 10
    assert args.dt == 2 ** -6
    assert args.softening == 0.0
    assert args.snapshot_every == 0
    assert not args.energy

    args = main.parser.parse_args(
        ['run', '--ic', 'ic.txt', '--backend', 'oracle', '--cycles', '3',
         '--snapshot-every', '1', '--energy', '-v', '-v'])
    assert args.backend == 'oracle'
    assert args.cycles == 3
    assert args.snapshot_every == 1
    assert args.energy
    assert args.verbose == 2

    with pytest.raises(SystemExit):
        main.parser.parse_args(['run', '--backend', 'gpu'])

def test_validate_args():
    args = main.parser.parse_args(['validate', '--ic', 'ic.txt'])
    assert args.format == 'text'
    assert not args.out

    args = main.parser.parse_args(
        ['validate', '--ic', 'ic.txt', '--backend', 'cpu_reference', '--threads', '4',
         '--format', 'kv'])
    assert args.backend == 'cpu_reference'
    assert args.threads == 4
    assert args.format == 'kv'

def test_bench_args():
    args = main.parser.parse_args(['bench', '--ic', 'ic.txt'])
    assert args.repeats == 5
    assert args.sleep_pad == 120.0
    assert args.provider == 'synthetic'
    assert args.interval == 1.0
    assert not args.label
    assert not args.trace_dir

    args = main.parser.parse_args(
        ['bench', '--ic', 'ic.txt', '--repeats', '3', '--sleep-pad', '0',
         '--provider', 'replay:trace.csv', '--label', 'tt', '-o', 'tt.report'])
    assert args.repeats == 3
    assert args.sleep_pad == 0.0
    assert args.provider == 'replay:trace.csv'
    assert args.label == 'tt'
    assert args.out == 'tt.report'

def test_report_args():
    args = main.parser.parse_args(['report', '-i', 'cpu.report', '--in', 'tt.report'])
    assert args.inputs == ['cpu.report', 'tt.report']
    assert not args.out

def test_generate_to_file(tmp_path):
    "Test generate writes the seeded snapshot to a file"
    path = tmp_path / 'ic.txt'
    assert main(['generate', '--n', '32', '--seed', '3', '-o', str(path)]) == 0
    system = ParticleSystem.from_file(path)
    assert system.n == 32
    assert (system.positions == plummer(32, seed=3).positions).all()

def test_generate_to_stdout(capsys):
    """
    GIVEN: generate with no output file
    EXPECT: The effective configuration as comments followed by the snapshot,
    which still parses
    """
    assert main(['generate', '--model', 'two_body_circular']) == 0
    out, err = capsys.readouterr()
    assert out.startswith('# tilenbody ')
    assert '# model = two_body_circular' in out
    system = ParticleSystem.from_string(out)
    assert system.n == 2

def test_generate_bad_count(capsys):
    "Test generate exits 2 when asked for too few particles"
    assert main(['generate', '--n', '1']) == 2
    out, err = capsys.readouterr()
    assert 'tilenbody:' in err

def test_validate_passes(snapshot_file, capsys):
    """
    GIVEN: The CPU baseline on a small softened Plummer sphere
    EXPECT: A passing report and exit code 0
    """
    rc = main(['validate', '--ic', str(snapshot_file), '--backend', 'cpu_reference',
               '--threads', '2', '--softening', str(SOFTENING), '--format', 'kv'])
    out, err = capsys.readouterr()
    assert rc == 0
    assert 'pass=true' in out
    assert 'n=64' in out

def test_validate_engine_unsoftened(plummer_2048, tmp_path, capsys):
    """
    GIVEN: 2048 seeded Plummer particles on a two-core engine with the default
    zero softening
    EXPECT: A passing report and exit code 0
    """
    ic = tmp_path / 'plummer.txt'
    plummer_2048.write(ic)
    rc = main(['validate', '--ic', str(ic), '--backend', 'engine', '--cores', '2'])
    out, err = capsys.readouterr()
    assert rc == 0
    assert '# softening = 0.0' in out
    assert 'Validation of 2048 particles: PASS' in out

def test_validate_cores(snapshot_file, capsys):
    """
    GIVEN: More cores than the hardware has, with and without --max-cores
    EXPECT: A usage error without it, and a normal run with it
    """
    assert main(['validate', '--ic', str(snapshot_file), '--cores', '65']) == 2
    out, err = capsys.readouterr()
    assert 'cores must be in [1, 64]' in err
    rc = main(['validate', '--ic', str(snapshot_file), '--backend', 'engine',
               '--cores', '65', '--max-cores', '65',
               '--softening', str(SOFTENING)])
    out, err = capsys.readouterr()
    assert rc == 0
    assert '# cores = 65' in out

def test_validate_fails(snapshot_file, tmp_path, capsys):
    """
    GIVEN: A backend whose accelerations are 1% too large
    EXPECT: A failing report and exit code 1
    """
    def perturbed(system, threads, softening):
        golden = brute_force_fp64(system, softening=softening)
        return AccelJerk(golden.ax * 1.01, golden.ay, golden.az,
                         golden.jx, golden.jy, golden.jz, precision='fp32')
    out_path = tmp_path / 'validation.txt'
    with patch('tilenbody.cli.optimized_cpu', side_effect=perturbed):
        rc = main(['validate', '--ic', str(snapshot_file), '--backend', 'cpu_reference',
                   '--softening', str(SOFTENING), '-o', str(out_path)])
    out, err = capsys.readouterr()
    assert rc == 1
    assert 'FAIL' in out
    assert 'FAIL' in out_path.read_text()

def test_validate_missing_ic(capsys):
    "Test a missing --ic is a usage error"
    assert main(['validate', '--backend', 'oracle']) == 2
    out, err = capsys.readouterr()
    assert '--ic is required' in err

def test_validate_unreadable_ic(tmp_path, capsys):
    "Test a snapshot that cannot be read is a runtime error"
    assert main(['validate', '--ic', str(tmp_path / 'missing.txt'), '--backend', 'oracle']) == 3
    out, err = capsys.readouterr()
    assert 'tilenbody error' in err

def test_validate_bad_snapshot(tmp_path, capsys):
    "Test a malformed snapshot is a runtime error"
    path = tmp_path / 'bad.txt'
    path.write_text('1.0 2.0\n')
    assert main(['validate', '--ic', str(path), '--backend', 'oracle']) == 3

def test_config_file(snapshot_file, tmp_path, capsys):
    """
    GIVEN: A config file supplying the snapshot, backend and softening
    EXPECT: validate runs with those settings
    """
    conf = tmp_path / 'tilenbody.conf'
    conf.write_text(
        f"# validation settings\n"
        f"ic = {snapshot_file}\n"
        f"backend = cpu_reference\n"
        f"softening = {SOFTENING}\n")
    # a fresh instance, since config values become parser defaults
    assert CLI()(['validate', '-c', str(conf), '--threads', '1']) == 0
    out, err = capsys.readouterr()
    assert '# backend = cpu_reference' in out
    assert f'# softening = {SOFTENING}' in out

def test_config_file_bad_key(tmp_path, capsys):
    "Test a config file naming an unknown option is a usage error"
    conf = tmp_path / 'tilenbody.conf'
    conf.write_text("warp_factor = 9\n")
    assert CLI()(['validate', '-c', str(conf)]) == 2
    out, err = capsys.readouterr()
    assert 'warp_factor' in err

def test_run(snapshot_file, tmp_path, capsys):
    """
    GIVEN: Two cycles on the FP64 backend with energy diagnostics
    EXPECT: The time and energy drift are printed and the final snapshot written
    """
    out_path = tmp_path / 'final.txt'
    rc = main(['run', '--ic', str(snapshot_file), '--backend', 'oracle', '--cycles', '2',
               '--energy', '-o', str(out_path)])
    out, err = capsys.readouterr()
    assert rc == 0
    assert 'time_to_solution_s = ' in out
    assert 'energy_drift = ' in out
    final = ParticleSystem.from_file(out_path)
    initial = ParticleSystem.from_file(snapshot_file)
    assert final.n == 64
    assert not (final.positions == initial.positions).all()

def test_run_bad_dt(snapshot_file, capsys):
    "Test a non-positive step is a usage error"
    assert main(['run', '--ic', str(snapshot_file), '--dt', '0']) == 2

def test_bench(snapshot_file, tmp_path, capsys):
    """
    GIVEN: One short repeat of the CPU baseline with no sleep
    EXPECT: A summary, a valid report file and a power trace
    """
    report_path = tmp_path / 'cpu.report'
    rc = main(['bench', '--ic', str(snapshot_file), '--backend', 'cpu_reference',
               '--threads', '1', '--cycles', '1', '--repeats', '1', '--sleep-pad', '0',
               '--trace-dir', str(tmp_path / 'traces'), '-o', str(report_path)])
    out, err = capsys.readouterr()
    assert rc == 0
    assert 'time to solution:' in out
    report = BenchReport.from_file(report_path)
    assert report.valid
    assert report.label == 'cpu_reference'
    assert report.sources == ['card0', 'card1', 'card2', 'card3']
    assert (tmp_path / 'traces' / 'cpu_reference_run1.csv').exists()

def test_bench_bad_provider(snapshot_file, capsys):
    "Test an unknown power provider is a usage error"
    assert main(['bench', '--ic', str(snapshot_file), '--provider', 'wattmeter']) == 2

def test_bench_perf_provider(snapshot_file, tmp_path, capsys):
    """
    GIVEN: perf stat interval output as the power source
    EXPECT: A valid report with energy for every perf event
    """
    perf = tmp_path / 'perf.txt'
    perf.write_text(
        "     1.000000000,12.00,Joules,power/energy-pkg/,1000000000,100.00,,\n"
        "     1.000000000,3.00,Joules,power/energy-ram/,1000000000,100.00,,\n"
        "     2.000000000,15.00,Joules,power/energy-pkg/,1000000000,100.00,,\n"
        "     2.000000000,4.00,Joules,power/energy-ram/,1000000000,100.00,,\n")
    report_path = tmp_path / 'cpu.report'
    rc = main(['bench', '--ic', str(snapshot_file), '--backend', 'cpu_reference',
               '--threads', '1', '--cycles', '1', '--repeats', '1', '--sleep-pad', '0',
               '--provider', f'perf:{perf}', '-o', str(report_path)])
    out, err = capsys.readouterr()
    assert rc == 0
    assert f'# provider = perf:{perf}' in out
    report = BenchReport.from_file(report_path)
    assert report.sources == ['perf:energy-pkg', 'perf:energy-ram']
    assert report.values('energy_J')[0] > 0

def test_report(tmp_path, capsys):
    """
    GIVEN: A CPU report and an engine report
    EXPECT: Both summaries, the ratios, a comparison CSV and a histogram CSV
    per report and metric
    """
    cpu = write_report(tmp_path / 'cpu.report', 'cpu', [672.90], [128890.0])
    tt = write_report(tmp_path / 'tt.report', 'tt', [301.2, 301.6], [71000.0, 72000.0])
    out_path = tmp_path / 'cmp.csv'
    assert main(['report', '-i', str(cpu), '-i', str(tt), '-o', str(out_path)]) == 0
    out, err = capsys.readouterr()
    assert 'time to solution: 672.90 ± 0.00 s' in out
    assert 'time to solution: 301.40 ± 0.28 s' in out
    assert 'speedup' in out
    lines = out_path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].startswith('cpu,tt,time_to_solution_s,')
    for label in ('cpu', 'tt'):
        for metric in ('time_to_solution_s', 'energy_J'):
            histogram = tmp_path / f'cmp_{label}_{metric}.csv'
            assert histogram.read_text().startswith('bin_left,bin_right,count')

def test_report_no_inputs(capsys):
    "Test report without any input is a usage error"
    assert main(['report']) == 2
