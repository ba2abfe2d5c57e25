# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import sys
import argparse
import logging
import warnings
from pathlib import Path

from .particles import ParticleSystem
from .initial import ICSpec, generate, MODELS
from .dataflow import CoreGrid, run_engine, HARDWARE_CORES, DEFAULT_WATCHDOG_SECONDS
from .buffers import DEFAULT_CB_CAPACITY
from .oracle import (
    brute_force_fp64, optimized_cpu, validate, ACCEL_TOLERANCE, JERK_TOLERANCE,
)
from .integrator import SimulationConfig, run_simulation, BACKENDS, DEFAULT_DT, DEFAULT_CYCLES
from .power import (
    PowerTrace, SyntheticPowerProvider, ReplayPowerProvider, CounterFilePowerProvider,
    DEFAULT_INTERVAL, DEFAULT_COUNTER_SCALE,
)
from .bench import (
    BenchReport, run_benchmark, compare_reports, emit_histogram, METRICS,
    DEFAULT_SLEEP_PAD,
)
from .config import config_path, load_config, apply_config
from .exc import TileNBodyException, InvalidConfiguration, TileNBodyWarning
from . import __version__


logger = logging.getLogger('tilenbody.cli')
logger.propagate = False
warnings.filterwarnings('ignore', category=TileNBodyWarning)

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    "Raised by a sub-command when its options cannot be acted on"


class CLI:
    def __init__(self):
        self._args = None
        self._commands = None
        self._parser = None

    def __call__(self, args=None):
        if args is None:
            args = sys.argv[1:]
        self._args = self.parser.parse_args(args)
        try:
            path = config_path(getattr(self._args, 'config', None))
            if path and self._args.cmd in self.commands:
                apply_config(self.commands[self._args.cmd], load_config(path))
                self._args = self.parser.parse_args(args)
        except InvalidConfiguration as e:
            sys.stderr.write(f"tilenbody: {e}\n")
            return EXIT_USAGE
        self._configure_logging()
        try:
            return self._args.func()
        except UsageError as e:
            sys.stderr.write(f"tilenbody: {e}\n\n")
            self.commands[self._args.cmd].print_usage(sys.stderr)
            return EXIT_USAGE
        except TileNBodyException as e:
            sys.stderr.write(f"tilenbody error: {e}\n")
            return EXIT_RUNTIME
        except Exception as e:
            sys.stderr.write(f"tilenbody error: {e.__class__.__name__}: {e}\n")
            return EXIT_RUNTIME

    @property
    def parser(self):
        """
        The parser for all the sub-commands that the script accepts. Returns the
        newly constructed argument parser.
        """
        if self._parser is None:
            self._parser, self._commands = self._get_parser()
        return self._parser

    @property
    def commands(self):
        """
        A dictionary mapping command names to their sub-parser.
        """
        if self._commands is None:
            self._parser, self._commands = self._get_parser()
        return self._commands

    def _configure_logging(self):
        verbosity = getattr(self._args, 'verbose', 0) or 0
        level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
        logging.basicConfig(
            level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
        if not logger.handlers:
            logger.addHandler(logging.StreamHandler(sys.stderr))
        logger.setLevel(logging.INFO)

    def _get_parser(self):
        parser = argparse.ArgumentParser(
            description=(
                "tilenbody runs direct N-body gravity simulations on an "
                "emulated tile-based dataflow accelerator"))
        parser.add_argument(
            '--version', action='version', version=__version__)
        parser.set_defaults(cmd=None, func=self.do_help)
        commands = parser.add_subparsers(title=("commands"))

        common = argparse.ArgumentParser(add_help=False)
        common.add_argument(
            "-c", "--config", metavar="path",
            help=(
                "A key = value file of option defaults (default: the file "
                "named by $TILENBODY_CONFIG)")
        )
        common.add_argument(
            "-v", "--verbose", action='count', default=0,
            help=("Log progress (repeat for debug output)")
        )

        ic = argparse.ArgumentParser(add_help=False)
        ic.add_argument(
            "--ic", metavar="path",
            help=("The initial snapshot file or s3:// URI")
        )

        engine = argparse.ArgumentParser(add_help=False)
        engine.add_argument(
            "--backend", choices=BACKENDS, default='engine',
            help=("The force backend (default: %(default)s)")
        )
        engine.add_argument(
            "--cores", metavar="n", type=int, default=HARDWARE_CORES,
            help=("Virtual cores of the engine (default: %(default)s)")
        )
        engine.add_argument(
            "--max-cores", metavar="n", type=int, default=HARDWARE_CORES,
            help=("Upper bound on --cores; raise it to oversubscribe the emulation "
                  "(default: %(default)s)")
        )
        engine.add_argument(
            "--cb-capacity", metavar="tiles", type=int, default=DEFAULT_CB_CAPACITY,
            help=("Circular buffer capacity in tiles (default: %(default)s)")
        )
        engine.add_argument(
            "--watchdog", metavar="seconds", type=float, default=DEFAULT_WATCHDOG_SECONDS,
            help=("Deadlock watchdog timeout (default: %(default)s)")
        )
        engine.add_argument(
            "--threads", metavar="n", type=int, default=None,
            help=("Threads of the cpu_reference backend (default: CPU count)")
        )
        engine.add_argument(
            "--softening", metavar="eps", type=float, default=0.0,
            help=("Plummer softening length (default: %(default)s)")
        )

        steps = argparse.ArgumentParser(add_help=False)
        steps.add_argument(
            "--cycles", metavar="n", type=int, default=DEFAULT_CYCLES,
            help=("Number of time steps (default: %(default)s)")
        )
        steps.add_argument(
            "--dt", metavar="dt", type=float, default=DEFAULT_DT,
            help=("The shared time step (default: %(default)s)")
        )

        help_cmd = commands.add_parser(
            "help",
            description=(
                "With no arguments, displays the list of tilenbody "
                "commands. If a command name is given, displays the "
                "description and options for the named command."),
            help=("Displays help about the specified command"))
        help_cmd.add_argument(
            "cmd", metavar="cmd", nargs='?',
            help=("The name of the command to output help for")
        )
        help_cmd.set_defaults(func=self.do_help)

        generate_cmd = commands.add_parser(
            "generate", parents=[common],
            description=("Generate a seeded initial particle snapshot"),
            help=("Generate initial conditions"))
        generate_cmd.add_argument(
            "--model", choices=[m for m in MODELS if m != 'file'], default='plummer',
            help=("The initial condition model (default: %(default)s)")
        )
        generate_cmd.add_argument(
            "--n", metavar="n", type=int, default=102400,
            help=("Number of particles (default: %(default)s)")
        )
        generate_cmd.add_argument(
            "--seed", metavar="seed", type=int, default=0,
            help=("Seed of the random generator (default: %(default)s)")
        )
        generate_cmd.add_argument(
            "--scale-radius", metavar="r", type=float, default=None,
            help=("Model scale radius (default: the model's own)")
        )
        generate_cmd.add_argument(
            "-o", "--out", metavar="path",
            help=("Write the snapshot here instead of to stdout")
        )
        generate_cmd.set_defaults(cmd='generate', func=self.do_generate)

        run_cmd = commands.add_parser(
            "run", parents=[common, ic, engine, steps],
            description=("Integrate a snapshot forward in time"),
            help=("Run a simulation"))
        run_cmd.add_argument(
            "--snapshot-every", metavar="k", type=int, default=0,
            help=("Write a snapshot every k cycles (default: never)")
        )
        run_cmd.add_argument(
            "--snapshot-prefix", metavar="prefix", default='snapshot',
            help=("Snapshot files are <prefix>_<cycle>.txt (default: %(default)s)")
        )
        run_cmd.add_argument(
            "--energy", action='store_true',
            help=("Report the relative total energy change of the run")
        )
        run_cmd.add_argument(
            "-o", "--out", metavar="path",
            help=("Write the final snapshot here")
        )
        run_cmd.set_defaults(cmd='run', func=self.do_run)

        validate_cmd = commands.add_parser(
            "validate", parents=[common, ic, engine],
            description=(
                "Compare a backend's acceleration and jerk with the FP64 "
                "reference; exits 0 if within tolerance and 1 otherwise"),
            help=("Validate a force backend"))
        validate_cmd.add_argument(
            "--format", choices=('text', 'kv'), default='text',
            help=("Report format (default: %(default)s)")
        )
        validate_cmd.add_argument(
            "-o", "--out", metavar="path",
            help=("Also write the report here")
        )
        validate_cmd.set_defaults(cmd='validate', func=self.do_validate)

        bench_cmd = commands.add_parser(
            "bench", parents=[common, ic, engine, steps],
            description=(
                "Run a simulation repeatedly under power measurement and "
                "report time and energy to solution"),
            help=("Benchmark a backend"))
        bench_cmd.add_argument(
            "--repeats", metavar="n", type=int, default=5,
            help=("Number of repeats (default: %(default)s)")
        )
        bench_cmd.add_argument(
            "--sleep-pad", metavar="seconds", type=float, default=DEFAULT_SLEEP_PAD,
            help=("Idle time before and after each simulation (default: %(default)s)")
        )
        bench_cmd.add_argument(
            "--provider", metavar="spec", default='synthetic',
            help=(
                "Power source: synthetic, replay:FILE, perf:FILE (perf stat -I -x, "
                "output) or counters:PATH[,PATH...] "
                "(default: %(default)s)")
        )
        bench_cmd.add_argument(
            "--interval", metavar="seconds", type=float, default=DEFAULT_INTERVAL,
            help=("Power sampling interval (default: %(default)s)")
        )
        bench_cmd.add_argument(
            "--counter-scale", metavar="joules", type=float, default=DEFAULT_COUNTER_SCALE,
            help=("Joules per energy counter unit (default: %(default)s)")
        )
        bench_cmd.add_argument(
            "--label", metavar="label",
            help=("Name of this configuration in reports (default: the backend)")
        )
        bench_cmd.add_argument(
            "--trace-dir", metavar="dir",
            help=("Write the power trace of every repeat into this directory")
        )
        bench_cmd.add_argument(
            "-o", "--out", metavar="path",
            help=("Write the benchmark report here")
        )
        bench_cmd.set_defaults(cmd='bench', func=self.do_bench)

        report_cmd = commands.add_parser(
            "report", parents=[common],
            description=(
                "Summarise benchmark reports; the first is the reference the "
                "others are compared with"),
            help=("Compare benchmark reports"))
        report_cmd.add_argument(
            "-i", "--in", dest="inputs", metavar="path", action='append',
            help=("A benchmark report (repeat for several)")
        )
        report_cmd.add_argument(
            "-o", "--out", metavar="path",
            help=(
                "Write the comparison CSV here, and histogram CSVs next to it "
                "as <stem>_<label>_<metric>.csv")
        )
        report_cmd.set_defaults(cmd='report', func=self.do_report)

        return parser, commands.choices

    def print_config(self, settings):
        "Print the effective configuration of this invocation"
        print(f"# tilenbody {__version__} {self._args.cmd}")
        for key, value in settings.items():
            print(f"# {key} = {value}")

    def load_system(self):
        if not self._args.ic:
            raise UsageError("--ic is required")
        return ParticleSystem.from_file(self._args.ic)

    def simulation_config(self, **kwargs):
        try:
            return SimulationConfig(
                backend=self._args.backend, softening=self._args.softening,
                cores=self._args.cores, max_cores=self._args.max_cores,
                cb_capacity=self._args.cb_capacity,
                watchdog_seconds=self._args.watchdog, threads=self._args.threads,
                **kwargs)
        except InvalidConfiguration as e:
            raise UsageError(str(e)) from e

    def power_provider(self):
        spec = self._args.provider
        kind, _, arg = spec.partition(':')
        if kind == 'synthetic' and not arg:
            return SyntheticPowerProvider.accelerator_cards()
        if kind == 'replay' and arg:
            return ReplayPowerProvider(PowerTrace.from_file(arg))
        if kind == 'perf' and arg:
            return ReplayPowerProvider(PowerTrace.from_perf_file(arg))
        if kind == 'counters' and arg:
            paths = [p for p in arg.split(',') if p]
            return CounterFilePowerProvider(paths, unit_scale=self._args.counter_scale)
        raise UsageError(
            "--provider must be synthetic, replay:FILE, perf:FILE or "
            f"counters:PATHS, got {spec!r}")

    def do_help(self):
        if self._args.cmd:
            self.parser.parse_args([self._args.cmd, '-h'])
        else:
            self.parser.parse_args(['-h'])

    def do_generate(self):
        try:
            n = 2 if self._args.model == 'two_body_circular' else self._args.n
            spec = ICSpec(self._args.model, n, seed=self._args.seed,
                          scale_radius=self._args.scale_radius)
        except InvalidConfiguration as e:
            raise UsageError(str(e)) from e
        system = generate(spec)
        self.print_config({
            'model': spec.model, 'n': spec.n, 'seed': spec.seed,
            'scale_radius': spec.scale_radius, 'out': self._args.out,
        })
        if self._args.out:
            system.write(self._args.out)
        else:
            sys.stdout.write(system.to_string())
        return EXIT_OK

    def do_run(self):
        system = self.load_system()
        config = self.simulation_config(
            dt=self._args.dt, cycles=self._args.cycles,
            snapshot_every=self._args.snapshot_every,
            snapshot_prefix=self._args.snapshot_prefix,
            energy_diagnostics=self._args.energy)
        self.print_config(dict(config.as_dict(), ic=self._args.ic, n=system.n))
        result = run_simulation(config, system)
        print(f"time_to_solution_s = {result.time_to_solution!r}")
        if result.energy_drift is not None:
            print(f"energy_drift = {result.energy_drift!r}")
        if self._args.out:
            result.system.write(self._args.out)
        return EXIT_OK

    def do_validate(self):
        system = self.load_system()
        config = self.simulation_config()
        self.print_config(dict(
            config.as_dict(), ic=self._args.ic, n=system.n,
            accel_tolerance=ACCEL_TOLERANCE, jerk_tolerance=JERK_TOLERANCE))
        golden = brute_force_fp64(system, softening=config.softening)
        if config.backend == 'engine':
            grid = CoreGrid(config.cores, cb_capacity=config.cb_capacity,
                            watchdog_seconds=config.watchdog_seconds,
                            max_cores=config.max_cores)
            candidate = run_engine(system, grid, softening=config.softening)
        elif config.backend == 'cpu_reference':
            candidate = optimized_cpu(system, config.threads, softening=config.softening)
        else:
            candidate = golden
        report = validate(candidate, golden)
        text = report.to_keyvalue() if self._args.format == 'kv' else f"{report}\n"
        sys.stdout.write(text)
        if self._args.out:
            Path(self._args.out).write_text(text)
        return EXIT_OK if report.passed else EXIT_VALIDATION_FAILED

    def do_bench(self):
        system = self.load_system()
        if self._args.repeats < 1:
            raise UsageError(f"--repeats must be at least 1, got {self._args.repeats}")
        if self._args.sleep_pad < 0 or self._args.interval <= 0:
            raise UsageError("--sleep-pad must be >= 0 and --interval > 0")
        config = self.simulation_config(dt=self._args.dt, cycles=self._args.cycles)
        provider = self.power_provider()
        self.print_config(dict(
            config.as_dict(), ic=self._args.ic, n=system.n, repeats=self._args.repeats,
            sleep_pad=self._args.sleep_pad, provider=self._args.provider,
            interval=self._args.interval))
        report = run_benchmark(
            config, system, repeats=self._args.repeats, provider=provider,
            sleep_pad=self._args.sleep_pad, interval=self._args.interval,
            label=self._args.label, trace_dir=self._args.trace_dir)
        if self._args.out:
            report.write(self._args.out)
        print(report.summary())
        if not report.valid:
            sys.stderr.write(f"tilenbody error: all {report.repeats_requested} repeats failed\n")
            return EXIT_RUNTIME
        return EXIT_OK

    def do_report(self):
        if not self._args.inputs:
            raise UsageError("at least one --in report is required")
        reports = [BenchReport.from_file(path) for path in self._args.inputs]
        for report in reports:
            print(report.summary())
        comparisons = [compare_reports(reports[0], other) for other in reports[1:]]
        for comparison in comparisons:
            print(comparison)
        if self._args.out:
            out = Path(self._args.out)
            if comparisons:
                out.write_text(''.join(
                    c.to_csv() if k == 0 else c.to_csv().split('\n', 1)[1]
                    for k, c in enumerate(comparisons)))
                logger.info("Wrote comparison to %s", out)
            for report in reports:
                if not report.valid:
                    continue
                for metric in METRICS:
                    path = out.with_name(f'{out.stem}_{report.label}_{metric}.csv')
                    path.write_text(emit_histogram(report, metric))
                    logger.info("Wrote histogram to %s", path)
        return EXIT_OK


main = CLI()
