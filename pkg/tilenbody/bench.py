# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import configparser
import csv
import io
import logging
import math
import time
import warnings
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .utils import s3
from .particles import ParticleSystem
from .integrator import SimulationConfig, run_simulation
from .power import PowerProvider, PowerSampler, integrate_energy, DEFAULT_INTERVAL
from .exc import InvalidBenchReport, ReportFormatError, BenchRunFailedWarning


logger = logging.getLogger('tilenbody.bench')

DEFAULT_SLEEP_PAD = 120.0
METRICS = ('time_to_solution_s', 'energy_J')


def mean_std(values) -> Tuple[float, float]:
    "Mean and sample standard deviation (0 for a single value)"
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidBenchReport("no successful runs to aggregate")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


class RunRecord:
    """
    The measurements of one benchmark repeat: its time to solution and
    energy to solution per power source, or the error that made it fail.
    """
    def __init__(self, index: int, *, time_to_solution: Optional[float] = None,
                 energy: Optional[Dict[str, float]] = None, energy_total: Optional[float] = None,
                 error: Optional[str] = None):
        self.index = index
        self.time_to_solution = time_to_solution
        self.energy = OrderedDict(energy or {})
        self.energy_total = energy_total
        self.error = error

    def __repr__(self):
        if self.ok:
            return (
                f"<{self.__class__.__name__} {self.index} "
                f"{self.time_to_solution:.3f}s {self.energy_total:.1f}J>"
            )
        return f"<{self.__class__.__name__} {self.index} failed>"

    @property
    def ok(self) -> bool:
        return self.error is None

    def value(self, metric: str) -> float:
        if metric == 'time_to_solution_s':
            return self.time_to_solution
        if metric == 'energy_J':
            return self.energy_total
        raise ValueError(f"unknown metric {metric!r}, expected one of {', '.join(METRICS)}")


class BenchReport:
    """
    The repeats of one benchmark configuration with their mean and standard
    deviation. Failed repeats are kept and counted but excluded from every
    aggregate. A report with no successful repeat is invalid.

    Reports serialise to sectioned ``key = value`` text (:meth:`to_string`);
    :meth:`from_string` recomputes the aggregates and rejects a file whose
    stored aggregates disagree with its runs.
    """
    def __init__(self, *, label: str, backend: str, n: int, repeats_requested: int,
                 runs: Optional[List[RunRecord]] = None, config: Optional[dict] = None):
        self.label = label
        self.backend = backend
        self.n = n
        self.repeats_requested = repeats_requested
        self.runs = list(runs or [])
        self.config = OrderedDict(config or {})

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.label} "
            f"{self.repeats_completed}/{self.repeats_requested} runs>"
        )

    def __str__(self):
        return self.summary()

    def __eq__(self, other):
        if not isinstance(other, BenchReport):
            return NotImplemented
        return self.to_string() == other.to_string()

    @classmethod
    def from_string(cls, report: str):
        """
        Parse report text written by :meth:`to_string`
        """
        parser = _parser()
        try:
            parser.read_string(report)
            head = parser['report']
            runs = []
            for section in parser.sections():
                if not section.startswith('run '):
                    continue
                body = parser[section]
                index = int(section.split()[1])
                if body.get('status') == 'failed':
                    runs.append(RunRecord(index, error=body.get('error', '')))
                    continue
                energy = OrderedDict(
                    (key[len('energy_J.'):], float(value))
                    for key, value in body.items()
                    if key.startswith('energy_J.') and key != 'energy_J.total'
                )
                runs.append(RunRecord(
                    index,
                    time_to_solution=float(body['time_to_solution_s']),
                    energy=energy,
                    energy_total=float(body['energy_J.total'])))
            config = OrderedDict(
                (key[len('config.'):], value)
                for key, value in head.items() if key.startswith('config.'))
            result = cls(
                label=head['label'], backend=head['backend'], n=int(head['n']),
                repeats_requested=int(head['repeats_requested']), runs=runs, config=config)
            stored = dict(parser['aggregate']) if parser.has_section('aggregate') else {}
            completed = int(head['repeats_completed'])
            failed = int(head['repeats_failed'])
        except (configparser.Error, KeyError, ValueError, IndexError) as e:
            raise ReportFormatError(f"malformed benchmark report: {e}") from e
        if (completed, failed) != (result.repeats_completed, result.repeats_failed):
            raise ReportFormatError(
                f"report claims {completed} completed and {failed} failed repeats but "
                f"holds {result.repeats_completed} and {result.repeats_failed}")
        expected = result.aggregates() if result.valid else {}
        if set(stored) != set(expected):
            raise ReportFormatError("aggregate section does not match the run metrics")
        for key, value in expected.items():
            if not math.isclose(float(stored[key]), value, rel_tol=1e-12, abs_tol=1e-12):
                raise ReportFormatError(
                    f"stored aggregate {key} = {stored[key]} but the runs give {value!r}")
        return result

    @classmethod
    def from_file(cls, report_path: Union[Path, str]):
        "Load a report from a file path or ``s3://`` URI"
        logger.info("Reading benchmark report %s", report_path)
        return cls.from_string(s3.read_text(report_path))

    @property
    def completed_runs(self) -> List[RunRecord]:
        return [run for run in self.runs if run.ok]

    @property
    def repeats_completed(self) -> int:
        return len(self.completed_runs)

    @property
    def repeats_failed(self) -> int:
        return len(self.runs) - self.repeats_completed

    @property
    def valid(self) -> bool:
        "``True`` when at least one repeat succeeded"
        return self.repeats_completed > 0

    @property
    def sources(self) -> List[str]:
        sources = OrderedDict()
        for run in self.completed_runs:
            sources.update((s, None) for s in run.energy)
        return list(sources)

    def values(self, metric: str) -> List[float]:
        "The *metric* of every successful run"
        return [run.value(metric) for run in self.completed_runs]

    def mean(self, metric: str) -> float:
        return mean_std(self.values(metric))[0]

    def std(self, metric: str) -> float:
        return mean_std(self.values(metric))[1]

    def aggregates(self) -> Dict[str, float]:
        """
        Mean and standard deviation of each metric and of each source's
        energy, keyed ``<metric>.mean`` and ``<metric>.std``. Raises
        :exc:`~tilenbody.exc.InvalidBenchReport` when no repeat succeeded.
        """
        if not self.valid:
            raise InvalidBenchReport(f"{self.label}: all {len(self.runs)} repeats failed")
        result = OrderedDict()
        columns = [
            ('time_to_solution_s', self.values('time_to_solution_s')),
            ('energy_J.total', self.values('energy_J')),
        ]
        for source in self.sources:
            columns.append((
                f'energy_J.{source}',
                [run.energy.get(source, 0.0) for run in self.completed_runs]))
        for key, values in columns:
            result[f'{key}.mean'], result[f'{key}.std'] = mean_std(values)
        return result

    def summary(self) -> str:
        """
        Human-readable ``mean ± σ`` lines, e.g. ``time to solution: 301.40 ±
        0.24 s``
        """
        lines = [
            f"{self.label} ({self.backend}, n={self.n}): "
            f"{self.repeats_completed} of {self.repeats_requested} repeats completed"
            + (f", {self.repeats_failed} failed" if self.repeats_failed else ''),
        ]
        if not self.valid:
            lines.append("  INVALID: no repeat completed")
            return '\n'.join(lines)
        agg = self.aggregates()
        lines.append(
            f"  time to solution: {agg['time_to_solution_s.mean']:.2f} ± "
            f"{agg['time_to_solution_s.std']:.2f} s")
        lines.append(
            f"  energy to solution: {agg['energy_J.total.mean'] / 1000:.2f} ± "
            f"{agg['energy_J.total.std'] / 1000:.2f} kJ")
        for source in self.sources:
            lines.append(
                f"    {source}: {agg[f'energy_J.{source}.mean'] / 1000:.2f} ± "
                f"{agg[f'energy_J.{source}.std'] / 1000:.2f} kJ")
        return '\n'.join(lines)

    def to_string(self) -> str:
        "The report as sectioned ``key = value`` text"
        parser = _parser()
        head = OrderedDict([
            ('label', self.label),
            ('backend', self.backend),
            ('n', str(self.n)),
            ('repeats_requested', str(self.repeats_requested)),
            ('repeats_completed', str(self.repeats_completed)),
            ('repeats_failed', str(self.repeats_failed)),
            ('valid', str(self.valid).lower()),
        ])
        for key, value in self.config.items():
            head[f'config.{key}'] = str(value)
        parser['report'] = head
        for run in self.runs:
            if run.ok:
                body = OrderedDict([
                    ('status', 'ok'),
                    ('time_to_solution_s', repr(run.time_to_solution)),
                    ('energy_J.total', repr(run.energy_total)),
                ])
                for source, joules in run.energy.items():
                    body[f'energy_J.{source}'] = repr(joules)
            else:
                body = OrderedDict([
                    ('status', 'failed'),
                    ('error', ' '.join(run.error.split())),
                ])
            parser[f'run {run.index}'] = body
        if self.valid:
            parser['aggregate'] = OrderedDict(
                (key, repr(value)) for key, value in self.aggregates().items())
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    def write(self, report_path: Union[Path, str]):
        logger.info("Writing benchmark report to %s", report_path)
        Path(report_path).write_text(self.to_string())


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(delimiters=('=', ), interpolation=None)
    parser.optionxform = str
    return parser


def format_ratio(ratio: float) -> str:
    "A ratio in the ``2.23×`` style"
    return f"{ratio:.2f}×"


class Comparison:
    """
    How a *candidate* benchmark compares with a *reference*: the speedup
    (reference mean time over candidate mean time) and the energy ratio
    (reference mean energy over candidate mean energy).
    """
    def __init__(self, reference: BenchReport, candidate: BenchReport):
        self.reference = reference
        self.candidate = candidate

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.candidate.label} vs "
            f"{self.reference.label}>"
        )

    def __str__(self):
        return '\n'.join([
            f"{self.candidate.label} vs {self.reference.label}:",
            f"  speedup {format_ratio(self.speedup)}",
            f"  energy ratio {format_ratio(self.energy_ratio)}",
        ])

    @property
    def speedup(self) -> float:
        return self.reference.mean('time_to_solution_s') / self.candidate.mean('time_to_solution_s')

    @property
    def energy_ratio(self) -> float:
        return self.reference.mean('energy_J') / self.candidate.mean('energy_J')

    def to_csv(self) -> str:
        """
        The comparison as CSV: one row per metric with both labels, both
        means and standard deviations, and the ratio
        """
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(('reference', 'candidate', 'metric', 'reference_mean',
                         'reference_std', 'candidate_mean', 'candidate_std', 'ratio'))
        for metric, ratio in (('time_to_solution_s', self.speedup),
                              ('energy_J', self.energy_ratio)):
            writer.writerow((
                self.reference.label, self.candidate.label, metric,
                repr(self.reference.mean(metric)), repr(self.reference.std(metric)),
                repr(self.candidate.mean(metric)), repr(self.candidate.std(metric)),
                repr(ratio),
            ))
        return out.getvalue()


def compare_reports(reference: BenchReport, candidate: BenchReport) -> Comparison:
    """
    Compare *candidate* against *reference*. Both must be valid.
    """
    for report in (reference, candidate):
        if not report.valid:
            raise InvalidBenchReport(f"{report.label}: no repeat completed")
    return Comparison(reference, candidate)


def emit_histogram(report: BenchReport, metric: str = 'time_to_solution_s',
                   bins: Optional[int] = None) -> str:
    """
    Histogram of *metric* over the successful runs of *report* as CSV:
    ``bin_left,bin_right,count`` rows, then a ``mean`` marker row holding the
    mean. The bin count defaults to ``ceil(sqrt(runs))``.
    """
    values = report.values(metric)
    if not values:
        raise InvalidBenchReport(f"{report.label}: no repeat completed")
    if bins is None:
        bins = math.ceil(math.sqrt(len(values)))
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(('bin_left', 'bin_right', 'count'))
    for left, right, count in zip(edges[:-1], edges[1:], counts):
        writer.writerow((repr(float(left)), repr(float(right)), int(count)))
    writer.writerow(('mean', repr(float(np.mean(values))), ''))
    return out.getvalue()


def run_benchmark(config: SimulationConfig, system: ParticleSystem, *, repeats: int,
                  provider: PowerProvider, sleep_pad: float = DEFAULT_SLEEP_PAD,
                  interval: float = DEFAULT_INTERVAL, label: Optional[str] = None,
                  trace_dir: Optional[Union[Path, str]] = None,
                  sleep: Callable[[float], None] = time.sleep,
                  clock: Callable[[], float] = time.monotonic,
                  simulate: Callable = run_simulation) -> BenchReport:
    """
    Run the simulation described by *config* *repeats* times under power
    measurement and return the :class:`BenchReport`.

    Each repeat starts a :class:`~tilenbody.power.PowerSampler`, sleeps
    *sleep_pad* seconds, runs the simulation between a start and an end
    marker, sleeps *sleep_pad* seconds again and stops the sampler. Time to
    solution is the marker difference and energy is integrated between the
    markers only, so the sleeps never count. A repeat that fails is recorded,
    warned about and left out of the aggregates.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    if sleep_pad < 0:
        raise ValueError(f"sleep_pad must be zero or more, got {sleep_pad}")
    label = label or config.backend
    report = BenchReport(
        label=label, backend=config.backend, n=system.n, repeats_requested=repeats,
        config=dict(config.as_dict(), sleep_pad=sleep_pad, interval=interval))
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)

    for index in range(1, repeats + 1):
        logger.info("%s: repeat %s of %s", label, index, repeats)
        sampler = PowerSampler(provider, interval, clock=clock)

        def on_start():
            provider.set_active(True)
            sampler.sample_now()

        def on_end():
            sampler.sample_now()
            provider.set_active(False)

        sampler.start()
        try:
            sleep(sleep_pad)
            result = simulate(config, system, clock=clock, on_start=on_start, on_end=on_end)
            sleep(sleep_pad)
            trace = sampler.stop()
            trace.set_markers(result.start, result.end)
            energy = integrate_energy(trace)
        except Exception as e:
            provider.set_active(False)
            sampler.stop()
            msg = f"{label}: repeat {index} failed: {e}"
            logger.warning(msg)
            warnings.warn(msg, BenchRunFailedWarning)
            report.runs.append(RunRecord(index, error=f"{e.__class__.__name__}: {e}"))
            continue
        if trace_dir is not None:
            trace.write(Path(trace_dir) / f'{label}_run{index}.csv')
        record = RunRecord(
            index, time_to_solution=result.time_to_solution,
            energy=energy.per_source, energy_total=energy.total)
        logger.info("%s: repeat %s took %.3fs and %.1fJ", label, index,
                    record.time_to_solution, record.energy_total)
        report.runs.append(record)

    if not report.valid:
        logger.error("%s: all %s repeats failed", label, repeats)
    return report
