# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import csv
import io
import logging
import threading
import time
import warnings
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from dateutil.parser import parse

from .utils import s3
from .exc import (
    PowerProviderError, InsufficientPowerData, TraceFormatError,
    PowerSampleSkippedWarning, CounterWrapWarning,
)


logger = logging.getLogger('tilenbody.power')

TRACE_HEADER = ('timestamp_s', 'source_id', 'watts')
#: Sources carried in traces but left out of energy-to-solution totals
EXCLUDED_PREFIXES = ('ipmi', )
DEFAULT_INTERVAL = 1.0
#: Default counter unit: microjoules per count
DEFAULT_COUNTER_SCALE = 1e-6


class PowerSample(NamedTuple):
    "One power reading: when it was taken, which source, and how many watts"
    timestamp: float
    source_id: str
    watts: float


def _parse_timestamp(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        return parse(value).timestamp()


class PowerTrace:
    """
    An ordered record of :class:`PowerSample` readings from any number of
    sources, with optional start and end markers for the simulation window.
    Watts must be non-negative and each source's timestamps non-decreasing.
    """
    def __init__(self, samples: Iterable[PowerSample] = (), *,
                 start: Optional[float] = None, end: Optional[float] = None):
        self._lock = threading.Lock()
        self._samples: List[PowerSample] = []
        self._by_source: Dict[str, List[PowerSample]] = OrderedDict()
        for sample in samples:
            self.append(sample)
        self._start = None
        self._end = None
        if start is not None or end is not None:
            self.set_markers(start, end)

    @classmethod
    def from_string(cls, trace_csv: str):
        """
        Parse the CSV text of a trace. The header ``timestamp_s,source_id,watts``
        is required; lines starting with ``#`` are comments, except
        ``# marker start <t>`` and ``# marker end <t>`` which restore the
        markers. Timestamps are seconds, or wall-clock date-times converted to
        POSIX seconds.
        """
        markers = {}
        rows = []
        for line in trace_csv.splitlines():
            stripped = line.strip()
            if stripped.startswith('#'):
                words = stripped.lstrip('#').split()
                if len(words) == 3 and words[0] == 'marker' and words[1] in ('start', 'end'):
                    markers[words[1]] = float(words[2])
                continue
            if stripped:
                rows.append(stripped)
        reader = csv.reader(rows)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
            raise TraceFormatError(
                f"power trace must start with the header {','.join(TRACE_HEADER)}")
        trace = cls()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise TraceFormatError(f"row {lineno} has {len(row)} fields, expected 3")
            try:
                sample = PowerSample(
                    _parse_timestamp(row[0].strip()), row[1].strip(), float(row[2]))
            except (ValueError, OverflowError) as e:
                raise TraceFormatError(f"row {lineno}: {e}") from e
            try:
                trace.append(sample)
            except ValueError as e:
                raise TraceFormatError(f"row {lineno}: {e}") from e
        if markers:
            trace.set_markers(markers.get('start'), markers.get('end'))
        return trace

    @classmethod
    def from_file(cls, trace_path: Union[Path, str]):
        """
        Load a trace CSV from a file path or ``s3://`` URI
        """
        logger.info("Reading power trace %s", trace_path)
        return cls.from_string(s3.read_text(trace_path))

    @classmethod
    def from_s3(cls, bucket_name: str, trace_key: str):
        "Load a trace CSV from an S3 bucket"
        return cls.from_string(s3.get_file_contents(bucket_name, trace_key))

    @classmethod
    def from_perf_stat(cls, perf_output: str):
        """
        Build a trace from the output of ``perf stat -I <ms> -x,`` with energy
        events such as ``power/energy-pkg/``. Each interval's energy in joules
        divided by its length gives the average power, recorded at the start
        of the interval; a closing sample at the last timestamp ends the trace.
        Source ids are ``perf:<event>``.
        """
        intervals: Dict[str, List[Tuple[float, float]]] = OrderedDict()
        for line in perf_output.splitlines():
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            fields = [f.strip() for f in line.split(',')]
            if len(fields) < 4:
                raise TraceFormatError(f"not perf stat -x, interval output: {line!r}")
            try:
                t = float(fields[0])
            except ValueError as e:
                raise TraceFormatError(f"bad interval timestamp in {line!r}") from e
            value, unit, event = fields[1], fields[2], fields[3]
            if value.startswith('<'):
                logger.warning("Skipping %s at %s: %s", event, t, value)
                continue
            try:
                joules = float(value)
            except ValueError as e:
                raise TraceFormatError(f"bad counter value in {line!r}") from e
            if unit and unit.lower() not in ('joules', 'j'):
                raise TraceFormatError(f"{event} is in {unit}, expected Joules")
            source = 'perf:' + event.strip('/').split('/')[-1]
            intervals.setdefault(source, []).append((t, joules))
        trace = cls()
        samples = []
        for source, readings in intervals.items():
            previous = 0.0
            for t, joules in readings:
                if t <= previous:
                    raise TraceFormatError(f"{source}: interval timestamps must increase")
                samples.append(PowerSample(previous, source, joules / (t - previous)))
                previous = t
            samples.append(PowerSample(previous, source, samples[-1].watts))
        for sample in sorted(samples, key=lambda s: s.timestamp):
            trace.append(sample)
        return trace

    @classmethod
    def from_perf_file(cls, perf_path: Union[Path, str]):
        "Load ``perf stat`` interval output from a file path or ``s3://`` URI"
        logger.info("Reading perf stat output %s", perf_path)
        return cls.from_perf_stat(s3.read_text(perf_path))

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {len(self)} samples, "
            f"{len(self.sources)} sources>"
        )

    def __len__(self):
        return len(self._samples)

    def __iter__(self):
        return iter(self.samples)

    def append(self, sample: PowerSample):
        """
        Add *sample* to the trace.
        """
        if not (np.isfinite(sample.watts) and sample.watts >= 0):
            raise ValueError(f"{sample.source_id}: watts must be finite and >= 0, "
                             f"got {sample.watts}")
        with self._lock:
            per_source = self._by_source.setdefault(sample.source_id, [])
            if per_source and sample.timestamp < per_source[-1].timestamp:
                raise ValueError(
                    f"{sample.source_id}: timestamp {sample.timestamp} is earlier "
                    f"than {per_source[-1].timestamp}")
            per_source.append(sample)
            self._samples.append(sample)

    @property
    def samples(self) -> List[PowerSample]:
        "Every sample in the order appended"
        with self._lock:
            return list(self._samples)

    @property
    def sources(self) -> List[str]:
        with self._lock:
            return list(self._by_source)

    def samples_for(self, source_id: str) -> Tuple[np.ndarray, np.ndarray]:
        "The ``(timestamps, watts)`` arrays of one source"
        with self._lock:
            samples = list(self._by_source.get(source_id, ()))
        return (
            np.array([s.timestamp for s in samples], dtype=np.float64),
            np.array([s.watts for s in samples], dtype=np.float64),
        )

    @property
    def span(self) -> Tuple[float, float]:
        "The earliest and latest timestamps in the trace"
        samples = self.samples
        if not samples:
            raise InsufficientPowerData("the trace is empty")
        times = [s.timestamp for s in samples]
        return min(times), max(times)

    @property
    def start(self) -> Optional[float]:
        "The simulation start marker"
        return self._start

    @property
    def end(self) -> Optional[float]:
        "The simulation end marker"
        return self._end

    def set_markers(self, start: Optional[float], end: Optional[float]):
        """
        Record the simulation window. Markers must lie within the span of the
        trace, with the start no later than the end.
        """
        lo, hi = self.span
        for name, value in (('start', start), ('end', end)):
            if value is not None and not lo <= value <= hi:
                raise ValueError(f"{name} marker {value} lies outside the trace [{lo}, {hi}]")
        if start is not None and end is not None and start > end:
            raise ValueError(f"start marker {start} is after end marker {end}")
        self._start = start
        self._end = end

    def scaled(self, factor: float) -> 'PowerTrace':
        "A copy of the trace with every reading multiplied by *factor*"
        trace = self.__class__(
            PowerSample(s.timestamp, s.source_id, s.watts * factor) for s in self.samples)
        trace._start, trace._end = self._start, self._end
        return trace

    def to_string(self) -> str:
        "The trace as CSV text, markers included as comments"
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(TRACE_HEADER)
        for s in self.samples:
            writer.writerow((repr(s.timestamp), s.source_id, repr(s.watts)))
        if self._start is not None:
            out.write(f"# marker start {self._start!r}\n")
        if self._end is not None:
            out.write(f"# marker end {self._end!r}\n")
        return out.getvalue()

    def write(self, trace_path: Union[Path, str]):
        logger.info("Writing power trace to %s", trace_path)
        Path(trace_path).write_text(self.to_string())


# -- providers ----------------------------------------------------------------

class PowerProvider:
    """
    Base class of the power sources polled by :func:`sample_power`.
    :meth:`read` returns ``(source_id, watts)`` pairs for the sampling time
    *now*, or raises :exc:`~tilenbody.exc.PowerProviderError`. A reading
    that describes an earlier moment is returned as a :class:`PowerSample`
    carrying its own timestamp.
    """
    def read(self, now: float) -> List[Union[Tuple[str, float], PowerSample]]:
        raise NotImplementedError

    def reset(self):
        "Told when a new measurement starts"

    def set_active(self, active: bool):
        "Told when the simulation under measurement starts and stops"


class SyntheticPowerProvider(PowerProvider):
    """
    Deterministic synthetic readings. Every source has an idle and an active
    level; readings are the current level plus uniform jitter of half-width
    *jitter* drawn from a seeded generator.

    The generator is reseeded from the seed, the measurement count and the
    phase whenever a measurement starts (:meth:`reset`) or the activity
    changes, so the readings of a phase do not depend on how many samples
    came before it.

    :type levels:
        dict
    :param levels:
        Maps source ids to ``(idle_watts, active_watts)``
    """
    def __init__(self, levels: Dict[str, Tuple[float, float]], *, jitter: float = 0.0,
                 seed: int = 0, active: bool = False):
        if not levels:
            raise ValueError("a synthetic provider needs at least one source")
        self._levels = OrderedDict(levels)
        self._jitter = jitter
        self._seed = seed
        self._measurement = 0
        self._phase = 0
        self._rng = None
        self._reseed()
        self._active = active

    @classmethod
    def constant(cls, watts: float, source_id: str = 'synthetic'):
        "A single source reading *watts* whatever the activity"
        return cls({source_id: (watts, watts)})

    @classmethod
    def accelerator_cards(cls, cards: int = 4, *, active_card: int = 0, seed: int = 0):
        """
        A host with *cards* accelerator cards: all idle at 10-11 W, the card
        running the simulation at 26-33 W while active and the unused cards
        under 20 W.
        """
        levels = OrderedDict()
        for card in range(cards):
            active = 29.5 if card == active_card else 16.0
            levels[f'card{card}'] = (10.5, active)
        return cls(levels, jitter=0.5, seed=seed)

    def __repr__(self):
        return f"<{self.__class__.__name__} {', '.join(self._levels)}>"

    def _reseed(self):
        self._rng = np.random.Generator(
            np.random.Philox([self._seed, self._measurement, self._phase]))

    def reset(self):
        self._measurement += 1
        self._phase = 0
        self._reseed()

    def set_active(self, active: bool):
        self._active = active
        self._phase += 1
        self._reseed()

    def read(self, now: float) -> List[Tuple[str, float]]:
        readings = []
        for source, (idle, active) in self._levels.items():
            watts = active if self._active else idle
            if self._jitter:
                watts += self._jitter * (2.0 * self._rng.random() - 1.0)
            readings.append((source, max(watts, 0.0)))
        return readings


class ReplayPowerProvider(PowerProvider):
    """
    Replays a recorded :class:`PowerTrace`. The first :meth:`read` of each
    measurement is aligned with the first sample of the trace; later reads
    return, per source, the latest recorded value at the same offset into the
    trace.
    """
    def __init__(self, trace: PowerTrace):
        if not len(trace):
            raise ValueError("cannot replay an empty trace")
        self._trace = trace
        self._origin = None
        self._series = {source: trace.samples_for(source) for source in trace.sources}
        self._trace_start = trace.span[0]

    @classmethod
    def from_file(cls, trace_path: Union[Path, str]):
        return cls(PowerTrace.from_file(trace_path))

    def __repr__(self):
        return f"<{self.__class__.__name__} {self._trace!r}>"

    def replay(self) -> List[PowerSample]:
        "The recorded samples, exactly as loaded"
        return self._trace.samples

    def reset(self):
        self._origin = None

    def read(self, now: float) -> List[Tuple[str, float]]:
        if self._origin is None:
            self._origin = now
        t = self._trace_start + (now - self._origin)
        readings = []
        for source, (times, watts) in self._series.items():
            k = max(int(np.searchsorted(times, t, side='right')) - 1, 0)
            readings.append((source, float(watts[k])))
        return readings


class CounterFilePowerProvider(PowerProvider):
    """
    Derives power from monotonically increasing energy counter files such as
    ``/sys/class/powercap/intel-rapl:0/energy_uj``: the counter increase
    between two reads, times *unit_scale* joules per count, divided by the
    time between the reads. That average is stamped with the time of the
    earlier read, so it holds over the interval it was measured on. The first
    read of each file in a measurement only sets its baseline. A counter that
    went backwards has wrapped; that interval is discarded with a
    :class:`~tilenbody.exc.CounterWrapWarning`.

    :type paths:
        list or dict
    :param paths:
        Counter file paths, or a mapping of source id to path

    :type unit_scale:
        float
    :param unit_scale:
        Joules per counter unit (default ``1e-6``, microjoules)
    """
    def __init__(self, paths, *, unit_scale: float = DEFAULT_COUNTER_SCALE):
        if isinstance(paths, dict):
            self._paths = OrderedDict((source, Path(p)) for source, p in paths.items())
        else:
            self._paths = OrderedDict((f'counter:{p}', Path(p)) for p in paths)
        if not self._paths:
            raise ValueError("a counter provider needs at least one counter file")
        if unit_scale <= 0:
            raise ValueError(f"unit_scale must be positive, got {unit_scale}")
        self._scale = unit_scale
        self._last = {}

    def __repr__(self):
        return f"<{self.__class__.__name__} {', '.join(self._paths)}>"

    def _read_counter(self, path: Path) -> int:
        try:
            return int(path.read_text().strip())
        except (OSError, ValueError) as e:
            raise PowerProviderError(f"cannot read energy counter {path}: {e}") from e

    def reset(self):
        self._last.clear()

    def read(self, now: float) -> List[PowerSample]:
        counts = {source: self._read_counter(path) for source, path in self._paths.items()}
        readings = []
        for source, count in counts.items():
            last = self._last.get(source)
            self._last[source] = (now, count)
            if last is None:
                continue
            then, previous = last
            if count < previous:
                msg = f"{source}: energy counter wrapped ({previous} -> {count}), interval discarded"
                logger.warning(msg)
                warnings.warn(msg, CounterWrapWarning)
                continue
            if now <= then:
                continue
            readings.append(
                PowerSample(then, source, (count - previous) * self._scale / (now - then)))
        return readings


# -- sampling -----------------------------------------------------------------

def take_sample(provider: PowerProvider, trace: PowerTrace,
                clock: Callable[[], float] = time.monotonic) -> int:
    """
    Read *provider* once and append its readings to *trace*, stamped with the
    time of the read unless the provider returned a :class:`PowerSample` with
    its own. A failed read is logged, warned about and skipped. Returns the
    number of samples appended.
    """
    now = clock()
    try:
        readings = provider.read(now)
    except PowerProviderError as e:
        msg = f"power sample at {now:.3f} skipped: {e}"
        logger.warning(msg)
        warnings.warn(msg, PowerSampleSkippedWarning)
        return 0
    for reading in readings:
        if not isinstance(reading, PowerSample):
            reading = PowerSample(now, *reading)
        trace.append(reading)
    logger.debug("Sampled %s sources at %.3f", len(readings), now)
    return len(readings)


def sample_power(provider: PowerProvider, interval: float, stop: threading.Event, *,
                 trace: Optional[PowerTrace] = None,
                 clock: Callable[[], float] = time.monotonic,
                 wait: Optional[Callable[[float], bool]] = None,
                 after_sample: Optional[Callable[[], None]] = None) -> PowerTrace:
    """
    Sample *provider* every *interval* seconds until *stop* is set, and return
    the trace. Timestamps record the actual sampling times.

    *wait* is called with the interval between samples and returns ``True``
    once sampling should stop; it defaults to ``stop.wait``.
    """
    if interval <= 0:
        raise ValueError(f"interval must be positive, got {interval}")
    if trace is None:
        trace = PowerTrace()
    if wait is None:
        wait = stop.wait
    while not stop.is_set():
        take_sample(provider, trace, clock)
        if after_sample is not None:
            after_sample()
        if wait(interval):
            break
    return trace


class PowerSampler:
    """
    Runs :func:`sample_power` on a background thread, never on the thread
    of the simulation being measured. :meth:`sample_now` makes the sampler
    take an extra sample right away and waits until it has; the benchmark
    harness uses it to place samples immediately before and after the
    simulation window.

    Starting the sampler resets the provider and returns once the first
    sample is in the trace; stopping it takes one closing sample.
    """
    def __init__(self, provider: PowerProvider, interval: float = DEFAULT_INTERVAL, *,
                 clock: Callable[[], float] = time.monotonic):
        self.provider = provider
        self.interval = interval
        self.trace = PowerTrace()
        self._clock = clock
        self._stop = threading.Event()
        self._wake = threading.Event()
        self._cond = threading.Condition()
        self._requested = 0
        self._serving = 0
        self._served = 0
        self._first = threading.Event()
        self._thread = None

    def __repr__(self):
        state = 'running' if self.running else 'stopped'
        return f"<{self.__class__.__name__} {self.provider!r} {state}>"

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def _wait(self, interval: float) -> bool:
        self._wake.wait(interval)
        self._wake.clear()
        with self._cond:
            self._serving = self._requested
        return self._stop.is_set()

    def _after_sample(self):
        with self._cond:
            self._served = self._serving
            self._cond.notify_all()
        self._first.set()

    def _run(self):
        try:
            sample_power(self.provider, self.interval, self._stop, trace=self.trace,
                         clock=self._clock, wait=self._wait,
                         after_sample=self._after_sample)
            take_sample(self.provider, self.trace, self._clock)
        finally:
            self._first.set()
            with self._cond:
                self._cond.notify_all()

    def start(self):
        if self.running:
            raise RuntimeError("the sampler is already running")
        self._stop.clear()
        self._first.clear()
        self.provider.reset()
        self._thread = threading.Thread(target=self._run, name='power-sampler', daemon=True)
        self._thread.start()
        self._first.wait()
        logger.debug("Power sampler started, interval %ss", self.interval)

    def sample_now(self, timeout: Optional[float] = None) -> bool:
        """
        Ask the sampler thread for an immediate sample and block until it has
        been taken. Returns ``False`` if the sampler stopped or *timeout*
        expired first.
        """
        if not self.running:
            raise RuntimeError("the sampler is not running")
        with self._cond:
            self._requested += 1
            ticket = self._requested
            self._wake.set()
            return self._cond.wait_for(
                lambda: self._served >= ticket or not self.running, timeout=timeout
            ) and self._served >= ticket

    def stop(self) -> PowerTrace:
        "Stop sampling and return the trace"
        self._stop.set()
        self._wake.set()
        if self._thread is not None:
            self._thread.join()
        logger.debug("Power sampler stopped with %s samples", len(self.trace))
        return self.trace

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()


# -- energy -------------------------------------------------------------------

class EnergyToSolution:
    """
    Energy per source over one window, in joules. :attr:`total` sums every
    source except whole-server (``ipmi``) readings.
    """
    def __init__(self, per_source: Dict[str, float]):
        self.per_source = OrderedDict(per_source)

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.total:.1f} J>"

    def __getitem__(self, source_id: str) -> float:
        return self.per_source[source_id]

    @property
    def counted_sources(self) -> List[str]:
        return [s for s in self.per_source if not s.startswith(EXCLUDED_PREFIXES)]

    @property
    def total(self) -> float:
        return float(sum(self.per_source[s] for s in self.counted_sources))


def integrate_energy(trace: PowerTrace, window: Optional[Tuple[float, float]] = None, *,
                     sources: Optional[Iterable[str]] = None) -> EnergyToSolution:
    """
    Integrate power over *window* (the trace markers by default) with the
    left-point rectangle rule: each sample's watts hold until the next sample
    of its source, and only the part of each interval inside the window
    counts. Nothing is extrapolated past a source's last sample.

    Raises :exc:`~tilenbody.exc.InsufficientPowerData` when fewer than two
    samples of a source bracket or fall inside the window, or when a source's
    samples do not cover it.
    """
    if window is None:
        window = (trace.start, trace.end)
    start, end = window
    if start is None or end is None:
        raise InsufficientPowerData("the trace has no simulation window markers")
    if start > end:
        raise ValueError(f"window start {start} is after its end {end}")
    per_source = OrderedDict()
    for source in (trace.sources if sources is None else sources):
        times, watts = trace.samples_for(source)
        if times.size == 0 or times[0] > start or times[-1] < end:
            raise InsufficientPowerData(
                f"{source}: samples do not cover the window [{start}, {end}]")
        first = int(np.searchsorted(times, start, side='right')) - 1
        last = int(np.searchsorted(times, end, side='left'))
        if last - first + 1 < 2:
            raise InsufficientPowerData(
                f"{source}: fewer than two samples bracket the window [{start}, {end}]")
        left = np.maximum(times[:-1], start)
        right = np.minimum(times[1:], end)
        overlap = np.clip(right - left, 0.0, None)
        per_source[source] = float(np.sum(watts[:-1] * overlap))
    return EnergyToSolution(per_source)
