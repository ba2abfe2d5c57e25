# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import logging
import threading
import time
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional

from .particles import ParticleSystem, AccelJerk
from .tiles import TiledParticles, partition_outer
from .buffers import ActivityTracker, CircularBuffer, DEFAULT_CB_CAPACITY
from .kernels import (
    KernelSpec, DstRegister, ResultSink, read_kernel, compute_force_jerk,
    write_kernel, input_cb_names, STAGED, ACCUMULATORS,
)
from .exc import InvalidConfiguration, PipelineFailure, PipelineShutdown, DeadlockDetected


logger = logging.getLogger('tilenbody.dataflow')

#: Tensix cores on one chip
HARDWARE_CORES = 64
DEFAULT_WATCHDOG_SECONDS = 5.0


class CoreStatus(Enum):
    PENDING = 'pending'
    RUNNING = 'running'
    DONE = 'done'
    FAILED = 'failed'
    STOPPED = 'stopped'


class CoreGrid:
    """
    A grid of virtual cores, each running a read, a compute and a write kernel
    connected by circular buffers.

    :type num_cores:
        int
    :param num_cores:
        Number of virtual cores, 1 to *max_cores*

    :type cb_capacity:
        int
    :param cb_capacity:
        Default capacity in tiles of every circular buffer (keyword-only
        argument)

    :type cb_capacities:
        dict
    :param cb_capacities:
        Per-buffer capacity overrides keyed by buffer name, e.g.
        ``{'inner_x': 4, 'ax': 1}`` (keyword-only argument)

    :type watchdog_seconds:
        float
    :param watchdog_seconds:
        How long every kernel must stay blocked before the run is declared
        deadlocked (keyword-only argument)

    :type max_cores:
        int
    :param max_cores:
        Upper bound on *num_cores*; defaults to the 64 cores of the hardware and
        may be raised explicitly to oversubscribe the emulation (keyword-only
        argument)
    """
    def __init__(self, num_cores: int = HARDWARE_CORES, *,
                 cb_capacity: int = DEFAULT_CB_CAPACITY,
                 cb_capacities: Optional[Dict[str, int]] = None,
                 watchdog_seconds: float = DEFAULT_WATCHDOG_SECONDS,
                 max_cores: int = HARDWARE_CORES):
        if not 1 <= num_cores <= max_cores:
            raise InvalidConfiguration(
                f"num_cores must be in [1, {max_cores}], got {num_cores}")
        if cb_capacity < 1:
            raise InvalidConfiguration(f"cb_capacity must be at least 1, got {cb_capacity}")
        if watchdog_seconds <= 0:
            raise InvalidConfiguration(
                f"watchdog_seconds must be positive, got {watchdog_seconds}")
        known = set(input_cb_names()) | set(STAGED) | set(ACCUMULATORS)
        unknown = set(cb_capacities or {}) - known
        if unknown:
            raise InvalidConfiguration(
                f"unknown circular buffer names: {', '.join(sorted(unknown))}")
        self._num_cores = num_cores
        self._cb_capacity = cb_capacity
        self._cb_capacities = dict(cb_capacities or {})
        self._watchdog_seconds = watchdog_seconds

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.num_cores} cores "
            f"cb={self.cb_capacity}>"
        )

    @property
    def num_cores(self) -> int:
        return self._num_cores

    @property
    def cb_capacity(self) -> int:
        return self._cb_capacity

    @property
    def watchdog_seconds(self) -> float:
        return self._watchdog_seconds

    def capacity_for(self, name: str) -> int:
        "The capacity of the circular buffer called *name*"
        return self._cb_capacities.get(name, self._cb_capacity)

    def wire(self, core: int, tracker: Optional[ActivityTracker] = None):
        """
        Build the circular buffers of *core*. Returns ``(inputs, staged,
        outputs)``, three dicts of :class:`~tilenbody.buffers.CircularBuffer`
        keyed by buffer name.
        """
        def make(names):
            return {
                name: CircularBuffer(
                    self.capacity_for(name), name=f'core{core}.{name}', tracker=tracker)
                for name in names
            }
        return make(input_cb_names()), make(STAGED), make(ACCUMULATORS)


class PipelineRun:
    """
    The outcome of :func:`run_pipeline`: per-core status, the aggregated
    result, the elapsed wall time and, for a failed run, the failure.
    """
    def __init__(self, num_cores: int):
        self.statuses = {core: CoreStatus.PENDING for core in range(num_cores)}
        self.result = None
        self.elapsed = 0.0
        self.failure = None
        self.dst_high_water = 0
        self.cb_high_water = {}

    def __repr__(self):
        state = 'failed' if self.failed else 'ok'
        return f"<{self.__class__.__name__} {len(self.statuses)} cores {state}>"

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def raise_for_status(self):
        "Raise the recorded :exc:`~tilenbody.exc.PipelineFailure`, if any"
        if self.failure is not None:
            raise self.failure


class Watchdog:
    """
    Background monitor that declares a deadlock when every live kernel has
    been blocked on a circular buffer, with no progress anywhere, for longer
    than *seconds*. On firing it calls *on_deadlock* with a
    :exc:`~tilenbody.exc.DeadlockDetected` carrying the occupancy of *buffers*.
    """
    def __init__(self, tracker: ActivityTracker, buffers: Iterable[CircularBuffer], *,
                 seconds: float, on_deadlock: Callable[[DeadlockDetected], None]):
        self._tracker = tracker
        self._buffers = list(buffers)
        self._seconds = seconds
        self._on_deadlock = on_deadlock
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name='watchdog', daemon=True)
        self.fired = False

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop.set()
        self._thread.join()

    def _run(self):
        poll = min(0.05, self._seconds / 10)
        since = None
        last_epoch = None
        while not self._stop.wait(poll):
            epoch, stuck = self._tracker.state()
            if not stuck or epoch != last_epoch:
                since = time.monotonic() if stuck else None
                last_epoch = epoch
                continue
            if time.monotonic() - since > self._seconds:
                occupancy = {cb.name: (cb.occupied, cb.capacity) for cb in self._buffers}
                waiting = self._tracker.blocked_activities()
                logger.error("Deadlock: all kernels blocked for over %ss: %s",
                             self._seconds, waiting)
                for name, (occupied, capacity) in occupancy.items():
                    logger.error("  %s %s/%s", name, occupied, capacity)
                self.fired = True
                self._on_deadlock(DeadlockDetected(
                    f"all kernels blocked for over {self._seconds}s "
                    f"({', '.join(f'{k} on {v}' for k, v in sorted(waiting.items()))})",
                    occupancy=occupancy))
                return


def run_pipeline(grid: CoreGrid, inputs: TiledParticles, *,
                 softening: float = 0.0) -> PipelineRun:
    """
    Run the read, compute and write kernels of every core of *grid*
    concurrently over *inputs* and return the :class:`PipelineRun`.

    Each core owns a contiguous range of outer tiles and pairs them with every
    inner tile in ascending order, so per-particle results do not depend on
    the number of cores.
    """
    tile_count = inputs.tile_count
    ranges = partition_outer(tile_count, grid.num_cores)
    tracker = ActivityTracker()
    sink = ResultSink(tile_count)
    run = PipelineRun(grid.num_cores)
    lock = threading.Lock()
    all_buffers: List[CircularBuffer] = []
    registers: List[DstRegister] = []
    threads = []
    remaining = {core: 3 for core in range(grid.num_cores)}
    stopped = set()

    def shutdown_all():
        for cb in all_buffers:
            cb.shutdown()

    def fail(failure: PipelineFailure):
        with lock:
            first = run.failure is None
            if first:
                run.failure = failure
            if failure.core is not None:
                run.statuses[failure.core] = CoreStatus.FAILED
        if first:
            shutdown_all()

    def launch(core: int, stage: str, fn, *args, **kwargs):
        def target():
            tracker.register(f'core{core}.{stage}')
            with lock:
                if run.statuses[core] is CoreStatus.PENDING:
                    run.statuses[core] = CoreStatus.RUNNING
            try:
                fn(*args, **kwargs)
            except PipelineShutdown:
                with lock:
                    stopped.add(core)
            except PipelineFailure as e:
                logger.error("%s kernel on core %s failed: %s", stage, core, e)
                if e.core is None:
                    e.core, e.stage = core, stage
                fail(e)
            except Exception as e:
                logger.error("%s kernel on core %s failed: %s", stage, core, e)
                failure = PipelineFailure(
                    f"{stage} kernel on core {core} failed: {e!r}", core=core, stage=stage)
                failure.__cause__ = e
                fail(failure)
            finally:
                tracker.unregister()
                with lock:
                    remaining[core] -= 1
                    if remaining[core] == 0 and run.statuses[core] is CoreStatus.RUNNING:
                        run.statuses[core] = (
                            CoreStatus.STOPPED if core in stopped else CoreStatus.DONE)
                logger.debug("%s kernel on core %s finished", stage, core)
        threads.append(threading.Thread(target=target, name=f'core{core}.{stage}', daemon=True))

    for core, outer in enumerate(ranges):
        inputs_cbs, staged_cbs, output_cbs = grid.wire(core, tracker)
        all_buffers.extend(inputs_cbs.values())
        all_buffers.extend(staged_cbs.values())
        all_buffers.extend(output_cbs.values())
        dst = DstRegister()
        registers.append(dst)
        common = dict(core=core, outer=outer, inner_tiles=tile_count)
        launch(core, 'read', read_kernel,
               KernelSpec('read', cbs=inputs_cbs, **common), inputs, inputs_cbs)
        launch(core, 'compute', compute_force_jerk,
               KernelSpec('compute', cbs=list(inputs_cbs) + list(staged_cbs) + list(output_cbs),
                          **common),
               inputs_cbs, output_cbs, dst, staged_cbs=staged_cbs, softening=softening)
        launch(core, 'write', write_kernel,
               KernelSpec('write', cbs=output_cbs, **common), output_cbs, sink)

    watchdog = Watchdog(tracker, all_buffers, seconds=grid.watchdog_seconds, on_deadlock=fail)
    logger.info("Running pipeline: %s particles, %s tiles, %s cores",
                inputs.n, tile_count, grid.num_cores)
    start = time.perf_counter()
    watchdog.start()
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    watchdog.stop()
    run.elapsed = time.perf_counter() - start

    run.dst_high_water = max((dst.high_water for dst in registers), default=0)
    run.cb_high_water = {cb.name: cb.max_occupied for cb in all_buffers}
    if run.failure is None and not sink.coverage().all():
        missing = int((~sink.coverage()).sum())
        run.failure = PipelineFailure(f"{missing} result tiles were never written")
    if run.failure is None:
        run.result = sink.to_accel_jerk(inputs.n)
        logger.info("Pipeline finished in %.3fs", run.elapsed)
    else:
        logger.error("Pipeline failed after %.3fs: %s", run.elapsed, run.failure)
    return run


def run_engine(system: ParticleSystem, grid: Optional[CoreGrid] = None, *,
               softening: float = 0.0) -> AccelJerk:
    """
    Tilize *system*, run it through *grid* (a default 64-core grid when not
    given) and return the FP32 acceleration and jerk, raising
    :exc:`~tilenbody.exc.PipelineFailure` if the run fails.
    """
    if grid is None:
        grid = CoreGrid()
    run = run_pipeline(grid, TiledParticles.from_system(system), softening=softening)
    run.raise_for_status()
    return run.result
