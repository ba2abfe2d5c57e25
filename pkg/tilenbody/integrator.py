# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import logging
import math
import time
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .particles import ParticleSystem, AccelJerk
from .dataflow import CoreGrid, run_engine, HARDWARE_CORES, DEFAULT_WATCHDOG_SECONDS
from .buffers import DEFAULT_CB_CAPACITY
from .oracle import brute_force_fp64, optimized_cpu
from .exc import InvalidConfiguration, IntegrationError, BackendFailure


logger = logging.getLogger('tilenbody.integrator')

BACKENDS = ('engine', 'cpu_reference', 'oracle')
DEFAULT_DT = 2 ** -6
DEFAULT_CYCLES = 10

AccelJerkProvider = Callable[[ParticleSystem], AccelJerk]


class SimulationConfig:
    """
    Settings for :func:`run_simulation`.

    :type dt:
        float
    :param dt:
        The shared time step, strictly positive

    :type cycles:
        int
    :param cycles:
        Number of time steps, at least 1

    :type backend:
        str
    :param backend:
        ``engine`` (the emulated accelerator), ``cpu_reference`` (the FP32
        CPU baseline) or ``oracle`` (the FP64 reference)

    :type softening:
        float
    :param softening:
        Plummer softening length, zero or more

    :type cores:
        int
    :param cores:
        Virtual cores of the engine backend

    :type max_cores:
        int
    :param max_cores:
        Upper bound on *cores*; raise it above the 64 cores of the hardware to
        oversubscribe the emulation

    :type cb_capacity:
        int
    :param cb_capacity:
        Circular buffer capacity of the engine backend

    :type watchdog_seconds:
        float
    :param watchdog_seconds:
        Deadlock watchdog of the engine backend

    :type threads:
        int
    :param threads:
        Worker threads of the ``cpu_reference`` backend (``None`` for the CPU
        count)

    :type snapshot_every:
        int
    :param snapshot_every:
        Write a snapshot every this many cycles (0 to disable)

    :type snapshot_prefix:
        str
    :param snapshot_prefix:
        Snapshot file names are ``<prefix>_<cycle>.txt``

    :type energy_diagnostics:
        bool
    :param energy_diagnostics:
        Compute the FP64 total energy before and after the run
    """
    def __init__(self, *, dt: float = DEFAULT_DT, cycles: int = DEFAULT_CYCLES,
                 backend: str = 'engine', softening: float = 0.0,
                 cores: int = HARDWARE_CORES, max_cores: int = HARDWARE_CORES,
                 cb_capacity: int = DEFAULT_CB_CAPACITY,
                 watchdog_seconds: float = DEFAULT_WATCHDOG_SECONDS,
                 threads: Optional[int] = None, snapshot_every: int = 0,
                 snapshot_prefix: str = 'snapshot', energy_diagnostics: bool = False):
        if not (math.isfinite(dt) and dt > 0):
            raise InvalidConfiguration(f"dt must be finite and positive, got {dt}")
        if cycles < 1:
            raise InvalidConfiguration(f"cycles must be at least 1, got {cycles}")
        if backend not in BACKENDS:
            raise InvalidConfiguration(
                f"backend must be one of {', '.join(BACKENDS)}, got {backend!r}")
        if not (math.isfinite(softening) and softening >= 0):
            raise InvalidConfiguration(f"softening must be finite and >= 0, got {softening}")
        if snapshot_every < 0:
            raise InvalidConfiguration(
                f"snapshot_every must be zero or more, got {snapshot_every}")
        if threads is not None and threads < 1:
            raise InvalidConfiguration(f"threads must be at least 1, got {threads}")
        if not 1 <= cores <= max_cores:
            raise InvalidConfiguration(f"cores must be in [1, {max_cores}], got {cores}")
        if cb_capacity < 1:
            raise InvalidConfiguration(f"cb_capacity must be at least 1, got {cb_capacity}")
        if not watchdog_seconds > 0:
            raise InvalidConfiguration(
                f"watchdog_seconds must be positive, got {watchdog_seconds}")
        self.dt = dt
        self.cycles = cycles
        self.backend = backend
        self.softening = softening
        self.cores = cores
        self.max_cores = max_cores
        self.cb_capacity = cb_capacity
        self.watchdog_seconds = watchdog_seconds
        self.threads = threads
        self.snapshot_every = snapshot_every
        self.snapshot_prefix = snapshot_prefix
        self.energy_diagnostics = energy_diagnostics

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.backend} "
            f"dt={self.dt} cycles={self.cycles}>"
        )

    def as_dict(self) -> dict:
        "The effective settings, for logs and reports"
        return {
            'dt': self.dt,
            'cycles': self.cycles,
            'backend': self.backend,
            'softening': self.softening,
            'cores': self.cores,
            'max_cores': self.max_cores,
            'cb_capacity': self.cb_capacity,
            'watchdog_seconds': self.watchdog_seconds,
            'threads': self.threads,
        }


def make_provider(config: SimulationConfig) -> AccelJerkProvider:
    """
    Return the acceleration and jerk provider for the backend named in
    *config*.
    """
    softening = config.softening
    if config.backend == 'engine':
        grid = CoreGrid(config.cores, cb_capacity=config.cb_capacity,
                        watchdog_seconds=config.watchdog_seconds,
                        max_cores=config.max_cores)
        return lambda system: run_engine(system, grid, softening=softening)
    if config.backend == 'cpu_reference':
        return lambda system: optimized_cpu(system, config.threads, softening=softening)
    return lambda system: brute_force_fp64(system, softening=softening)


def _check_finite(name: str, values: np.ndarray):
    bad = np.flatnonzero(~np.isfinite(values).all(axis=0))
    if bad.size:
        raise IntegrationError(f"particle {bad[0]} has a non-finite {name} after the step")


class HermiteIntegrator:
    """
    Fourth-order Hermite predictor-corrector with a shared time step. Positions
    and velocities are predicted with a Taylor series through the jerk, the
    provider evaluates the acceleration and jerk at the predicted state, and
    the corrector combines both ends of the step. All of this arithmetic is
    FP64 whatever the precision of the provider.

    The acceleration and jerk evaluated at the predicted state are kept as the
    start values of the next step, so each step costs one provider call.
    """
    def __init__(self, provider: AccelJerkProvider):
        self._provider = provider
        self._start = None

    def __repr__(self):
        return f"<{self.__class__.__name__}>"

    def evaluate(self, system: ParticleSystem) -> Tuple[np.ndarray, np.ndarray]:
        "Call the provider and widen its result to FP64 ``(acc, jerk)``"
        return self._provider(system).as_fp64()

    def reset(self):
        "Forget the cached start values"
        self._start = None

    def step(self, system: ParticleSystem, dt: float) -> ParticleSystem:
        """
        Advance *system* by *dt* and return the new state.
        """
        if self._start is None or self._start[0] is not system:
            a0, j0 = self.evaluate(system)
        else:
            _, a0, j0 = self._start
        r0 = system.positions
        v0 = system.velocities
        dt2 = dt * dt
        dt3 = dt2 * dt

        rp = r0 + v0 * dt + a0 * (dt2 / 2) + j0 * (dt3 / 6)
        vp = v0 + a0 * dt + j0 * (dt2 / 2)
        _check_finite('predicted position', rp)
        _check_finite('predicted velocity', vp)
        a1, j1 = self.evaluate(system.evolve(rp, vp))

        v1 = v0 + (a0 + a1) * (dt / 2) + (j0 - j1) * (dt2 / 12)
        r1 = r0 + (v0 + v1) * (dt / 2) + (a0 - a1) * (dt2 / 12)
        _check_finite('position', r1)
        _check_finite('velocity', v1)
        new = system.evolve(r1, v1)
        self._start = (new, a1, j1)
        return new


def hermite_step(system: ParticleSystem, provider: AccelJerkProvider,
                 dt: float) -> ParticleSystem:
    """
    Advance *system* by one Hermite step of *dt* using *provider* for the
    acceleration and jerk.
    """
    return HermiteIntegrator(provider).step(system, dt)


class SimulationResult:
    """
    The outcome of :func:`run_simulation`: the final state, the monotonic
    start and end markers bracketing the simulation and, when requested, the
    total energy before and after.
    """
    def __init__(self, system: ParticleSystem, *, start: float, end: float,
                 cycles: int, backend: str, initial_energy: Optional[float] = None,
                 final_energy: Optional[float] = None):
        self.system = system
        self.start = start
        self.end = end
        self.cycles = cycles
        self.backend = backend
        self.initial_energy = initial_energy
        self.final_energy = final_energy

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.backend} {self.cycles} cycles "
            f"{self.time_to_solution:.3f}s>"
        )

    @property
    def time_to_solution(self) -> float:
        "Wall time from the start marker to the end marker, in seconds"
        return self.end - self.start

    @property
    def energy_drift(self) -> Optional[float]:
        "Relative change of the total energy over the run"
        if self.initial_energy is None or self.final_energy is None:
            return None
        return abs(self.final_energy - self.initial_energy) / abs(self.initial_energy)


def run_simulation(config: SimulationConfig, system: ParticleSystem, *,
                   provider: Optional[AccelJerkProvider] = None,
                   clock: Callable[[], float] = time.monotonic,
                   on_start: Optional[Callable[[], None]] = None,
                   on_end: Optional[Callable[[], None]] = None) -> SimulationResult:
    """
    Apply ``config.cycles`` Hermite steps to *system* with the configured
    backend and return a :class:`SimulationResult`.

    The start and end markers are read from *clock* immediately around the
    time loop; *on_start* runs just before the start marker and *on_end* just
    after the end marker (the benchmark harness uses them to force power
    samples). A failing backend raises :exc:`~tilenbody.exc.BackendFailure`
    carrying the cycle index.
    """
    if provider is None:
        provider = make_provider(config)
    cycle = 0

    def guarded(state):
        try:
            return provider(state)
        except Exception as e:
            raise BackendFailure(
                f"{config.backend} backend failed in cycle {cycle}: {e}", cycle=cycle) from e

    initial_energy = None
    if config.energy_diagnostics:
        initial_energy = system.total_energy(config.softening)
    integrator = HermiteIntegrator(guarded)
    logger.info("Simulating %s particles: %s", system.n, config.as_dict())

    if on_start is not None:
        on_start()
    start = clock()
    state = system
    for cycle in range(config.cycles):
        state = integrator.step(state, config.dt)
        logger.info("Cycle %s/%s done", cycle + 1, config.cycles)
        if config.snapshot_every and (cycle + 1) % config.snapshot_every == 0:
            state.write(Path(f'{config.snapshot_prefix}_{cycle + 1}.txt'))
    end = clock()
    if on_end is not None:
        on_end()

    final_energy = None
    if config.energy_diagnostics:
        final_energy = state.total_energy(config.softening)
    result = SimulationResult(
        state, start=start, end=end, cycles=config.cycles, backend=config.backend,
        initial_energy=initial_energy, final_energy=final_energy)
    logger.info("Simulation finished: time to solution %.3fs", result.time_to_solution)
    return result
