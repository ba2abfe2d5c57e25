# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from .particles import ParticleSystem, AccelJerk
from .exc import SingularConfiguration, DegenerateValidation


logger = logging.getLogger('tilenbody.oracle')

#: Maximum error in acceleration components, relative to the typical magnitude
ACCEL_TOLERANCE = 5e-4
#: Maximum error in jerk components, relative to the typical magnitude
JERK_TOLERANCE = 2e-3

_ONE = np.float32(1.0)
_THREE = np.float32(3.0)
_ZERO = np.float32(0.0)


def brute_force_fp64(system: ParticleSystem, *, softening: float = 0.0) -> AccelJerk:
    """
    The golden reference: the exact pairwise sum of acceleration and jerk in
    FP64, with *j* visited in ascending order and ``j = i`` skipped.

    :type system:
        ParticleSystem
    :param system:
        The particle system

    :type softening:
        float
    :param softening:
        Plummer softening length; when zero, coincident distinct particles
        raise :exc:`~tilenbody.exc.SingularConfiguration` (keyword-only
        argument)
    """
    n = system.n
    x, y, z = system.x, system.y, system.z
    vx, vy, vz = system.vx, system.vy, system.vz
    m = system.masses
    eps2 = softening * softening
    acc = np.zeros((3, n))
    jerk = np.zeros((3, n))

    def accumulate(j: int, i: slice):
        dx = x[j] - x[i]
        dy = y[j] - y[i]
        dz = z[j] - z[i]
        r2 = dx * dx + dy * dy + dz * dz + eps2
        if not eps2:
            hits = np.flatnonzero(r2 == 0)
            if hits.size:
                other = int(hits[0]) + (i.start or 0)
                first, second = sorted((other, j))
                raise SingularConfiguration(
                    f"particles {first} and {second} are coincident")
        dvx = vx[j] - vx[i]
        dvy = vy[j] - vy[i]
        dvz = vz[j] - vz[i]
        rinv = 1.0 / np.sqrt(r2)
        rinv2 = rinv * rinv
        mr3 = m[j] * rinv2 * rinv
        alpha = 3.0 * (dx * dvx + dy * dvy + dz * dvz) * rinv2
        acc[0, i] += mr3 * dx
        acc[1, i] += mr3 * dy
        acc[2, i] += mr3 * dz
        jerk[0, i] += mr3 * (dvx - alpha * dx)
        jerk[1, i] += mr3 * (dvy - alpha * dy)
        jerk[2, i] += mr3 * (dvz - alpha * dz)

    for j in range(n):
        accumulate(j, slice(0, j))
        accumulate(j, slice(j + 1, n))
    return AccelJerk(*acc, *jerk, precision='fp64')


def _fp32_chunk(sources, targets, softening: float):
    """
    Accumulate, in FP32, the effect of every source particle on the target
    particles. The operation sequence and rounding match the engine's compute
    kernel exactly, lane for lane.
    """
    sx, sy, sz, svx, svy, svz, sm = sources
    tx, ty, tz, tvx, tvy, tvz = targets
    eps2 = np.float32(softening * softening)
    n = tx.shape[0]
    ax, ay, az, jx, jy, jz = (np.zeros(n, dtype=np.float32) for _ in range(6))
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        for j in range(sx.shape[0]):
            dx = sx[j] - tx
            dy = sy[j] - ty
            dz = sz[j] - tz
            dvx = svx[j] - tvx
            dvy = svy[j] - tvy
            dvz = svz[j] - tvz
            r2 = dx * dx + dy * dy
            r2 = r2 + dz * dz
            if eps2:
                r2 = r2 + eps2
            rinv = np.where(r2 > 0, _ONE / np.sqrt(r2), _ZERO)
            rinv2 = rinv * rinv
            mr3 = rinv2 * rinv * sm[j]
            alpha = dx * dvx
            alpha = dy * dvy + alpha
            alpha = dz * dvz + alpha
            alpha = alpha * rinv2 * _THREE
            ax = mr3 * dx + ax
            ay = mr3 * dy + ay
            az = mr3 * dz + az
            jx = mr3 * (dvx - alpha * dx) + jx
            jy = mr3 * (dvy - alpha * dy) + jy
            jz = mr3 * (dvz - alpha * dz) + jz
    return ax, ay, az, jx, jy, jz


def optimized_cpu(system: ParticleSystem, num_threads: Optional[int] = None, *,
                  softening: float = 0.0) -> AccelJerk:
    """
    The mixed-precision CPU baseline: particle data rounded to FP32 and the
    force and jerk accumulated in FP32, parallel over the outer (target)
    particles. Every target's sum runs over the sources in ascending order
    within one thread, so the thread count changes timing only; results are
    bit-identical to the engine's.

    :type num_threads:
        int
    :param num_threads:
        Worker threads, at least 1 (defaults to the CPU count)
    """
    if num_threads is None:
        num_threads = os.cpu_count() or 1
    if num_threads < 1:
        raise ValueError(f"num_threads must be at least 1, got {num_threads}")
    quantities = [
        np.asarray(q, dtype=np.float32)
        for q in (system.x, system.y, system.z, system.vx, system.vy, system.vz)
    ]
    sources = quantities + [np.asarray(system.masses, dtype=np.float32)]
    bounds = np.linspace(0, system.n, min(num_threads, system.n) + 1).astype(int)
    chunks = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
    logger.debug("optimized_cpu: %s particles on %s threads", system.n, len(chunks))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(
            lambda sl: _fp32_chunk(sources, [q[sl] for q in quantities], softening),
            chunks))
    columns = [np.concatenate([part[k] for part in parts]) for k in range(6)]
    return AccelJerk(*columns, precision='fp32')


class ValidationReport:
    """
    The comparison of a candidate :class:`~tilenbody.particles.AccelJerk`
    against the golden FP64 result. Errors are the largest absolute component
    difference over all particles divided by the typical magnitude (the mean
    per-particle vector norm of the golden values), separately for
    acceleration and jerk.
    """
    def __init__(self, *, n: int, typical_force_magnitude: float,
                 typical_jerk_magnitude: float, max_rel_accel_err: float,
                 max_rel_jerk_err: float, worst_accel_index: int,
                 worst_jerk_index: int, worst_particle_index: int):
        self.n = n
        self.typical_force_magnitude = typical_force_magnitude
        self.typical_jerk_magnitude = typical_jerk_magnitude
        self.max_rel_accel_err = max_rel_accel_err
        self.max_rel_jerk_err = max_rel_jerk_err
        self.worst_accel_index = worst_accel_index
        self.worst_jerk_index = worst_jerk_index
        self.worst_particle_index = worst_particle_index

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} n={self.n} "
            f"{'pass' if self.passed else 'FAIL'}>"
        )

    def __str__(self):
        verdict = 'PASS' if self.passed else 'FAIL'
        return '\n'.join([
            f"Validation of {self.n} particles: {verdict}",
            f"  typical |a|      {self.typical_force_magnitude:.6e}",
            f"  typical |j|      {self.typical_jerk_magnitude:.6e}",
            f"  max accel error  {self.max_rel_accel_err:.3e} "
            f"(limit {ACCEL_TOLERANCE:.0e}, particle {self.worst_accel_index})",
            f"  max jerk error   {self.max_rel_jerk_err:.3e} "
            f"(limit {JERK_TOLERANCE:.0e}, particle {self.worst_jerk_index})",
            f"  worst particle   {self.worst_particle_index}",
        ])

    @property
    def passed(self) -> bool:
        return (
            self.max_rel_accel_err <= ACCEL_TOLERANCE and
            self.max_rel_jerk_err <= JERK_TOLERANCE
        )

    def to_keyvalue(self) -> str:
        "The report as ``key=value`` lines"
        fields = [
            ('n', self.n),
            ('typical_force_magnitude', repr(self.typical_force_magnitude)),
            ('typical_jerk_magnitude', repr(self.typical_jerk_magnitude)),
            ('max_rel_accel_err', repr(self.max_rel_accel_err)),
            ('max_rel_jerk_err', repr(self.max_rel_jerk_err)),
            ('worst_accel_index', self.worst_accel_index),
            ('worst_jerk_index', self.worst_jerk_index),
            ('worst_particle_index', self.worst_particle_index),
            ('pass', str(self.passed).lower()),
        ]
        return '\n'.join(f'{key}={value}' for key, value in fields) + '\n'


def _relative_errors(candidate: np.ndarray, golden: np.ndarray, typical: float):
    # per-particle worst component error, non-finite candidates count as inf
    diff = np.abs(candidate - golden).max(axis=0)
    diff = np.where(np.isfinite(diff), diff, np.inf)
    if typical == 0:
        return np.where(diff == 0, 0.0, np.inf)
    return diff / typical


def validate(candidate: AccelJerk, golden: AccelJerk) -> ValidationReport:
    """
    Compare *candidate* against the FP64 *golden* result. The candidate passes
    when every acceleration component is within 0.05% and every jerk component
    within 0.2% of the typical magnitude.

    Raises :exc:`~tilenbody.exc.DegenerateValidation` when every golden
    acceleration is zero.
    """
    if candidate.n != golden.n:
        raise ValueError(
            f"candidate has {candidate.n} particles, golden has {golden.n}")
    if golden.precision != 'fp64':
        raise ValueError("the golden result must be fp64")
    cand_acc, cand_jerk = candidate.as_fp64()
    typical_a = float(np.linalg.norm(golden.acc, axis=0).mean())
    typical_j = float(np.linalg.norm(golden.jerk, axis=0).mean())
    if typical_a == 0:
        raise DegenerateValidation("every golden acceleration is zero")
    accel_err = _relative_errors(cand_acc, golden.acc, typical_a)
    jerk_err = _relative_errors(cand_jerk, golden.jerk, typical_j)
    worst = np.maximum(accel_err / ACCEL_TOLERANCE, jerk_err / JERK_TOLERANCE)
    report = ValidationReport(
        n=golden.n,
        typical_force_magnitude=typical_a,
        typical_jerk_magnitude=typical_j,
        max_rel_accel_err=float(accel_err.max()),
        max_rel_jerk_err=float(jerk_err.max()),
        worst_accel_index=int(accel_err.argmax()),
        worst_jerk_index=int(jerk_err.argmax()),
        worst_particle_index=int(worst.argmax()),
    )
    logger.info("Validated %s particles: accel %.3e jerk %.3e %s", report.n,
                report.max_rel_accel_err, report.max_rel_jerk_err,
                'pass' if report.passed else 'FAIL')
    return report
