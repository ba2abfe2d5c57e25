# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path
from typing import Optional, Union, Tuple

import numpy as np

from .utils import s3
from .exc import InvalidParticleSystem, NonFiniteValue, SnapshotFormatError


logger = logging.getLogger('tilenbody.particles')

AXES = ('x', 'y', 'z')
LAYOUTS = ('auto', 'axes', 'rows')
PRECISIONS = ('fp32', 'fp64')


def _frozen(values, name: str, n: Optional[int] = None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise InvalidParticleSystem(
            f"{name} has {arr.shape[0]} elements, expected {n}")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NonFiniteValue(f"{name}[{bad[0]}] is not finite ({arr[bad[0]]})")
    arr.flags.writeable = False
    return arr


class ParticleSystem:
    """
    The ground-truth state of a simulation: per-particle masses, positions and
    velocities in FP64, stored as one contiguous array per axis
    (structure-of-arrays). Units are N-body units with G = 1.

    Instances are immutable; use :meth:`evolve` to derive a new state.

    :type masses:
        array_like
    :param masses:
        Per-particle masses, all strictly positive and finite

    :type positions:
        array_like
    :param positions:
        Shape ``(3, n)`` (one row per axis) or ``(n, 3)`` (one row per
        particle)

    :type velocities:
        array_like
    :param velocities:
        Same shape conventions as *positions*

    :type layout:
        str
    :param layout:
        ``axes`` for ``(3, n)`` input, ``rows`` for ``(n, 3)``, or ``auto``
        (the default) to tell them apart by shape. Three particles give a
        ``(3, 3)`` array either way, so ``auto`` rejects them (keyword-only
        argument)
    """
    def __init__(self, masses, positions, velocities, *, layout: str = 'auto'):
        if layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {', '.join(LAYOUTS)}, got {layout!r}")
        self._m = _frozen(masses, 'masses')
        n = self._m.shape[0]
        if n < 2:
            raise InvalidParticleSystem(f"a system needs at least 2 particles, got {n}")
        bad = np.flatnonzero(self._m <= 0)
        if bad.size:
            raise InvalidParticleSystem(
                f"masses[{bad[0]}] must be strictly positive, got {self._m[bad[0]]}")
        pos = self._as_axes(positions, n, 'positions', layout)
        vel = self._as_axes(velocities, n, 'velocities', layout)
        self._x, self._y, self._z = (
            _frozen(p, f'positions.{a}', n) for p, a in zip(pos, AXES))
        self._vx, self._vy, self._vz = (
            _frozen(v, f'velocities.{a}', n) for v, a in zip(vel, AXES))

    @staticmethod
    def _as_axes(values, n: int, name: str, layout: str):
        arr = np.asarray(values, dtype=np.float64)
        if layout == 'auto' and n == 3 and arr.shape == (3, 3):
            raise InvalidParticleSystem(
                f"{name} of three particles is ambiguous; pass layout='axes' or 'rows'")
        if arr.shape == (3, n) and layout in ('auto', 'axes'):
            return arr
        if arr.shape == (n, 3) and layout in ('auto', 'rows'):
            return arr.T
        expected = {'axes': f'(3, {n})', 'rows': f'({n}, 3)'}.get(
            layout, f'(3, {n}) or ({n}, 3)')
        raise InvalidParticleSystem(f"{name} must have shape {expected}, got {arr.shape}")

    @classmethod
    def from_string(cls, snapshot: str):
        """
        Construct from the text of a snapshot: a header line holding ``n``
        followed by ``n`` lines of ``mass x y z vx vy vz``.

        :type snapshot:
            str
        :param snapshot:
            The snapshot text
        """
        lines = [
            line.strip() for line in snapshot.splitlines()
            if line.strip() and not line.lstrip().startswith('#')
        ]
        if not lines:
            raise SnapshotFormatError("empty snapshot")
        try:
            n = int(lines[0])
        except ValueError as e:
            raise SnapshotFormatError(f"bad particle count line: {lines[0]!r}") from e
        if len(lines) - 1 != n:
            raise SnapshotFormatError(
                f"header announces {n} particles but {len(lines) - 1} rows follow")
        rows = np.empty((n, 7), dtype=np.float64)
        for i, line in enumerate(lines[1:]):
            fields = line.split()
            if len(fields) != 7:
                raise SnapshotFormatError(
                    f"row {i} has {len(fields)} fields, expected 7")
            try:
                rows[i] = [float(f) for f in fields]
            except ValueError as e:
                raise SnapshotFormatError(f"row {i}: {e}") from e
        return cls(rows[:, 0], rows[:, 1:4], rows[:, 4:7], layout='rows')

    @classmethod
    def from_file(cls, snapshot_path: Union[Path, str]):
        """
        Construct from a snapshot file path (or an ``s3://`` URI)

        :type snapshot_path:
            Union[pathlib.Path, str]
        :param snapshot_path:
            The snapshot file path
        """
        logger.info("Reading snapshot %s", snapshot_path)
        return cls.from_string(s3.read_text(snapshot_path))

    @classmethod
    def from_s3(cls, bucket_name: str, snapshot_key: str):
        """
        Construct from a snapshot in an S3 bucket

        :type bucket_name:
            str
        :param bucket_name:
            The name of the S3 bucket

        :type snapshot_key:
            str
        :param snapshot_key:
            The snapshot file key within the S3 bucket
        """
        return cls.from_string(s3.get_file_contents(bucket_name, snapshot_key))

    def __repr__(self):
        return f"<{self.__class__.__name__} n={self.n}>"

    def __str__(self):
        return self.to_string()

    def to_string(self) -> str:
        """
        The snapshot text of the system. Every value is written with Python's
        shortest round-trip representation, so :meth:`from_string` restores the
        system bit-exactly.
        """
        columns = (self._m, self._x, self._y, self._z, self._vx, self._vy, self._vz)
        lines = [str(self.n)]
        for row in zip(*(c.tolist() for c in columns)):
            lines.append(' '.join(repr(v) for v in row))
        return '\n'.join(lines) + '\n'

    def write(self, snapshot_path: Union[Path, str]):
        """
        Write the snapshot text to *snapshot_path*.
        """
        logger.info("Writing snapshot of %s particles to %s", self.n, snapshot_path)
        Path(snapshot_path).write_text(self.to_string())

    def evolve(self, positions, velocities):
        """
        Return a new system with the same masses and the given *positions* and
        *velocities*,
        both ``(3, n)`` like :attr:`positions`.
        """
        return self.__class__(self._m, positions, velocities, layout='axes')

    @property
    def n(self) -> int:
        "The number of particles"
        return self._m.shape[0]

    @property
    def masses(self) -> np.ndarray:
        return self._m

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def z(self) -> np.ndarray:
        return self._z

    @property
    def vx(self) -> np.ndarray:
        return self._vx

    @property
    def vy(self) -> np.ndarray:
        return self._vy

    @property
    def vz(self) -> np.ndarray:
        return self._vz

    @property
    def positions(self) -> np.ndarray:
        "A ``(3, n)`` copy of the positions"
        return np.stack((self._x, self._y, self._z))

    @property
    def velocities(self) -> np.ndarray:
        "A ``(3, n)`` copy of the velocities"
        return np.stack((self._vx, self._vy, self._vz))

    @property
    def total_mass(self) -> float:
        return float(self._m.sum())

    @property
    def center_of_mass(self) -> np.ndarray:
        return self.positions @ self._m / self.total_mass

    @property
    def momentum(self) -> np.ndarray:
        "Total linear momentum"
        return self.velocities @ self._m

    @property
    def kinetic_energy(self) -> float:
        v2 = self._vx ** 2 + self._vy ** 2 + self._vz ** 2
        return float(0.5 * np.sum(self._m * v2))

    def potential_energy(self, softening: float = 0.0) -> float:
        """
        Pairwise gravitational potential energy in FP64, summed over ``i < j``
        with *j* ascending.
        """
        eps2 = softening * softening
        total = 0.0
        for j in range(1, self.n):
            dx = self._x[j] - self._x[:j]
            dy = self._y[j] - self._y[:j]
            dz = self._z[j] - self._z[:j]
            r = np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
            total -= self._m[j] * float(np.sum(self._m[:j] / r))
        return total

    def total_energy(self, softening: float = 0.0) -> float:
        "Kinetic plus potential energy"
        return self.kinetic_energy + self.potential_energy(softening)


class AccelJerk:
    """
    Per-particle acceleration and jerk vectors produced by a force backend.
    :attr:`precision` records whether they came from an FP32 path (the engine
    or the optimized CPU baseline) or the FP64 reference.
    """
    def __init__(self, ax, ay, az, jx, jy, jz, *, precision: str):
        if precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}, got {precision!r}")
        dtype = np.float32 if precision == 'fp32' else np.float64
        arrays = [np.asarray(a, dtype=dtype).reshape(-1) for a in (ax, ay, az, jx, jy, jz)]
        n = arrays[0].shape[0]
        if any(a.shape[0] != n for a in arrays):
            raise ValueError("acceleration and jerk arrays must all have the same length")
        self._acc = np.stack(arrays[:3])
        self._jerk = np.stack(arrays[3:])
        self._precision = precision

    @classmethod
    def zeros(cls, n: int, *, precision: str):
        dtype = np.float32 if precision == 'fp32' else np.float64
        z = np.zeros(n, dtype=dtype)
        return cls(z, z, z, z, z, z, precision=precision)

    def __repr__(self):
        return f"<{self.__class__.__name__} n={self.n} {self.precision}>"

    @property
    def n(self) -> int:
        return self._acc.shape[1]

    @property
    def precision(self) -> str:
        return self._precision

    @property
    def acc(self) -> np.ndarray:
        "A ``(3, n)`` array of acceleration components"
        return self._acc

    @property
    def jerk(self) -> np.ndarray:
        "A ``(3, n)`` array of jerk components"
        return self._jerk

    ax = property(lambda self: self._acc[0])
    ay = property(lambda self: self._acc[1])
    az = property(lambda self: self._acc[2])
    jx = property(lambda self: self._jerk[0])
    jy = property(lambda self: self._jerk[1])
    jz = property(lambda self: self._jerk[2])

    def as_fp64(self) -> Tuple[np.ndarray, np.ndarray]:
        "Acceleration and jerk widened to FP64, as ``(acc, jerk)``"
        return self._acc.astype(np.float64), self._jerk.astype(np.float64)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self._acc).all() and np.isfinite(self._jerk).all())

    def equals(self, other: 'AccelJerk') -> bool:
        "Bit-exact comparison of values and precision"
        return (
            self.precision == other.precision and
            np.array_equal(self._acc, other._acc) and
            np.array_equal(self._jerk, other._jerk)
        )
