# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

"""
The per-core kernels of the emulated engine and the element-wise FP32 tile
primitives they are written in.

Every core runs three kernels. The read kernel streams tiles from the tiled
particle data into circular buffers; the compute kernel accumulates the
gravitational acceleration and jerk of the core's outer particles; the write
kernel copies the finished result tiles into the shared result sink.
"""

import logging
from typing import Dict, Sequence

import numpy as np

from .tiles import Tile, TiledParticles, TILE_SIZE, QUANTITIES
from .particles import AccelJerk
from .buffers import (
    CircularBuffer, cb_reserve_back, cb_push_back, cb_wait_front, cb_pop_front,
)
from .exc import (
    PipelineShutdown, PipelineFailure, NonFiniteAccumulator, DstRegisterOverflow,
)


logger = logging.getLogger('tilenbody.kernels')

#: dst register capacity in BFP16 tiles; FP32 tiles take two slots each
DST_TILES_BFP16 = 16
DST_TILES_FP32 = DST_TILES_BFP16 // 2

OUTER_QUANTITIES = ('x', 'y', 'z', 'vx', 'vy', 'vz')
ACCUMULATORS = ('ax', 'ay', 'az', 'jx', 'jy', 'jz')
DISPLACEMENTS = ('dx', 'dy', 'dz', 'dvx', 'dvy', 'dvz')
STAGED = DISPLACEMENTS + ('rinv2', 'mr3', 'alpha')
SCRATCH = ('s0', 's1')

_ONE = np.float32(1.0)
_THREE = np.float32(3.0)


def input_cb_names():
    "Names of the circular buffers the read kernel fills"
    return (
        tuple(f'outer_{q}' for q in OUTER_QUANTITIES) +
        tuple(f'inner_{q}' for q in QUANTITIES)
    )


# -- element-wise tile primitives ---------------------------------------------

def sub_tile(a: Tile, b: Tile) -> Tile:
    "Element-wise ``a - b``"
    return Tile._wrap(a.values - b.values)


def add_tile(a: Tile, b: Tile) -> Tile:
    "Element-wise ``a + b``"
    return Tile._wrap(a.values + b.values)


def mul_tile(a: Tile, b: Tile) -> Tile:
    "Element-wise ``a * b``"
    return Tile._wrap(a.values * b.values)


def square_tile(a: Tile) -> Tile:
    "Element-wise ``a * a``"
    return Tile._wrap(a.values * a.values)


def rsqrt_tile(a: Tile) -> Tile:
    """
    Element-wise ``1 / sqrt(a)`` at full FP32 precision. Zero lanes give
    ``+inf``; callers mask them with :func:`mask_self_tile`.
    """
    with np.errstate(divide='ignore', invalid='ignore'):
        return Tile._wrap(_ONE / np.sqrt(a.values))


def fma_tile(a: Tile, b: Tile, acc: Tile) -> Tile:
    """
    Element-wise ``a * b + acc``. The product and the sum are each rounded to
    FP32 (unfused).
    """
    return Tile._wrap(a.values * b.values + acc.values)


def mul_scalar_tile(a: Tile, s: float) -> Tile:
    "Multiply every element of *a* by the FP32 scalar *s*"
    return Tile._wrap(a.values * np.float32(s))


def add_scalar_tile(a: Tile, s: float) -> Tile:
    "Add the FP32 scalar *s* to every element of *a*"
    return Tile._wrap(a.values + np.float32(s))


def mask_self_tile(r2: Tile, value: Tile) -> Tile:
    """
    Return *value* where ``r2 > 0`` and exactly ``0.0`` where ``r2 == 0``, so a
    particle paired with itself (or with a coincident one) contributes nothing.
    """
    return Tile._wrap(np.where(r2.values > 0, value.values, np.float32(0.0)))


def bcast_tile(a: Tile, lane: int) -> Tile:
    "Replicate element *lane* of *a* across a whole tile"
    return Tile._wrap(np.full(TILE_SIZE, a.values[lane], dtype=np.float32))


# -- dst register -------------------------------------------------------------

class DstRegister:
    """
    The compute engine's destination register file. Tiles must be acquired by
    name before they are written; holding more than :attr:`capacity` at once
    raises :exc:`~tilenbody.exc.DstRegisterOverflow`. :attr:`high_water` keeps
    the largest number of tiles ever resident.
    """
    def __init__(self, capacity: int = DST_TILES_FP32):
        self._capacity = capacity
        self._slots = {}
        self._high_water = 0

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.occupancy}/{self.capacity}>"

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def occupancy(self) -> int:
        return len(self._slots)

    @property
    def high_water(self) -> int:
        return self._high_water

    def acquire(self, *names: str):
        for name in names:
            if name in self._slots:
                raise DstRegisterOverflow(f"dst slot {name!r} is already held")
            if len(self._slots) >= self._capacity:
                raise DstRegisterOverflow(
                    f"acquiring {name!r} would put {len(self._slots) + 1} FP32 "
                    f"tiles in a dst register of {self._capacity}")
            self._slots[name] = None
            self._high_water = max(self._high_water, len(self._slots))

    def release(self, *names: str):
        for name in names:
            del self._slots[name]

    def __getitem__(self, name: str) -> Tile:
        return self._slots[name]

    def __setitem__(self, name: str, tile: Tile):
        if name not in self._slots:
            raise DstRegisterOverflow(f"dst slot {name!r} written without being acquired")
        self._slots[name] = tile


# -- kernel descriptions and the result sink ----------------------------------

class KernelSpec:
    """
    Describes one kernel instance: its *kind* (``read``, ``compute`` or
    ``write``), the *core* it runs on, the range of *outer* tiles that core
    owns, the number of *inner_tiles* every outer tile is paired with and the
    names of the circular buffers it is wired to.
    """
    KINDS = ('read', 'compute', 'write')

    def __init__(self, kind: str, *, core: int, outer: range, inner_tiles: int,
                 cbs: Sequence[str] = ()):
        if kind not in self.KINDS:
            raise ValueError(f"kernel kind must be one of {self.KINDS}, got {kind!r}")
        self.kind = kind
        self.core = core
        self.outer = outer
        self.inner_tiles = inner_tiles
        self.cbs = tuple(cbs)

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.kind} core {self.core} "
            f"outer [{self.outer.start}..{self.outer.stop}) x {self.inner_tiles}>"
        )


class ResultSink:
    """
    The global FP32 acceleration and jerk arrays the write kernels fill, one
    tile at a time. Every tile may be written exactly once.
    """
    def __init__(self, tile_count: int):
        self._tile_count = tile_count
        self._data = {
            name: np.zeros((tile_count, TILE_SIZE), dtype=np.float32)
            for name in ACCUMULATORS
        }
        self._written = {name: np.zeros(tile_count, dtype=bool) for name in ACCUMULATORS}

    @property
    def tile_count(self) -> int:
        return self._tile_count

    def write(self, name: str, index: int, tile: Tile, *, core=None):
        if not 0 <= index < self._tile_count:
            raise PipelineFailure(
                f"result tile {name}[{index}] is outside [0, {self._tile_count})",
                core=core, stage='write')
        if self._written[name][index]:
            raise PipelineFailure(
                f"result tile {name}[{index}] written twice", core=core, stage='write')
        self._data[name][index] = tile.values
        self._written[name][index] = True

    def coverage(self) -> np.ndarray:
        "Per-tile flag, ``True`` where every result quantity has been written"
        return np.logical_and.reduce([self._written[name] for name in ACCUMULATORS])

    def to_accel_jerk(self, n: int) -> AccelJerk:
        return AccelJerk(
            *(self._data[name].reshape(-1)[:n] for name in ACCUMULATORS),
            precision='fp32',
        )


# -- kernels ------------------------------------------------------------------

def read_kernel(core: KernelSpec, source: TiledParticles, out_cbs: Dict[str, CircularBuffer]):
    """
    Stream the tiles a core needs, in the order :func:`compute_force_jerk`
    consumes them: for every owned outer tile, the six outer-quantity tiles
    once, then all seven inner-quantity tiles of every inner tile in ascending
    order.
    """
    try:
        for o in core.outer:
            for q in OUTER_QUANTITIES:
                cb = out_cbs[f'outer_{q}']
                cb_reserve_back(cb, 1)
                cb_push_back(cb, source[q][o])
            for t in range(core.inner_tiles):
                for q in QUANTITIES:
                    cb = out_cbs[f'inner_{q}']
                    cb_reserve_back(cb, 1)
                    cb_push_back(cb, source[q][t])
    except PipelineShutdown:
        logger.debug("read kernel on core %s stopped by shutdown", core.core)
        raise


def _stage(cb: CircularBuffer, tile: Tile):
    # pack a dst tile out to an intermediate buffer in SRAM
    cb_reserve_back(cb, 1)
    cb_push_back(cb, tile)


def _interact_lane(lane: int, outer: Dict[str, Tile], inner: Dict[str, Tile],
                   dst: DstRegister, staged: Dict[str, CircularBuffer], eps2):
    """
    Accumulate the contribution of inner particle *lane* on all 1024 outer
    particles. Only the six accumulators and the two scratch tiles live in dst;
    every other intermediate round-trips through a staging buffer.
    """
    for name, q in zip(DISPLACEMENTS, OUTER_QUANTITIES):
        dst['s0'] = sub_tile(bcast_tile(inner[q], lane), outer[q])
        _stage(staged[name], dst['s0'])
    dx, dy, dz, dvx, dvy, dvz = (cb_wait_front(staged[name], 1)[0] for name in DISPLACEMENTS)

    dst['s0'] = square_tile(dx)
    dst['s1'] = square_tile(dy)
    dst['s0'] = add_tile(dst['s0'], dst['s1'])
    dst['s1'] = square_tile(dz)
    dst['s0'] = add_tile(dst['s0'], dst['s1'])
    if eps2:
        dst['s0'] = add_scalar_tile(dst['s0'], eps2)
    dst['s1'] = mask_self_tile(dst['s0'], rsqrt_tile(dst['s0']))
    dst['s0'] = mul_tile(dst['s1'], dst['s1'])
    _stage(staged['rinv2'], dst['s0'])
    dst['s0'] = mul_tile(dst['s0'], dst['s1'])
    dst['s0'] = mul_tile(dst['s0'], bcast_tile(inner['mass'], lane))
    _stage(staged['mr3'], dst['s0'])
    rinv2 = cb_wait_front(staged['rinv2'], 1)[0]
    mr3 = cb_wait_front(staged['mr3'], 1)[0]

    # alpha = 3 (r . v) / r^2
    dst['s0'] = mul_tile(dx, dvx)
    dst['s0'] = fma_tile(dy, dvy, dst['s0'])
    dst['s0'] = fma_tile(dz, dvz, dst['s0'])
    dst['s0'] = mul_tile(dst['s0'], rinv2)
    dst['s0'] = mul_scalar_tile(dst['s0'], _THREE)
    _stage(staged['alpha'], dst['s0'])
    alpha = cb_wait_front(staged['alpha'], 1)[0]

    dst['ax'] = fma_tile(mr3, dx, dst['ax'])
    dst['ay'] = fma_tile(mr3, dy, dst['ay'])
    dst['az'] = fma_tile(mr3, dz, dst['az'])
    for acc, d, dv in (('jx', dx, dvx), ('jy', dy, dvy), ('jz', dz, dvz)):
        dst['s0'] = mul_tile(alpha, d)
        dst['s0'] = sub_tile(dv, dst['s0'])
        dst[acc] = fma_tile(mr3, dst['s0'], dst[acc])

    for name in STAGED:
        cb_pop_front(staged[name], 1)


def compute_force_jerk(core: KernelSpec, in_cbs: Dict[str, CircularBuffer],
                       out_cbs: Dict[str, CircularBuffer], dst: DstRegister, *,
                       staged_cbs: Dict[str, CircularBuffer], softening: float = 0.0):
    """
    Compute the acceleration and jerk of every particle in the core's outer
    tiles, in FP32 with G = 1::

        a_i = sum_j m_j r_ji / |r_ji|^3
        j_i = sum_j m_j (v_ji / |r_ji|^3 - 3 (r_ji . v_ji) r_ji / |r_ji|^5)

    with ``r_ji = r_j - r_i`` and ``v_ji = v_j - v_i``. Inner particles are
    visited in ascending index order; a zero squared distance masks the pair
    out. *softening* adds ``eps^2`` to every squared distance. Six result tiles
    (ax, ay, az, jx, jy, jz) are pushed per outer tile.
    """
    eps2 = np.float32(softening * softening)
    try:
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            for o in core.outer:
                outer = {
                    q: cb_wait_front(in_cbs[f'outer_{q}'], 1)[0]
                    for q in OUTER_QUANTITIES
                }
                dst.acquire(*ACCUMULATORS)
                for name in ACCUMULATORS:
                    dst[name] = Tile.zeros()
                for t in range(core.inner_tiles):
                    inner = {
                        q: cb_wait_front(in_cbs[f'inner_{q}'], 1)[0]
                        for q in QUANTITIES
                    }
                    dst.acquire(*SCRATCH)
                    for lane in range(TILE_SIZE):
                        _interact_lane(lane, outer, inner, dst, staged_cbs, eps2)
                    dst.release(*SCRATCH)
                    for q in QUANTITIES:
                        cb_pop_front(in_cbs[f'inner_{q}'], 1)
                    for name in ACCUMULATORS:
                        if not np.isfinite(dst[name].values).all():
                            raise NonFiniteAccumulator(
                                f"{name} accumulator became non-finite at tile pair "
                                f"(outer {o}, inner {t})",
                                core=core.core, stage='compute')
                for name in ACCUMULATORS:
                    cb_reserve_back(out_cbs[name], 1)
                    cb_push_back(out_cbs[name], dst[name])
                dst.release(*ACCUMULATORS)
                for q in OUTER_QUANTITIES:
                    cb_pop_front(in_cbs[f'outer_{q}'], 1)
    except PipelineShutdown:
        logger.debug("compute kernel on core %s stopped by shutdown", core.core)
        raise


def write_kernel(core: KernelSpec, in_cbs: Dict[str, CircularBuffer], sink: ResultSink):
    """
    Copy the six result tiles of every owned outer tile to their offset in
    *sink*.
    """
    try:
        for o in core.outer:
            for name in ACCUMULATORS:
                tile = cb_wait_front(in_cbs[name], 1)[0]
                sink.write(name, o, tile, core=core.core)
                cb_pop_front(in_cbs[name], 1)
    except PipelineShutdown:
        logger.debug("write kernel on core %s stopped by shutdown", core.core)
        raise
