# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import logging
from typing import List, Optional

import numpy as np

from .particles import ParticleSystem
from .exc import NonFiniteValue


logger = logging.getLogger('tilenbody.tiles')

TILE_ROWS = 32
TILE_COLS = 32
TILE_SIZE = TILE_ROWS * TILE_COLS

#: Order of the per-particle quantities carried through the pipeline
QUANTITIES = ('x', 'y', 'z', 'vx', 'vy', 'vz', 'mass')


class Tile:
    """
    A block of exactly 1024 contiguous FP32 values with a logical 32×32
    row-major layout; the unit of transfer and compute on the emulated engine.
    """
    __slots__ = ('_values',)

    def __init__(self, values):
        arr = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
        if arr.shape[0] != TILE_SIZE:
            raise ValueError(f"a tile holds exactly {TILE_SIZE} values, got {arr.shape[0]}")
        self._values = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> 'Tile':
        # trusted fast path for kernel arithmetic: arr is already a
        # contiguous float32 vector of TILE_SIZE elements
        tile = cls.__new__(cls)
        tile._values = arr
        return tile

    @classmethod
    def zeros(cls) -> 'Tile':
        return cls._wrap(np.zeros(TILE_SIZE, dtype=np.float32))

    @classmethod
    def full(cls, value: float) -> 'Tile':
        return cls._wrap(np.full(TILE_SIZE, value, dtype=np.float32))

    def __len__(self):
        return TILE_SIZE

    def __repr__(self):
        return f"<{self.__class__.__name__} [{float(self._values[0])!r}, ...]>"

    @property
    def values(self) -> np.ndarray:
        "The flat FP32 element vector"
        return self._values

    @property
    def grid(self) -> np.ndarray:
        "The logical 32×32 row-major view of the tile"
        return self._values.reshape(TILE_ROWS, TILE_COLS)


class TiledArray:
    """
    An ordered sequence of tiles holding a flat array of *logical_len* values,
    zero-padded up to the next tile boundary. Built by :func:`tilize`.
    """
    def __init__(self, data: np.ndarray, logical_len: int):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] != TILE_SIZE:
            raise ValueError("tiled data must have shape (tiles, 1024)")
        if data.shape[0] != -(-logical_len // TILE_SIZE):
            raise ValueError(
                f"{data.shape[0]} tiles cannot hold exactly {logical_len} values")
        data.flags.writeable = False
        self._data = data
        self._logical_len = logical_len
        self._tiles = [Tile._wrap(row) for row in data]

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {len(self)} tiles, "
            f"{self.logical_len} values>"
        )

    def __len__(self):
        return self._data.shape[0]

    def __getitem__(self, index) -> Tile:
        return self._tiles[index]

    def __iter__(self):
        return iter(self._tiles)

    @property
    def tiles(self) -> List[Tile]:
        return list(self._tiles)

    @property
    def logical_len(self) -> int:
        "The element count before padding"
        return self._logical_len

    @property
    def flat(self) -> np.ndarray:
        "All tiles as one flat read-only FP32 vector, padding included"
        return self._data.reshape(-1)


def tilize(data, logical_len: Optional[int] = None) -> TiledArray:
    """
    Convert a flat FP64 array into FP32 tiles. Values are rounded to nearest
    (ties to even) and the last tile is padded with ``0.0``.

    :type data:
        array_like
    :param data:
        The values to tilize, all finite

    :type logical_len:
        int
    :param logical_len:
        The number of values; must equal the length of *data* when given
    """
    arr = np.asarray(data, dtype=np.float64).reshape(-1)
    if logical_len is None:
        logical_len = arr.shape[0]
    if logical_len != arr.shape[0]:
        raise ValueError(
            f"logical_len {logical_len} does not match data length {arr.shape[0]}")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NonFiniteValue(f"cannot tilize non-finite value at index {bad[0]}")
    n_tiles = -(-logical_len // TILE_SIZE)
    buf = np.zeros(n_tiles * TILE_SIZE, dtype=np.float32)
    buf[:logical_len] = arr.astype(np.float32)
    return TiledArray(buf.reshape(n_tiles, TILE_SIZE), logical_len)


def untilize(tiled: TiledArray) -> np.ndarray:
    """
    Return the first :attr:`~TiledArray.logical_len` values of *tiled* as a
    new flat FP32 array.
    """
    return tiled.flat[:tiled.logical_len].copy()


def partition_outer(tile_count: int, num_cores: int) -> List[range]:
    """
    Split *tile_count* outer tiles into contiguous per-core ranges, as evenly
    as possible, with earlier cores taking the remainder. Cores beyond the
    tile count get an empty range.
    """
    if num_cores < 1:
        raise ValueError(f"num_cores must be at least 1, got {num_cores}")
    base, extra = divmod(tile_count, num_cores)
    ranges = []
    start = 0
    for core in range(num_cores):
        size = base + (1 if core < extra else 0)
        ranges.append(range(start, start + size))
        start += size
    return ranges


class CoreTileView:
    """
    What one core sees of a tiled array: the contiguous range of outer tiles
    it owns, and the full tile sequence for its inner loop.
    """
    def __init__(self, core: int, outer: range, inner: TiledArray):
        self.core = core
        self.outer = outer
        self.inner = inner

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} core {self.core} "
            f"outer [{self.outer.start}..{self.outer.stop})>"
        )

    @property
    def outer_tiles(self) -> List[Tile]:
        return [self.inner[i] for i in self.outer]


def replicate_for_cores(tiled: TiledArray, num_cores: int) -> List[CoreTileView]:
    """
    Distribute the tiles of *tiled* across *num_cores* cores. Each core owns a
    contiguous range of outer tiles and shares read access to every tile for
    the inner loop.
    """
    return [
        CoreTileView(core, outer, tiled)
        for core, outer in enumerate(partition_outer(len(tiled), num_cores))
    ]


class TiledParticles:
    """
    The seven per-particle quantities of a system (positions, velocities and
    mass) tilized with a common tile count. Padding lanes have zero mass, which
    makes them dynamically inert.
    """
    def __init__(self, quantities: dict, n: int):
        missing = [q for q in QUANTITIES if q not in quantities]
        if missing:
            raise ValueError(f"missing tiled quantities: {', '.join(missing)}")
        counts = {len(quantities[q]) for q in QUANTITIES}
        if len(counts) != 1:
            raise ValueError("all tiled quantities must have the same tile count")
        self._quantities = {q: quantities[q] for q in QUANTITIES}
        self._n = n

    @classmethod
    def from_system(cls, system: ParticleSystem):
        """
        Tilize every quantity of *system*
        """
        quantities = {
            'x': tilize(system.x),
            'y': tilize(system.y),
            'z': tilize(system.z),
            'vx': tilize(system.vx),
            'vy': tilize(system.vy),
            'vz': tilize(system.vz),
            'mass': tilize(system.masses),
        }
        logger.debug("Tilized %s particles into %s tiles per quantity",
                     system.n, len(quantities['x']))
        return cls(quantities, system.n)

    def __repr__(self):
        return f"<{self.__class__.__name__} n={self.n} tiles={self.tile_count}>"

    def __getitem__(self, quantity: str) -> TiledArray:
        return self._quantities[quantity]

    @property
    def n(self) -> int:
        return self._n

    @property
    def tile_count(self) -> int:
        return len(self._quantities['x'])
