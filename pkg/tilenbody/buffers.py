# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import logging
import threading
from collections import deque
from contextlib import contextmanager, nullcontext
from itertools import islice
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .tiles import Tile
from .exc import CBConfigurationError, CBContractViolation, PipelineShutdown


logger = logging.getLogger('tilenbody.buffers')

DEFAULT_CB_CAPACITY = 2


class ActivityTracker:
    """
    Records which kernel activities are alive and which of them are blocked
    inside a circular buffer operation. The pipeline watchdog polls it to tell
    a slow pipeline from a deadlocked one.
    """
    def __init__(self):
        self._lock = threading.Lock()
        self._active = {}
        self._blocked = {}
        self._epoch = 0

    def register(self, name: str):
        "Register the calling thread as the kernel activity *name*"
        with self._lock:
            self._active[threading.get_ident()] = name
            self._epoch += 1

    def unregister(self):
        "Remove the calling thread from the set of live activities"
        with self._lock:
            ident = threading.get_ident()
            self._active.pop(ident, None)
            self._blocked.pop(ident, None)
            self._epoch += 1

    @contextmanager
    def blocked(self, cb: 'CircularBuffer'):
        "Mark the calling thread as blocked on *cb* for the duration of the block"
        ident = threading.get_ident()
        with self._lock:
            self._blocked[ident] = cb.name
            self._epoch += 1
        try:
            yield
        finally:
            with self._lock:
                self._blocked.pop(ident, None)
                self._epoch += 1

    def state(self) -> Tuple[int, bool]:
        """
        Return ``(epoch, all_blocked)``. The epoch changes whenever any activity
        starts, stops, blocks or unblocks.
        """
        with self._lock:
            live = set(self._active)
            stuck = bool(live) and live <= set(self._blocked)
            return self._epoch, stuck

    def blocked_activities(self) -> Dict[str, str]:
        "Map of blocked activity name to the buffer it waits on"
        with self._lock:
            return {
                self._active.get(ident, str(ident)): cb
                for ident, cb in self._blocked.items()
            }


class CircularBuffer:
    """
    A bounded single-producer single-consumer FIFO of tiles. The producer
    reserves space with :meth:`reserve_back` and publishes tiles with
    :meth:`push_back`; the consumer reads the front with :meth:`wait_front` and
    frees it with :meth:`pop_front`. Both sides block: a full buffer holds the
    producer back, an empty one holds the consumer.

    :type capacity:
        int
    :param capacity:
        Number of tile slots (default 2, double buffering)

    :type name:
        str
    :param name:
        Label used in diagnostics (keyword-only argument)

    :type tracker:
        ActivityTracker
    :param tracker:
        Optional tracker informed whenever a caller blocks (keyword-only
        argument)
    """
    def __init__(self, capacity: int = DEFAULT_CB_CAPACITY, *, name: str = 'cb',
                 tracker: Optional[ActivityTracker] = None):
        if capacity < 1:
            raise CBConfigurationError(f"{name}: capacity must be at least 1, got {capacity}")
        self._capacity = capacity
        self._name = name
        self._tracker = tracker
        self._cond = threading.Condition()
        self._slots = deque()
        self._reserved = 0
        self._shutdown = False
        self._pushed = 0
        self._popped = 0
        self._max_occupied = 0

    def __repr__(self):
        return (
            f"<{self.__class__.__name__} {self.name} "
            f"{self.occupied}/{self.capacity}>"
        )

    @property
    def name(self) -> str:
        return self._name

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def occupied(self) -> int:
        "Number of tiles pushed and not yet popped"
        return len(self._slots)

    @property
    def reserved(self) -> int:
        "Number of slots reserved by the producer and not yet pushed"
        return self._reserved

    @property
    def free(self) -> int:
        return self._capacity - len(self._slots) - self._reserved

    @property
    def max_occupied(self) -> int:
        "High-water mark of :attr:`occupied`"
        return self._max_occupied

    @property
    def pushed(self) -> int:
        return self._pushed

    @property
    def popped(self) -> int:
        return self._popped

    @property
    def is_shutdown(self) -> bool:
        return self._shutdown

    def _check_request(self, n_tiles: int, op: str):
        if n_tiles < 0:
            raise CBConfigurationError(f"{self.name}: {op} of {n_tiles} tiles")
        if n_tiles > self._capacity:
            raise CBConfigurationError(
                f"{self.name}: {op} of {n_tiles} tiles can never be satisfied "
                f"by a buffer of capacity {self._capacity}")

    def _check_invariants(self):
        occupied = len(self._slots)
        assert 0 <= occupied <= self._capacity, (
            f"{self.name}: occupancy {occupied} outside [0, {self._capacity}]")
        assert occupied + self._reserved <= self._capacity, (
            f"{self.name}: {occupied} occupied + {self._reserved} reserved "
            f"exceeds capacity {self._capacity}")

    def _wait_for(self, predicate):
        # called with self._cond held
        if self._shutdown:
            raise PipelineShutdown(f"{self.name} has been shut down")
        if predicate():
            return
        tracking = self._tracker.blocked(self) if self._tracker else nullcontext()
        with tracking:
            while not predicate():
                self._cond.wait()
                if self._shutdown:
                    raise PipelineShutdown(f"{self.name} has been shut down")

    def reserve_back(self, n_tiles: int = 1) -> int:
        """
        Block until *n_tiles* slots are free at the back of the buffer and
        reserve them for the producer. Returns the number of tiles reserved.
        """
        self._check_request(n_tiles, 'reserve')
        with self._cond:
            self._wait_for(lambda: self.free >= n_tiles)
            self._reserved += n_tiles
            self._check_invariants()
        return n_tiles

    def push_back(self, tiles: Union[Tile, Sequence[Tile]]):
        """
        Publish *tiles* into previously reserved slots, making them visible to
        the consumer in order.
        """
        if isinstance(tiles, Tile):
            tiles = (tiles, )
        with self._cond:
            if len(tiles) > self._reserved:
                raise CBContractViolation(
                    f"{self.name}: push of {len(tiles)} tiles with only "
                    f"{self._reserved} reserved")
            self._slots.extend(tiles)
            self._reserved -= len(tiles)
            self._pushed += len(tiles)
            if len(self._slots) > self._max_occupied:
                self._max_occupied = len(self._slots)
            self._check_invariants()
            self._cond.notify_all()

    def wait_front(self, n_tiles: int = 1) -> List[Tile]:
        """
        Block until *n_tiles* tiles are visible and return them without
        consuming them.
        """
        self._check_request(n_tiles, 'wait')
        with self._cond:
            self._wait_for(lambda: len(self._slots) >= n_tiles)
            return list(islice(self._slots, 0, n_tiles))

    def pop_front(self, n_tiles: int = 1):
        """
        Free the *n_tiles* tiles at the front of the buffer, waking a producer
        waiting for space.
        """
        self._check_request(n_tiles, 'pop')
        with self._cond:
            if n_tiles > len(self._slots):
                raise CBContractViolation(
                    f"{self.name}: pop of {n_tiles} tiles with only "
                    f"{len(self._slots)} occupied")
            for _ in range(n_tiles):
                self._slots.popleft()
            self._popped += n_tiles
            self._check_invariants()
            self._cond.notify_all()

    def shutdown(self):
        "Wake every blocked caller with :exc:`~tilenbody.exc.PipelineShutdown`"
        logger.debug("Shutting down %s", self.name)
        with self._cond:
            self._shutdown = True
            self._cond.notify_all()


def cb_reserve_back(cb: CircularBuffer, n_tiles: int) -> int:
    return cb.reserve_back(n_tiles)


def cb_push_back(cb: CircularBuffer, tiles: Union[Tile, Sequence[Tile]]):
    cb.push_back(tiles)


def cb_wait_front(cb: CircularBuffer, n_tiles: int) -> List[Tile]:
    return cb.wait_front(n_tiles)


def cb_pop_front(cb: CircularBuffer, n_tiles: int):
    cb.pop_front(n_tiles)
