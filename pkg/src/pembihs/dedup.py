"""Duplicate and solution detection.

The loaded bucket lives in an open-addressing hash table split into slot
groups.  A key's group comes from the high hash bits and its home slot from the
low bits, so each group is an independent linear-probing table guarded by its
own lock.  Inserts are processed a batch at a time with numpy: every pending
key probes one slot per round, the first pending key aiming at an empty slot
claims it, and keys that meet an equal key become duplicates.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import encoding
from .errors import CapacityError
from .storage import BucketRecord, MemoryAccount, read_records, segments
from .types import INFINITY

SLOTS_PER_LOCK = 64
MAX_LOAD = 0.5
GROW_LOAD = 0.8


class InsertResult(Enum):
    INSERTED = "inserted"
    DUPLICATE = "duplicate"


def _pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


class _Group:
    __slots__ = ("keys", "used", "removed", "mask", "count", "lock")

    def __init__(self, slots: int, dtype):
        self.keys = np.zeros(slots, dtype=dtype)
        self.used = np.zeros(slots, dtype=bool)
        self.removed = np.zeros(slots, dtype=bool)
        self.mask = np.uint64(slots - 1)
        self.count = 0
        self.lock = threading.Lock()


class InMemoryBucket:
    """Set of packed states with concurrent batch insertion.

    ``capacity`` is the number of records the bucket file holds; the table is
    sized so that it never needs to evict.  ``groups`` defaults to one group for
    a single worker and a few per worker otherwise.
    """

    def __init__(self, capacity: int, width: int, *, workers: int = 1,
                 groups: int | None = None, memory: MemoryAccount | None = None):
        self.width = int(width)
        self.dtype = encoding.key_dtype(self.width)
        capacity = max(1, int(capacity))
        if groups is None:
            groups = 1 if workers <= 1 else 4 * _pow2(workers)
        # never fewer than SLOTS_PER_LOCK slots behind one lock
        max_groups = max(1, _pow2(capacity) // SLOTS_PER_LOCK)
        self.n_groups = max(1, min(_pow2(groups), max_groups))
        per_group = capacity / self.n_groups
        slots = max(SLOTS_PER_LOCK, _pow2(int(per_group / MAX_LOAD) + 16))
        self.slots_per_group = slots
        self.nbytes = self.n_groups * slots * (self.dtype.itemsize + 2)
        self.memory = memory
        if memory is not None:
            memory.reserve(self.nbytes, f"hash table for {capacity} records")
        self.groups = [_Group(slots, self.dtype) for _ in range(self.n_groups)]
        self._shift = np.uint64(64 - max(1, (self.n_groups - 1).bit_length())) \
            if self.n_groups > 1 else None
        self.inserted = 0
        self.duplicates = 0
        self._stat_lock = threading.Lock()

    def release(self):
        if self.memory is not None and self.nbytes:
            self.memory.release(self.nbytes)
            self.nbytes = 0

    def __len__(self):
        return sum(g.count for g in self.groups) - self.removed_count()

    def removed_count(self) -> int:
        return sum(int(g.removed.sum()) for g in self.groups)

    # -- hashing -------------------------------------------------------------
    def _split(self, keys: np.ndarray):
        h = encoding.hash_keys(keys)
        if self._shift is None:
            return None, h
        return (h >> self._shift).astype(np.int64), h

    def _by_group(self, keys):
        grp, h = self._split(keys)
        if grp is None:
            yield self.groups[0], np.arange(len(keys)), h
            return
        order = np.argsort(grp, kind="stable")
        sg = grp[order]
        cuts = np.flatnonzero(np.diff(sg)) + 1
        for part in np.split(order, cuts):
            if part.size:
                yield self.groups[int(grp[part[0]])], part, h[part]

    # -- probing -------------------------------------------------------------
    @staticmethod
    def _find(group: _Group, keys, h) -> np.ndarray:
        """Slot of each key, or -1 if absent."""
        pos = h & group.mask
        out = np.full(len(keys), -1, dtype=np.int64)
        pending = np.arange(len(keys))
        for _ in range(len(group.used)):
            if pending.size == 0:
                break
            p = pos[pending].astype(np.int64)
            occ = group.used[p]
            hit = occ & (group.keys[p] == keys[pending])
            out[pending[hit]] = p[hit]
            go = occ & ~hit
            pending = pending[go]
            pos[pending] = (p[go].astype(np.uint64) + np.uint64(1)) & group.mask
        return out

    def _insert_group(self, group: _Group, keys, h) -> np.ndarray:
        n = len(keys)
        if group.count + n > GROW_LOAD * len(group.used):
            self._grow(group, group.count + n)
        pos = h & group.mask
        inserted = np.zeros(n, dtype=bool)
        pending = np.arange(n)
        while pending.size:
            p = pos[pending].astype(np.int64)
            occ = group.used[p]
            same = occ & (group.keys[p] == keys[pending])
            free = ~occ
            done = same.copy()
            if free.any():
                cand = pending[free]
                slots, first = np.unique(p[free], return_index=True)
                win = cand[first]
                group.keys[slots] = keys[win]
                group.used[slots] = True
                group.count += len(win)
                inserted[win] = True
                done[np.flatnonzero(free)[first]] = True
            move = occ & ~same
            pos[pending[move]] = (p[move].astype(np.uint64) + np.uint64(1)) & group.mask
            pending = pending[~done]
        return inserted

    def _grow(self, group: _Group, need: int) -> None:
        """Rehash one group into a larger slot array (skewed hash spread)."""
        slots = len(group.used)
        while need > GROW_LOAD * slots:
            slots *= 2
        extra = (slots - len(group.used)) * (self.dtype.itemsize + 2)
        if self.memory is not None:
            try:
                self.memory.reserve(extra, "hash table growth")
            except CapacityError as exc:
                raise CapacityError(f"hash table overflow: {exc}") from exc
        self.nbytes += extra
        live = group.used.copy()
        old_keys, old_removed = group.keys[live], group.removed[live]
        group.keys = np.zeros(slots, dtype=self.dtype)
        group.used = np.zeros(slots, dtype=bool)
        group.removed = np.zeros(slots, dtype=bool)
        group.mask = np.uint64(slots - 1)
        group.count = 0
        if len(old_keys):
            self._insert_group(group, old_keys, encoding.hash_keys(old_keys))
            slot = self._find(group, old_keys, encoding.hash_keys(old_keys))
            group.removed[slot[old_removed]] = True

    # -- public API ----------------------------------------------------------
    def insert_many(self, keys: np.ndarray) -> np.ndarray:
        """Insert a batch; returns a mask that is True where the key was new."""
        keys = np.ascontiguousarray(keys)
        if keys.dtype != self.dtype:
            raise TypeError(f"expected keys of dtype {self.dtype}, got {keys.dtype}")
        result = np.zeros(len(keys), dtype=bool)
        for group, idx, h in self._by_group(keys):
            with group.lock:
                result[idx] = self._insert_group(group, keys[idx], h)
        n_new = int(result.sum())
        with self._stat_lock:
            self.inserted += n_new
            self.duplicates += len(keys) - n_new
        return result

    def insert(self, key) -> InsertResult:
        arr = np.asarray([key], dtype=self.dtype)
        return InsertResult.INSERTED if self.insert_many(arr)[0] else InsertResult.DUPLICATE

    def contains(self, keys: np.ndarray, *, include_removed: bool = False) -> np.ndarray:
        keys = np.ascontiguousarray(keys)
        out = np.zeros(len(keys), dtype=bool)
        for group, idx, h in self._by_group(keys):
            slot = self._find(group, keys[idx], h)
            found = slot >= 0
            if not include_removed:
                found[found] &= ~group.removed[slot[found]]
            out[idx] = found
        return out

    def remove_many(self, keys: np.ndarray) -> int:
        """Mark keys as removed; returns how many live keys were removed."""
        keys = np.ascontiguousarray(keys)
        removed = 0
        for group, idx, h in self._by_group(keys):
            with group.lock:
                slot = self._find(group, keys[idx], h)
                slot = np.unique(slot[slot >= 0])
                live = slot[~group.removed[slot]]
                group.removed[live] = True
                removed += len(live)
        return removed

    def keys(self) -> np.ndarray:
        """Surviving keys in table order (deterministic for a given insert order)."""
        parts = [g.keys[g.used & ~g.removed] for g in self.groups]
        if not parts:
            return np.empty(0, dtype=self.dtype)
        return np.concatenate(parts)

    def rows(self) -> np.ndarray:
        return encoding.keys_to_rows(self.keys(), self.width)


def in_bucket_insert(bucket: InMemoryBucket, key) -> InsertResult:
    return bucket.insert(key)


# ---------------------------------------------------------------------------
# Closed-list scans

def g_level_filter(records: list[BucketRecord], g: int, *, unit_cost: bool,
                   undirected: bool) -> list[BucketRecord]:
    """Keep closed buckets at g-2, g-1 or g when the domain allows the shortcut.

    In a unit-cost undirected graph a duplicate of a node at depth x is either
    its parent's parent-level copy (x-2 via a parent regenerating), a sibling
    level copy from an odd cycle (x-1), or a same-level copy from an even cycle
    (x).  Anything deeper back would contradict the breadth-first g-layering.
    """
    if not (unit_cost and undirected):
        return records
    return [r for r in records if g - 2 <= r.id.key[0] <= g]


def scan_tasks(records: list[BucketRecord], step: int) -> list[tuple[BucketRecord, int, int]]:
    tasks = []
    for rec in records:
        for start, count in segments(rec.node_count, 1, step=step):
            tasks.append((rec, start, count))
    return tasks


def _run(tasks, fn, pool):
    if pool is None or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    return list(pool.map(fn, tasks))


def remove_duplicates_vs_closed(bucket: InMemoryBucket, records: list[BucketRecord], *,
                                step: int, pool=None) -> int:
    """Remove from ``bucket`` every state stored in ``records`` (closed buckets).

    ``records`` must already be restricted to the identifier-compatible buckets;
    files are read in segments of ``step`` records.
    """
    def scan(task):
        rec, start, count = task
        keys = encoding.rows_to_keys(read_records(rec, start, count))
        hit = bucket.contains(keys)
        return bucket.remove_many(keys[hit]) if hit.any() else 0

    return int(sum(_run(scan_tasks(records, step), scan, pool)))


class AtomicMin:
    def __init__(self, value=INFINITY):
        self.value = value
        self._lock = threading.Lock()

    def update(self, candidate) -> None:
        with self._lock:
            if candidate < self.value:
                self.value = candidate


def check_for_solution_delayed(bucket: InMemoryBucket, g: int, records: list[BucketRecord],
                               U, *, step: int, pool=None):
    """Delayed solution detection against opposite closed buckets.

    Every state found both in ``bucket`` (cost ``g``) and in an opposite closed
    bucket at level ``g'`` gives the candidate ``g + g'``.  Buckets that cannot
    beat the incumbent are skipped.  Returns the new incumbent.
    """
    best = AtomicMin(U)
    useful = [r for r in records if g + r.id.key[0] < U]

    def scan(task):
        rec, start, count = task
        if g + rec.id.key[0] >= best.value:
            return
        keys = encoding.rows_to_keys(read_records(rec, start, count))
        if bucket.contains(keys).any():
            best.update(g + rec.id.key[0])

    # cheapest candidates first so later segments can be skipped
    useful.sort(key=lambda r: r.id.key[0])
    _run(scan_tasks(useful, step), scan, pool)
    return best.value


@dataclass
class TargetIndex:
    """Membership index for immediate detection: the opposite side's root."""

    key: object

    def matches(self, keys: np.ndarray) -> np.ndarray:
        return keys == self.key


def check_for_solution_immediate(keys: np.ndarray, g: int, index: TargetIndex, U):
    """Immediate detection on generation; ``keys`` are the generated children."""
    if len(keys) and bool(np.any(index.matches(keys))):
        return min(U, g)
    return U
