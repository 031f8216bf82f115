"""Bucket files, frontiers and successor caches.

Layout on disk::

    <run-dir>/<F|B>/<open|closed>/<component><value>-....bkt
    <run-dir>/manifest.tsv

A bucket file is a flat array of fixed-width little-endian records with no
header, so a file of ``n`` records is exactly ``n * width`` bytes and any
record range can be read by offset arithmetic.
"""
from __future__ import annotations

import heapq
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import encoding
from .errors import CapacityError, CorruptionError, StorageError
from .types import INFINITY, Direction

COMPONENT_LIMIT = 1 << 16
DEFAULT_CACHE_CAPACITY = 4096


# ---------------------------------------------------------------------------
# Identifier schemes

class IdScheme:
    """How node annotations map to bucket identifiers and bucket priorities.

    ``labels`` name the key components; ``g`` is always the first one.
    """

    name = "abstract"
    labels: tuple[str, ...] = ()
    needs_both_h = False

    def child_keys(self, g: int, h_fwd, h_bwd, direction: Direction) -> np.ndarray:
        """Key columns (without g) for children at level ``g``, as (N, k-1)."""
        raise NotImplementedError

    def f_value(self, key: tuple, direction: Direction) -> float:
        raise NotImplementedError

    def b_value(self, key: tuple, direction: Direction) -> float:
        return INFINITY

    def pr_value(self, key: tuple, direction: Direction) -> float:
        return max(self.f_value(key, direction), 2 * key[0])

    def primary(self, key: tuple, direction: Direction) -> float:
        raise NotImplementedError

    def dd_group(self, key: tuple):
        """Same-direction closed buckets that may share states live in this group."""
        return ()

    def dsd_group(self, key: tuple):
        """Group of opposite-direction buckets worth scanning, ``None`` for all."""
        return None

    def priority(self, key: tuple, direction: Direction, higher_g_first: bool) -> tuple:
        g = key[0]
        return (self.primary(key, direction), -g if higher_g_first else g,
                *key[1:], int(direction))


class GHScheme(IdScheme):
    """``(g, h)`` buckets ordered by ``f = g + h`` (A*-style)."""

    name = "g-h"
    labels = ("g", "h")

    def child_keys(self, g, h_fwd, h_bwd, direction):
        h = h_fwd if direction is Direction.FORWARD else h_bwd
        return np.asarray(h, dtype=np.int64)[:, None]

    def f_value(self, key, direction):
        return key[0] + key[1]

    def primary(self, key, direction):
        return key[0] + key[1]

    def dd_group(self, key):
        return (key[1],)


class GPrScheme(IdScheme):
    """``(g, pr)`` buckets ordered by ``pr = max(f, 2g)``.

    The identifier keeps only pr, so f is recovered as a lower bound: when
    ``pr > 2g`` it equals f, otherwise f is only known to be at least g.
    """

    name = "g-pr"
    labels = ("g", "pr")

    def child_keys(self, g, h_fwd, h_bwd, direction):
        h = h_fwd if direction is Direction.FORWARD else h_bwd
        h = np.asarray(h, dtype=np.int64)
        return np.maximum(g + h, 2 * g)[:, None]

    def f_value(self, key, direction):
        g, pr = key
        return pr if pr > 2 * g else g

    def pr_value(self, key, direction):
        return key[1]

    def primary(self, key, direction):
        return key[1]


class GHHScheme(IdScheme):
    """``(g, hF, hB)`` buckets ordered by ``b = 2g + h_D - h_opposite``."""

    name = "g-hf-hb"
    labels = ("g", "hf", "hb")
    needs_both_h = True

    def child_keys(self, g, h_fwd, h_bwd, direction):
        return np.stack([np.asarray(h_fwd, dtype=np.int64),
                         np.asarray(h_bwd, dtype=np.int64)], axis=1)

    def _h(self, key, direction):
        _, hf, hb = key
        return (hf, hb) if direction is Direction.FORWARD else (hb, hf)

    def f_value(self, key, direction):
        return key[0] + self._h(key, direction)[0]

    def b_value(self, key, direction):
        h_own, h_opp = self._h(key, direction)
        return 2 * key[0] + h_own - h_opp

    def primary(self, key, direction):
        return self.b_value(key, direction)

    def dd_group(self, key):
        return (key[1], key[2])

    def dsd_group(self, key):
        return (key[1], key[2])


SCHEMES = {s.name: s for s in (GHScheme(), GPrScheme(), GHHScheme())}


# ---------------------------------------------------------------------------
# Records

@dataclass(frozen=True, order=True)
class BucketId:
    direction: Direction
    key: tuple
    partition: int | None = None

    def filename(self, labels: tuple[str, ...]) -> str:
        parts = [f"{lab}{v}" for lab, v in zip(labels, self.key)]
        if self.partition is not None:
            parts.append(f"p{self.partition}")
        return "-".join(parts) + ".bkt"

    @property
    def g(self) -> int:
        return self.key[0]


class InstrumentedLock:
    """A mutex that records its holder so overlapping ownership is detectable."""

    def __init__(self, name: str = ""):
        self.name = name
        self._lock = threading.Lock()
        self.holder: int | None = None
        self.acquisitions = 0
        self.violations = 0

    def __enter__(self):
        self._lock.acquire()
        if self.holder is not None:
            self.violations += 1
        self.holder = threading.get_ident()
        self.acquisitions += 1
        return self

    def __exit__(self, *exc):
        self.holder = None
        self._lock.release()
        return False


OPEN, CLOSED = "open", "closed"


@dataclass
class BucketRecord:
    id: BucketId
    path: Path
    width: int
    node_count: int = 0
    status: str = OPEN
    lock: InstrumentedLock = field(default_factory=InstrumentedLock, repr=False)

    @property
    def nbytes(self) -> int:
        return self.node_count * self.width

    def file_count(self) -> int:
        """Record count derived from the file length (consistency checks)."""
        try:
            size = self.path.stat().st_size
        except FileNotFoundError:
            return 0
        if size % self.width:
            raise CorruptionError(
                f"{self.path}: length {size} is not a multiple of record width {self.width}")
        return size // self.width


# ---------------------------------------------------------------------------
# Frontiers

@dataclass(frozen=True)
class FrontierStats:
    f_min: float = INFINITY
    g_min: float = INFINITY
    b_min: float = INFINITY
    pr_min: float = INFINITY
    total_nodes: int = 0


class Frontier:
    """Open or closed list of one direction: bucket records keyed by id key.

    Statistics are kept incrementally with lazy-deletion heaps; :meth:`recompute`
    derives them from scratch for cross-checking.
    """

    def __init__(self, direction: Direction, status: str, scheme: IdScheme,
                 higher_g_first: bool = False):
        self.direction = Direction(direction)
        self.status = status
        self.scheme = scheme
        self.higher_g_first = higher_g_first
        self.records: dict[tuple, BucketRecord] = {}
        self.groups: dict[tuple, set] = {}
        self.lock = threading.Lock()
        self.total_nodes = 0
        self._heaps: dict[str, list] = {k: [] for k in ("f", "g", "b", "pr", "order")}

    def __len__(self):
        return len(self.records)

    def __contains__(self, key):
        return tuple(key) in self.records

    def __iter__(self) -> Iterator[BucketRecord]:
        return iter(list(self.records.values()))

    def get(self, key) -> BucketRecord | None:
        return self.records.get(tuple(key))

    def add(self, rec: BucketRecord) -> None:
        key = rec.id.key
        if key in self.records:
            raise ValueError(f"duplicate bucket {rec.id}")
        self.records[key] = rec
        self.groups.setdefault(self.scheme.dd_group(key), set()).add(key)
        self.total_nodes += rec.node_count
        s, d = self.scheme, self.direction
        heapq.heappush(self._heaps["f"], (s.f_value(key, d), key))
        heapq.heappush(self._heaps["g"], (key[0], key))
        heapq.heappush(self._heaps["b"], (s.b_value(key, d), key))
        heapq.heappush(self._heaps["pr"], (s.pr_value(key, d), key))
        heapq.heappush(self._heaps["order"], (s.priority(key, d, self.higher_g_first), key))

    def get_or_create(self, key, factory: Callable[[], BucketRecord]) -> BucketRecord:
        key = tuple(key)
        with self.lock:
            rec = self.records.get(key)
            if rec is None:
                rec = factory()
                self.add(rec)
            return rec

    def remove(self, key) -> BucketRecord:
        key = tuple(key)
        rec = self.records.pop(key)
        grp = self.groups.get(self.scheme.dd_group(key))
        if grp is not None:
            grp.discard(key)
            if not grp:
                del self.groups[self.scheme.dd_group(key)]
        self.total_nodes -= rec.node_count
        return rec

    def add_nodes(self, n: int) -> None:
        with self.lock:
            self.total_nodes += n

    def _top(self, name: str):
        heap = self._heaps[name]
        while heap and heap[0][1] not in self.records:
            heapq.heappop(heap)
        return heap[0] if heap else None

    def best(self) -> BucketRecord | None:
        top = self._top("order")
        return None if top is None else self.records[top[1]]

    def best_priority(self) -> tuple | float:
        top = self._top("order")
        return INFINITY if top is None else top[0]

    def stats(self) -> FrontierStats:
        vals = {}
        for name in ("f", "g", "b", "pr"):
            top = self._top(name)
            vals[name] = INFINITY if top is None else top[0]
        return FrontierStats(vals["f"], vals["g"], vals["b"], vals["pr"], self.total_nodes)

    def recompute(self) -> FrontierStats:
        if not self.records:
            return FrontierStats()
        s, d = self.scheme, self.direction
        keys = list(self.records)
        return FrontierStats(
            min(s.f_value(k, d) for k in keys), min(k[0] for k in keys),
            min(s.b_value(k, d) for k in keys), min(s.pr_value(k, d) for k in keys),
            sum(r.node_count for r in self.records.values()))

    def in_group(self, group) -> list[BucketRecord]:
        if group is None:
            return list(self.records.values())
        return [self.records[k] for k in sorted(self.groups.get(group, ()))]


def frontier_stats(frontier: Frontier) -> FrontierStats:
    return frontier.stats()


# ---------------------------------------------------------------------------
# Memory accounting

class MemoryAccount:
    """Tracks bytes held by the loaded bucket and the successor caches."""

    def __init__(self, budget: int):
        self.budget = int(budget)
        self.used = 0
        self.peak = 0
        self._lock = threading.Lock()

    def reserve(self, nbytes: int, what: str) -> None:
        with self._lock:
            if self.used + nbytes > self.budget:
                raise CapacityError(
                    f"{what} needs {nbytes} bytes but only {self.budget - self.used} of the "
                    f"{self.budget}-byte memory budget remain")
            self.used += nbytes
            self.peak = max(self.peak, self.used)

    def release(self, nbytes: int) -> None:
        with self._lock:
            self.used -= nbytes


# ---------------------------------------------------------------------------
# The store

class BucketStore:
    """Owns the run directory and the four frontiers of a search."""

    def __init__(self, run_dir: str | Path, width: int, scheme: IdScheme, *,
                 higher_g_first: bool = False, memory: MemoryAccount | None = None):
        self.run_dir = Path(run_dir)
        self.width = int(width)
        self.scheme = scheme
        self.memory = memory or MemoryAccount(1 << 62)
        self.open = {d: Frontier(d, OPEN, scheme, higher_g_first) for d in Direction}
        self.closed = {d: Frontier(d, CLOSED, scheme, higher_g_first) for d in Direction}
        self.bytes_written = 0
        try:
            for d in Direction:
                for status in (OPEN, CLOSED):
                    (self.run_dir / d.letter / status).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create bucket directory {self.run_dir}: {exc}") from exc

    # -- naming ------------------------------------------------------------
    def path_for(self, bid: BucketId, status: str) -> Path:
        for v in bid.key:
            if not 0 <= v < COMPONENT_LIMIT:
                raise StorageError(f"bucket component out of range in {bid}")
        return self.run_dir / bid.direction.letter / status / bid.filename(self.scheme.labels)

    def _new_record(self, bid: BucketId, status: str) -> BucketRecord:
        return BucketRecord(bid, self.path_for(bid, status), self.width, 0, status,
                            InstrumentedLock(str(bid)))

    # -- writes --------------------------------------------------------------
    def _append(self, rec: BucketRecord, rows: np.ndarray) -> None:
        rows = np.ascontiguousarray(rows, dtype=np.uint8)
        if rows.ndim != 2 or rows.shape[1] != self.width:
            raise ValueError(f"rows must be (N, {self.width})")
        try:
            with open(rec.path, "ab") as fh:
                fh.write(rows.tobytes())
        except OSError as exc:
            raise StorageError(f"write to bucket {rec.id} failed: {exc}") from exc

    def append_open(self, bid: BucketId, rows: np.ndarray) -> BucketRecord:
        """Append records to an open bucket, creating it on first use."""
        frontier = self.open[bid.direction]
        rec = frontier.get_or_create(bid.key, lambda: self._new_record(bid, OPEN))
        with rec.lock:
            self._append(rec, rows)
            rec.node_count += len(rows)
        frontier.add_nodes(len(rows))
        with frontier.lock:
            self.bytes_written += rows.nbytes
        return rec

    def write_closed(self, bid: BucketId, rows: np.ndarray) -> BucketRecord:
        """Store the expanded states of a bucket in the closed list.

        If the id is already closed (a reopened bucket) the old and new records
        are merged into a fresh file that atomically replaces the old one.
        """
        frontier = self.closed[bid.direction]
        rows = np.ascontiguousarray(rows, dtype=np.uint8)
        rec = frontier.get(bid.key)
        if rec is None:
            rec = self._new_record(bid, CLOSED)
            if len(rows):
                with rec.lock:
                    self._append(rec, rows)
            rec.node_count = len(rows)
            with frontier.lock:
                frontier.add(rec)
            return rec
        tmp = rec.path.with_suffix(".merge")
        try:
            with rec.lock:
                old = read_records(rec)
                merged = np.concatenate([old, rows]) if len(old) else rows
                with open(tmp, "wb") as fh:
                    fh.write(merged.tobytes())
                os.replace(tmp, rec.path)
                with frontier.lock:
                    frontier.total_nodes += len(merged) - rec.node_count
                rec.node_count = len(merged)
        except OSError as exc:
            raise StorageError(f"merge of closed bucket {bid} failed: {exc}") from exc
        return rec

    def put_open(self, bid: BucketId, rows: np.ndarray) -> BucketRecord:
        return self.append_open(bid, rows)

    def take_open(self, bid: BucketId) -> BucketRecord:
        frontier = self.open[bid.direction]
        with frontier.lock:
            return frontier.remove(bid.key)

    def discard(self, rec: BucketRecord) -> None:
        try:
            rec.path.unlink(missing_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot remove {rec.path}: {exc}") from exc

    # -- accounting ----------------------------------------------------------
    def disk_bytes(self) -> int:
        total = 0
        for group in (self.open, self.closed):
            for frontier in group.values():
                total += frontier.total_nodes * self.width
        return total

    def write_manifest(self) -> Path:
        path = self.run_dir / "manifest.tsv"
        lines = ["direction\tstatus\tid\tcount"]
        for group in (self.open, self.closed):
            for d, frontier in group.items():
                for rec in sorted(frontier, key=lambda r: r.id.key):
                    ident = ",".join(str(v) for v in rec.id.key)
                    lines.append(f"{d.letter}\t{frontier.status}\t{ident}\t{rec.node_count}")
        try:
            path.write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise StorageError(f"cannot write manifest: {exc}") from exc
        return path

    def lock_violations(self) -> int:
        total = 0
        for group in (self.open, self.closed):
            for frontier in group.values():
                total += sum(r.lock.violations for r in frontier)
        return total


# ---------------------------------------------------------------------------
# Reads

def read_records(rec: BucketRecord, start: int = 0, count: int | None = None) -> np.ndarray:
    """Read ``count`` records starting at record ``start`` as (N, width) bytes."""
    width = rec.width
    total = rec.file_count()
    if count is None:
        count = total - start
    if start < 0 or start + count > total:
        raise CorruptionError(
            f"{rec.path}: requested records [{start}, {start + count}) but file holds {total}")
    if count == 0:
        return np.empty((0, width), dtype=np.uint8)
    try:
        raw = np.fromfile(rec.path, dtype=np.uint8, count=count * width, offset=start * width)
    except OSError as exc:
        raise CorruptionError(f"{rec.path}: read failed: {exc}") from exc
    if raw.size != count * width:
        raise CorruptionError(f"{rec.path}: short read at record {start}")
    return raw.reshape(count, width)


def segments(total: int, parts: int, *, step: int | None = None) -> list[tuple[int, int]]:
    """Split ``[0, total)`` into contiguous ``(start, count)`` ranges.

    With ``step`` the ranges have that size (last one shorter); otherwise there
    are ``parts`` nearly equal ranges.
    """
    if total <= 0:
        return []
    if step is None:
        parts = max(1, min(parts, total))
        bounds = np.linspace(0, total, parts + 1).astype(np.int64)
        return [(int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    step = max(1, int(step))
    return [(s, min(step, total - s)) for s in range(0, total, step)]


def validate_keys(keys: np.ndarray, n_states: int, rec: BucketRecord, offset: int) -> None:
    """Cheap range check of packed codes (full decoding happens at expansion)."""
    if keys.dtype != np.uint64 or n_states >= 1 << 64:
        return
    bad = keys >= np.uint64(n_states)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise CorruptionError(f"{rec.path}: record {offset + first} encodes no legal state")


def parallel_read_bucket(rec: BucketRecord, workers: int, table, *, pool=None,
                         n_states: int | None = None):
    """Load a bucket file into ``table`` with ``workers`` disjoint record ranges.

    ``table`` is an :class:`~pembihs.dedup.InMemoryBucket`; each worker inserts
    its own range.  Returns the table.
    """
    total = rec.file_count()
    ranges = segments(total, workers)

    def load(rng):
        start, count = rng
        rows = read_records(rec, start, count)
        keys = encoding.rows_to_keys(rows)
        if n_states is not None:
            validate_keys(keys, n_states, rec, start)
        table.insert_many(keys)
        return count

    if pool is None or len(ranges) <= 1:
        for r in ranges:
            load(r)
    else:
        list(pool.map(load, ranges))
    return table


# ---------------------------------------------------------------------------
# Successor caches

class SuccessorCache:
    """Per-worker staging arrays, one per target bucket, flushed when full."""

    def __init__(self, owner: int, store: BucketStore, capacity: int = DEFAULT_CACHE_CAPACITY,
                 *, dedup: bool = False):
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.owner = owner
        self.store = store
        self.capacity = int(capacity)
        self.dedup = dedup
        self.width = store.width
        self._arrays: dict[BucketId, np.ndarray] = {}
        self._fill: dict[BucketId, int] = {}
        self.added = 0
        self.flushed = 0
        self.flushes = 0

    def _array(self, bid: BucketId) -> np.ndarray:
        arr = self._arrays.get(bid)
        if arr is None:
            nbytes = self.capacity * self.width
            self.store.memory.reserve(nbytes, f"successor cache of worker {self.owner}")
            arr = np.empty((self.capacity, self.width), dtype=np.uint8)
            self._arrays[bid] = arr
            self._fill[bid] = 0
        return arr

    def add(self, bid: BucketId, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.uint8)
        self.added += len(rows)
        pos = 0
        while pos < len(rows):
            arr = self._array(bid)
            fill = self._fill[bid]
            take = min(self.capacity - fill, len(rows) - pos)
            arr[fill:fill + take] = rows[pos:pos + take]
            self._fill[bid] = fill + take
            pos += take
            if self._fill[bid] == self.capacity:
                self.flush(bid)

    def flush(self, bid: BucketId) -> None:
        fill = self._fill.get(bid, 0)
        if fill == 0:
            return
        rows = self._arrays[bid][:fill]
        if self.dedup:
            rows = np.unique(rows, axis=0)
        self.store.append_open(bid, rows)
        self.flushed += len(rows)
        self.flushes += 1
        self._fill[bid] = 0

    def flush_all(self) -> None:
        for bid in sorted(self._arrays):
            self.flush(bid)

    def release(self) -> None:
        self.flush_all()
        self.store.memory.release(len(self._arrays) * self.capacity * self.width)
        self._arrays.clear()
        self._fill.clear()


def flush_cache(cache: SuccessorCache, target: BucketId) -> None:
    cache.flush(target)
