"""The generic external-memory bidirectional search driver.

One cycle of :func:`run_search` is, in this fixed order: choose a direction,
choose that side's best open bucket, read it into memory (removing in-bucket
duplicates), remove states already closed in the same direction, detect
meetings with the opposite closed list, expand, move the bucket to closed and
recompute the lower bound.  The loop stops once the incumbent cost ``U`` is no
larger than the bound or an open list runs dry.

Every algorithm in the PEM family is a :class:`SearchPolicy` handed to the same
driver.
"""
from __future__ import annotations

import math
import os
import shutil
import tempfile
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import encoding
from .dedup import (InMemoryBucket, TargetIndex, check_for_solution_delayed,
                    check_for_solution_immediate, g_level_filter,
                    remove_duplicates_vs_closed)
from .domains import ProblemInstance
from .errors import InputError, SearchTimeout, StorageError
from .heuristics import H_INFINITY, ZeroHeuristic
from .storage import (DEFAULT_CACHE_CAPACITY, SCHEMES, BucketId, BucketStore, Frontier,
                      FrontierStats, IdScheme, MemoryAccount, SuccessorCache,
                      parallel_read_bucket, segments)
from .types import INFINITY, Direction, opposite

__all__ = [
    "Direction", "opposite", "INFINITY", "NodeAnnotation", "DirectionRule", "PriorityRule",
    "LowerBoundRule", "SolutionDetection", "TieBreak", "SearchPolicy", "EngineConfig",
    "SearchOutcome", "run_search", "compute_lower_bound", "choose_direction",
    "choose_next_bucket",
]


@dataclass(frozen=True)
class NodeAnnotation:
    g: int
    hF: int
    hB: int

    def __post_init__(self):
        if min(self.g, self.hF, self.hB) < 0:
            raise InputError("annotations must be non-negative")

    def _h(self, direction):
        return (self.hF, self.hB) if Direction(direction) is Direction.FORWARD else (self.hB, self.hF)

    def f(self, direction) -> int:
        return self.g + self._h(direction)[0]

    def d(self, direction) -> int:
        return self.g - self._h(direction)[1]

    def b(self, direction) -> int:
        return self.f(direction) + self.d(direction)

    def pr(self, direction) -> int:
        return max(self.f(direction), 2 * self.g)


class DirectionRule(Enum):
    ALWAYS_FORWARD = "always-forward"
    ALWAYS_BACKWARD = "always-backward"
    ALTERNATE = "alternate"
    MIN_PRIORITY = "min-priority"
    CARDINALITY = "cardinality"


class PriorityRule(Enum):
    F_VALUE = "g-h"       # f = g + h over (g, h) buckets
    MM = "g-pr"           # pr = max(f, 2g) over (g, pr) buckets
    BAE = "g-hf-hb"       # b = 2g + h_D - h_opp over (g, hF, hB) buckets

    @property
    def scheme(self) -> IdScheme:
        return SCHEMES[self.value]


class LowerBoundRule(Enum):
    FMIN = "fmin"
    MM_BOUND = "mm"
    B_BOUND = "b"


class SolutionDetection(Enum):
    IMMEDIATE = "immediate"
    DELAYED = "delayed"


class TieBreak(Enum):
    LOWER_G_FIRST = "lower-g"
    HIGHER_G_FIRST = "higher-g"


@dataclass(frozen=True)
class SearchPolicy:
    direction_rule: DirectionRule
    priority_rule: PriorityRule
    lower_bound_rule: LowerBoundRule
    solution_detection: SolutionDetection
    tie_break: TieBreak = TieBreak.LOWER_G_FIRST
    name: str = ""

    @property
    def scheme(self) -> IdScheme:
        return self.priority_rule.scheme

    @property
    def unidirectional(self) -> bool:
        return self.direction_rule in (DirectionRule.ALWAYS_FORWARD, DirectionRule.ALWAYS_BACKWARD)

    def replace(self, **kw) -> "SearchPolicy":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass
class EngineConfig:
    workers: int = 1
    memory_budget: int = 1 << 30
    run_dir: str | Path | None = None
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    cache_dedup: bool = False
    keep_buckets: bool = False
    # scan only closed buckets at g-2..g in unit-cost undirected domains
    restrict_g_levels: bool = True
    collect_closed: bool = False
    expand_batch: int = 1 << 15
    max_seconds: float | None = None
    # buckets smaller than this are processed on the calling thread
    inline_threshold: int = 2048

    def __post_init__(self):
        if self.workers < 1:
            raise InputError("workers must be at least 1")
        if self.memory_budget < 1 << 16:
            raise InputError("memory budget below 64 KiB")


@dataclass
class SearchOutcome:
    cost: float
    expanded: int = 0
    generated: int = 0
    elapsed_seconds: float = 0.0
    depth_histogram: dict = field(default_factory=lambda: {d: Counter() for d in Direction})
    peak_disk_bytes: int = 0
    lb_trace: list = field(default_factory=list)
    cycles: int = 0
    duplicates_in_bucket: int = 0
    duplicates_closed: int = 0
    lock_violations: int = 0
    closed: dict | None = None
    algorithm: str = ""
    # successors generated / written to open buckets, keyed by worker index
    worker_generated: Counter = field(default_factory=Counter)
    worker_stored: Counter = field(default_factory=Counter)

    @property
    def solved(self) -> bool:
        return self.cost != INFINITY

    def histogram(self, direction=None) -> Counter:
        if direction is not None:
            return Counter(self.depth_histogram[Direction(direction)])
        total = Counter()
        for d in Direction:
            total.update(self.depth_histogram[d])
        return total


# ---------------------------------------------------------------------------
# Policy pieces

def _stats(x) -> FrontierStats:
    if x is None:
        return FrontierStats()
    return x if isinstance(x, FrontierStats) else x.stats()


def compute_lower_bound(open_f, open_b, rule: LowerBoundRule,
                        direction: Direction = Direction.FORWARD) -> float:
    """Lower bound on the optimal cost from the two open lists.

    Arguments may be frontiers or precomputed :class:`FrontierStats`.  An empty
    side yields the infinity sentinel, which the caller reads as "halt".
    """
    sf, sb = _stats(open_f), _stats(open_b)
    if rule is LowerBoundRule.FMIN:
        return (sf if Direction(direction) is Direction.FORWARD else sb).f_min
    if rule is LowerBoundRule.MM_BOUND:
        pr_min = min(sf.pr_min, sb.pr_min)
        return max(pr_min, sf.f_min, sb.f_min, sf.g_min + sb.g_min)
    if rule is LowerBoundRule.B_BOUND:
        total = sf.b_min + sb.b_min
        return total if math.isinf(total) else math.floor(total / 2)
    raise ValueError(rule)


def _best_primary(frontier: Frontier) -> float:
    top = frontier.best_priority()
    return top if not isinstance(top, tuple) else top[0]


def choose_direction(open_f: Frontier, open_b: Frontier, rule: DirectionRule,
                     last: Direction) -> Direction:
    if rule is DirectionRule.ALWAYS_FORWARD:
        return Direction.FORWARD
    if rule is DirectionRule.ALWAYS_BACKWARD:
        return Direction.BACKWARD
    empty_f, empty_b = len(open_f) == 0, len(open_b) == 0
    if empty_f and empty_b:
        raise RuntimeError("both open lists are empty; the search should have halted")
    if empty_f or empty_b:
        return Direction.BACKWARD if empty_f else Direction.FORWARD
    if rule is DirectionRule.ALTERNATE:
        return Direction(last).opposite
    if rule is DirectionRule.MIN_PRIORITY:
        pf, pb = _best_primary(open_f), _best_primary(open_b)
        return Direction.BACKWARD if pb < pf else Direction.FORWARD
    if rule is DirectionRule.CARDINALITY:
        return Direction.BACKWARD if open_b.total_nodes < open_f.total_nodes else Direction.FORWARD
    raise ValueError(rule)


def choose_next_bucket(frontier: Frontier, priority_rule=None, tie_break=None):
    """Best open bucket; the frontier already orders by its scheme and tie rule."""
    if tie_break is not None:
        wanted = tie_break is TieBreak.HIGHER_G_FIRST
        if wanted != frontier.higher_g_first:
            scheme = frontier.scheme
            return min(frontier, key=lambda r: scheme.priority(r.id.key, frontier.direction, wanted))
    rec = frontier.best()
    if rec is None:
        raise RuntimeError("choose_next_bucket on an empty frontier")
    return rec


# ---------------------------------------------------------------------------
# The driver

class _Search:
    def __init__(self, problem: ProblemInstance, policy: SearchPolicy, config: EngineConfig):
        self.problem = problem
        self.domain = problem.domain
        self.policy = policy
        self.config = config
        self.scheme = policy.scheme
        self.width = self.domain.record_width
        self.heur = [problem.heuristic(d) or ZeroHeuristic(self.domain, problem.target(d))
                     for d in Direction]
        self.props = self.domain.properties()
        self.target_keys = [self.domain.key(problem.target(d)) for d in Direction]
        self.root_keys = [self.domain.key(problem.root(d)) for d in Direction]
        self.memory = MemoryAccount(config.memory_budget)
        self.scan_step = max(1024, config.memory_budget // 8 // self.width)
        self.outcome = SearchOutcome(INFINITY, algorithm=policy.name)
        if config.collect_closed:
            self.outcome.closed = {d: set() for d in Direction}
        self.U = INFINITY
        self.pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        self.deadline = None if config.max_seconds is None else time.monotonic() + config.max_seconds

    # -- helpers -------------------------------------------------------------
    def _h(self, direction: Direction, states: np.ndarray):
        return self.heur[int(direction)].evaluate(states).astype(np.int64)

    def _child_keys(self, g: int, states: np.ndarray, direction: Direction):
        """Key columns for states at level g and a mask of the unpruned ones."""
        if self.scheme.needs_both_h:
            hf, hb = self._h(Direction.FORWARD, states), self._h(Direction.BACKWARD, states)
            keep = (hf < H_INFINITY) & (hb < H_INFINITY)
        else:
            h = self._h(direction, states)
            hf = hb = h
            keep = h < H_INFINITY
        return self.scheme.child_keys(g, hf, hb, direction), keep

    def _pool_for(self, n: int):
        return self.pool if n >= self.config.inline_threshold else None

    def _check_time(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise SearchTimeout(f"search exceeded {self.config.max_seconds} s")

    # -- setup ---------------------------------------------------------------
    def _seed(self, store: BucketStore):
        p = self.policy
        if p.direction_rule is DirectionRule.ALWAYS_FORWARD:
            sides = [Direction.FORWARD]
        elif p.direction_rule is DirectionRule.ALWAYS_BACKWARD:
            sides = [Direction.BACKWARD]
        else:
            sides = list(Direction)
        for d in sides:
            root = self.problem.root(d)[None]
            cols, keep = self._child_keys(0, root, d)
            if not keep[0]:
                continue
            bid = BucketId(d, (0, *(int(v) for v in cols[0])))
            store.put_open(bid, self.domain.encode(root))
        return sides

    # -- stages --------------------------------------------------------------
    def _read(self, store: BucketStore, rec) -> InMemoryBucket:
        table = InMemoryBucket(rec.node_count, self.width, workers=self.config.workers,
                               memory=self.memory)
        parallel_read_bucket(rec, self.config.workers, table, pool=self._pool_for(rec.node_count),
                             n_states=self.domain.n_states)
        self.outcome.duplicates_in_bucket += table.duplicates
        return table

    def _closed_dd(self, store: BucketStore, table, bid: BucketId) -> int:
        frontier = store.closed[bid.direction]
        records = frontier.in_group(self.scheme.dd_group(bid.key))
        if self.config.restrict_g_levels:
            records = g_level_filter(records, bid.g, unit_cost=self.props.unit_cost,
                                     undirected=self.props.undirected)
        removed = remove_duplicates_vs_closed(table, records, step=self.scan_step,
                                              pool=self._pool_for(sum(r.node_count for r in records)))
        self.outcome.duplicates_closed += removed
        return removed

    def _delayed_detection(self, store: BucketStore, table, bid: BucketId):
        d = bid.direction
        if table.contains(np.asarray([self.root_keys[int(d.opposite)]], dtype=table.dtype))[0]:
            self.U = min(self.U, bid.g)
        group = self.scheme.dsd_group(bid.key)
        # open buckets too: a shortest path whose two frontiers touch on an
        # edge has no state closed on both sides until one end is expanded
        records = (store.closed[d.opposite].in_group(group)
                   + store.open[d.opposite].in_group(group))
        self.U = check_for_solution_delayed(
            table, bid.g, records, self.U, step=self.scan_step,
            pool=self._pool_for(sum(r.node_count for r in records)))

    def _expand_chunk(self, store: BucketStore, keys: np.ndarray, bid: BucketId, worker: int):
        d, g = bid.direction, bid.g
        cache = SuccessorCache(worker, store, self.config.cache_capacity,
                               dedup=self.config.cache_dedup)
        generated, best = 0, INFINITY
        immediate = self.policy.solution_detection is SolutionDetection.IMMEDIATE
        index = TargetIndex(self.target_keys[int(d)])
        try:
            for start, count in segments(len(keys), 1, step=self.config.expand_batch):
                rows = encoding.keys_to_rows(keys[start:start + count], self.width)
                states = self.domain.decode(rows, source=f"bucket {bid}", offset=start)
                children, _ = self.domain.expand(states)
                generated += len(children)
                if not len(children):
                    continue
                cols, keep = self._child_keys(g + 1, children, d)
                child_rows = self.domain.encode(children[keep])
                cols = cols[keep]
                if immediate:
                    best = min(best, check_for_solution_immediate(
                        encoding.rows_to_keys(child_rows), g + 1, index, INFINITY))
                self._route(cache, d, g + 1, cols, child_rows)
        finally:
            cache.release()
        return worker, generated, best, cache.flushed

    @staticmethod
    def _route(cache: SuccessorCache, d: Direction, g: int, cols: np.ndarray, rows: np.ndarray):
        if cols.shape[1] == 1:
            code = cols[:, 0]
        else:
            code = cols[:, 0] * (1 << 16) + cols[:, 1]
        order = np.argsort(code, kind="stable")
        sc = code[order]
        cuts = np.flatnonzero(np.diff(sc)) + 1
        starts = np.concatenate([[0], cuts])
        ends = np.concatenate([cuts, [len(sc)]])
        for a, b in zip(starts, ends):
            i = order[a]
            bid = BucketId(d, (g, *(int(v) for v in cols[i])))
            cache.add(bid, rows[order[a:b]])

    def _expand(self, store: BucketStore, keys: np.ndarray, bid: BucketId):
        workers = self.config.workers
        pool = self._pool_for(len(keys))
        if pool is None:
            results = [self._expand_chunk(store, keys, bid, 0)]
        else:
            parts = segments(len(keys), workers)
            futs = [pool.submit(self._expand_chunk, store, keys[s:s + c], bid, w)
                    for w, (s, c) in enumerate(parts)]
            results = [f.result() for f in futs]
        for worker, gen, _, stored in results:
            self.outcome.worker_generated[worker] += gen
            self.outcome.worker_stored[worker] += stored
        self.U = min(self.U, min((r[2] for r in results), default=INFINITY))
        return sum(r[1] for r in results)

    # -- main loop -----------------------------------------------------------
    def _halted(self, store: BucketStore, sides) -> bool:
        return any(len(store.open[d]) == 0 for d in sides)

    def _lower_bound(self, store: BucketStore, sides) -> float:
        direction = sides[0] if len(sides) == 1 else Direction.FORWARD
        return compute_lower_bound(store.open[Direction.FORWARD], store.open[Direction.BACKWARD],
                                   self.policy.lower_bound_rule, direction)

    def run(self) -> SearchOutcome:
        cfg = self.config
        base = cfg.run_dir if cfg.run_dir is not None else os.environ.get("PEMBIHS_RUN_DIR") or None
        try:
            if base is not None:
                Path(base).mkdir(parents=True, exist_ok=True)
            run_dir = Path(tempfile.mkdtemp(prefix="search-", dir=base))
        except OSError as exc:
            raise StorageError(f"bucket directory {base} is not writable: {exc}") from exc
        store = BucketStore(run_dir, self.width, self.scheme,
                            higher_g_first=self.policy.tie_break is TieBreak.HIGHER_G_FIRST,
                            memory=self.memory)
        out = self.outcome
        t0 = time.perf_counter()
        try:
            if np.array_equal(self.problem.start, self.problem.goal):
                self.U = 0
            sides = self._seed(store)
            last = Direction.BACKWARD
            while True:
                if self._halted(store, sides):
                    break
                lb = self._lower_bound(store, sides)
                # min(U, LB) bounds C* from below whether or not U is optimal yet
                out.lb_trace.append(min(lb, self.U))
                if self.U <= lb:
                    break
                self._check_time()
                d = choose_direction(store.open[Direction.FORWARD], store.open[Direction.BACKWARD],
                                     self.policy.direction_rule, last)
                last = d
                rec = choose_next_bucket(store.open[d])
                bid = rec.id
                store.take_open(bid)
                table = self._read(store, rec)
                try:
                    self._closed_dd(store, table, bid)
                    if self.policy.solution_detection is SolutionDetection.DELAYED:
                        self._delayed_detection(store, table, bid)
                    keys = table.keys()
                    out.generated += self._expand(store, keys, bid) if len(keys) else 0
                    out.expanded += len(keys)
                    if len(keys):
                        out.depth_histogram[d][bid.g] += len(keys)
                    out.peak_disk_bytes = max(out.peak_disk_bytes,
                                              store.disk_bytes() + rec.nbytes)
                    store.write_closed(bid, encoding.keys_to_rows(keys, self.width))
                    if out.closed is not None:
                        out.closed[d].update((bid.g, k.tobytes()) for k in keys)
                finally:
                    table.release()
                store.discard(rec)
                out.cycles += 1
            out.cost = self.U
            store.write_manifest()
            out.lock_violations = store.lock_violations()
        finally:
            out.elapsed_seconds = time.perf_counter() - t0
            if self.pool is not None:
                self.pool.shutdown(wait=True)
            if not cfg.keep_buckets:
                shutil.rmtree(run_dir, ignore_errors=True)
        return out


def run_search(problem: ProblemInstance, policy: SearchPolicy,
               config: EngineConfig | None = None) -> SearchOutcome:
    """Run one PEM search and return its outcome (cost is INFINITY if unsolvable)."""
    return _Search(problem, policy, config or EngineConfig()).run()
