"""Named algorithms: the PEM family, AIDA*, and in-memory baselines."""
from __future__ import annotations

import heapq
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from enum import Enum

import numpy as np

from . import encoding
from .domains import ProblemInstance, breadth_first_distances
from .errors import CapacityError, SearchTimeout, UnsupportedError
from .framework import (DirectionRule, EngineConfig, LowerBoundRule, PriorityRule, SearchOutcome,
                        SearchPolicy, SolutionDetection, TieBreak, choose_direction,
                        compute_lower_bound, run_search)
from .heuristics import H_INFINITY, ZeroHeuristic
from .storage import BucketId, BucketRecord, Frontier, IdScheme
from .types import INFINITY, Direction


class AlgorithmId(Enum):
    PEM_A_STAR = "pem-a-star"
    PEM_R_A_STAR = "pem-r-a-star"
    PEMM = "pemm"
    PEM_BAE_STAR = "pem-bae-star"
    AIDA_STAR = "aida-star"
    R_AIDA_STAR = "r-aida-star"
    A_STAR = "a-star"
    BAE_STAR = "bae-star"
    IDA_STAR = "ida-star"
    BFS_ORACLE = "bfs-oracle"

    @classmethod
    def parse(cls, name) -> "AlgorithmId":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown algorithm {name!r}; choose from "
                         + ", ".join(m.value for m in cls))

    @property
    def is_pem(self) -> bool:
        return self in PEM_FAMILY


PEM_FAMILY = (AlgorithmId.PEM_A_STAR, AlgorithmId.PEM_R_A_STAR, AlgorithmId.PEMM,
              AlgorithmId.PEM_BAE_STAR)

_POLICIES = {
    AlgorithmId.PEM_A_STAR: SearchPolicy(
        DirectionRule.ALWAYS_FORWARD, PriorityRule.F_VALUE, LowerBoundRule.FMIN,
        SolutionDetection.IMMEDIATE, TieBreak.LOWER_G_FIRST, "pem-a-star"),
    AlgorithmId.PEM_R_A_STAR: SearchPolicy(
        DirectionRule.ALWAYS_BACKWARD, PriorityRule.F_VALUE, LowerBoundRule.FMIN,
        SolutionDetection.IMMEDIATE, TieBreak.LOWER_G_FIRST, "pem-r-a-star"),
    AlgorithmId.PEMM: SearchPolicy(
        DirectionRule.MIN_PRIORITY, PriorityRule.MM, LowerBoundRule.MM_BOUND,
        SolutionDetection.DELAYED, TieBreak.LOWER_G_FIRST, "pemm"),
    AlgorithmId.PEM_BAE_STAR: SearchPolicy(
        DirectionRule.ALTERNATE, PriorityRule.BAE, LowerBoundRule.B_BOUND,
        SolutionDetection.DELAYED, TieBreak.LOWER_G_FIRST, "pem-bae-star"),
}


def make_policy(algorithm) -> tuple[SearchPolicy, IdScheme]:
    algorithm = AlgorithmId.parse(algorithm)
    if algorithm not in _POLICIES:
        raise UnsupportedError(f"{algorithm.value} is not a PEM algorithm")
    policy = _POLICIES[algorithm]
    return policy, policy.scheme


# ---------------------------------------------------------------------------
# In-memory bucketed best-first search (A*, BAE*)

def _key_list(keys: np.ndarray) -> list:
    if keys.dtype == np.uint64:
        return keys.tolist()
    return [k.tobytes() for k in keys]


_ENTRY_BYTES = 120  # rough per-state cost of the dict-based lists


def memory_search(problem: ProblemInstance, policy: SearchPolicy, *,
                  memory_budget: int = 1 << 32, max_seconds: float | None = None) -> SearchOutcome:
    """Bucketed best-first search held entirely in memory with immediate detection.

    Open entries are dictionaries from state to best g, so duplicates are
    dropped on generation; the bucket order, bounds and halting rule are the
    ones the disk engine uses for the same policy.
    """
    dom = problem.domain
    scheme = policy.scheme
    width = dom.record_width
    heur = [problem.heuristic(d) or ZeroHeuristic(dom, problem.target(d)) for d in Direction]
    higher = policy.tie_break is TieBreak.HIGHER_G_FIRST
    frontiers = {d: Frontier(d, "open", scheme, higher) for d in Direction}
    contents: dict = {d: {} for d in Direction}      # bucket key -> list of key arrays
    open_g: dict = {d: {} for d in Direction}
    closed: dict = {d: {} for d in Direction}
    out = SearchOutcome(INFINITY, algorithm=policy.name)
    U = INFINITY
    deadline = None if max_seconds is None else time.monotonic() + max_seconds

    if policy.direction_rule is DirectionRule.ALWAYS_FORWARD:
        sides = [Direction.FORWARD]
    elif policy.direction_rule is DirectionRule.ALWAYS_BACKWARD:
        sides = [Direction.BACKWARD]
    else:
        sides = list(Direction)
    if len(sides) == 1:
        # a unidirectional search meets only the opposite root
        other = sides[0].opposite
        closed[other][_key_list(encoding.rows_to_keys(dom.encode(problem.root(other)[None])))[0]] = 0

    def annotate(g, states, d):
        if scheme.needs_both_h:
            hf = heur[0].evaluate(states).astype(np.int64)
            hb = heur[1].evaluate(states).astype(np.int64)
            keep = (hf < H_INFINITY) & (hb < H_INFINITY)
        else:
            hf = hb = heur[int(d)].evaluate(states).astype(np.int64)
            keep = hf < H_INFINITY
        return scheme.child_keys(g, hf, hb, d), keep

    def push(d, g, cols, keys):
        code = cols[:, 0] * (1 << 16) + (cols[:, 1] if cols.shape[1] > 1 else 0)
        order = np.argsort(code, kind="stable")
        sc = code[order]
        cuts = np.flatnonzero(np.diff(sc)) + 1
        for part in np.split(order, cuts):
            if not part.size:
                continue
            key = (g, *(int(v) for v in cols[part[0]]))
            f = frontiers[d]
            if key not in f:
                f.add(BucketRecord(BucketId(d, key), None, width))
                contents[d][key] = []
            contents[d][key].append(keys[part])
            f.records[key].node_count += part.size
            f.total_nodes += part.size

    if np.array_equal(problem.start, problem.goal):
        U = 0
    for d in sides:
        root = problem.root(d)[None]
        cols, keep = annotate(0, root, d)
        if keep[0]:
            keys = encoding.rows_to_keys(dom.encode(root))
            open_g[d][_key_list(keys)[0]] = 0
            push(d, 0, cols, keys)

    t0 = time.perf_counter()
    last = Direction.BACKWARD
    while not any(len(frontiers[d]) == 0 for d in sides):
        lb = compute_lower_bound(frontiers[Direction.FORWARD], frontiers[Direction.BACKWARD],
                                 policy.lower_bound_rule, sides[0])
        out.lb_trace.append(min(lb, U))
        if U <= lb:
            break
        if deadline is not None and time.monotonic() > deadline:
            raise SearchTimeout(f"search exceeded {max_seconds} s")
        d = choose_direction(frontiers[Direction.FORWARD], frontiers[Direction.BACKWARD],
                             policy.direction_rule, last)
        last = d
        rec = frontiers[d].best()
        frontiers[d].remove(rec.id.key)
        g = rec.id.key[0]
        keys = np.concatenate(contents[d].pop(rec.id.key))
        og, cl = open_g[d], closed[d]
        klist = _key_list(keys)
        live, seen = [], set()
        for i, k in enumerate(klist):
            if og.get(k) == g and k not in seen:
                seen.add(k)
                live.append(i)
        for i in live:
            k = klist[i]
            del og[k]
            cl[k] = g
        if not live:
            continue
        keys = keys[live]
        out.expanded += len(keys)
        out.depth_histogram[d][g] += len(keys)
        if (len(cl) + len(og) + len(closed[d.opposite]) + len(open_g[d.opposite])) \
                * _ENTRY_BYTES > memory_budget:
            raise CapacityError("in-memory search exceeded its memory budget; "
                                "use a PEM algorithm for this instance")
        states = dom.decode(encoding.keys_to_rows(keys, width))
        children, _ = dom.expand(states)
        out.generated += len(children)
        cols, keep = annotate(g + 1, children, d)
        ckeys = encoding.rows_to_keys(dom.encode(children[keep]))
        cols = cols[keep]
        opp_open, opp_closed = open_g[d.opposite], closed[d.opposite]
        take = []
        for i, k in enumerate(_key_list(ckeys)):
            if k in cl or og.get(k, INFINITY) <= g + 1:
                continue
            og[k] = g + 1
            take.append(i)
            other = opp_closed.get(k)
            if other is None:
                other = opp_open.get(k)
            if other is not None and g + 1 + other < U:
                U = g + 1 + other
        if take:
            push(d, g + 1, cols[take], ckeys[take])
    out.cost = U
    out.elapsed_seconds = time.perf_counter() - t0
    return out


def a_star(problem: ProblemInstance, *, tie_break: TieBreak = TieBreak.HIGHER_G_FIRST,
           reverse: bool = False, **kw) -> SearchOutcome:
    rule = DirectionRule.ALWAYS_BACKWARD if reverse else DirectionRule.ALWAYS_FORWARD
    policy = SearchPolicy(rule, PriorityRule.F_VALUE, LowerBoundRule.FMIN,
                          SolutionDetection.IMMEDIATE, tie_break, "a-star")
    return memory_search(problem, policy, **kw)


def bae_star(problem: ProblemInstance, **kw) -> SearchOutcome:
    policy = SearchPolicy(DirectionRule.ALTERNATE, PriorityRule.BAE, LowerBoundRule.B_BOUND,
                          SolutionDetection.IMMEDIATE, TieBreak.LOWER_G_FIRST, "bae-star")
    return memory_search(problem, policy, **kw)


# ---------------------------------------------------------------------------
# Breadth-first oracle

def bfs_oracle(problem: ProblemInstance, *, limit: int = 1 << 27) -> SearchOutcome:
    """Exact distance by exhaustive breadth-first search from the start."""
    dom = problem.domain
    if dom.n_states > limit:
        raise CapacityError(f"{dom.name} has {dom.n_states} states, above the oracle limit {limit}")
    t0 = time.perf_counter()
    dist = breadth_first_distances(dom, problem.start[None], limit=limit,
                                   stop_at=problem.goal[None])
    goal_d = int(dist[dom.dense_index(problem.goal[None])[0]])
    out = SearchOutcome(INFINITY if goal_d == 255 else goal_d, algorithm="bfs-oracle")
    settled = dist[dist != 255]
    for g, n in zip(*np.unique(settled, return_counts=True)):
        if g < goal_d:
            out.depth_histogram[Direction.FORWARD][int(g)] = int(n)
    out.expanded = sum(out.depth_histogram[Direction.FORWARD].values())
    out.elapsed_seconds = time.perf_counter() - t0
    return out


def oracle_distances(domain, target) -> np.ndarray:
    """Distance of every state to ``target`` (dense index order)."""
    return breadth_first_distances(domain, np.asarray(target, dtype=np.uint8)[None])


# ---------------------------------------------------------------------------
# IDA* and AIDA*

class _Flag:
    def __init__(self):
        self.set = False


def _bounded_dfs(dom, heur, target_key, roots, g0, last, threshold, *, batch=4096,
                 flag: _Flag | None = None, deadline=None):
    """Threshold-bounded depth-first search from many roots.

    The stack holds chunks of states; the top chunk is expanded ``batch`` rows
    at a time, which keeps the traversal depth-first at chunk granularity.
    Returns ``(found, next_threshold, expanded, generated)``.
    """
    expanded = generated = 0
    next_t = INFINITY
    h0 = heur.evaluate(roots).astype(np.int64)
    f0 = g0 + h0
    over = f0 > threshold
    if over.any():
        next_t = float(f0[over].min())
    stack = [(roots[~over], np.asarray(last)[~over], g0[~over])]
    while stack:
        if flag is not None and flag.set:
            break
        if deadline is not None and time.monotonic() > deadline:
            raise SearchTimeout("search time limit exceeded")
        states, tags, g = stack.pop()
        if len(states) > batch:
            stack.append((states[:-batch], tags[:-batch], g[:-batch]))
            states, tags, g = states[-batch:], tags[-batch:], g[-batch:]
        if not len(states):
            continue
        keys = encoding.rows_to_keys(dom.encode(states))
        hit = keys == target_key
        if hit.any():
            if flag is not None:
                flag.set = True
            return True, threshold, expanded, generated
        expanded += len(states)
        children, parents, ctags = dom.expand_pruned(states, tags)
        generated += len(children)
        if not len(children):
            continue
        cg = g[parents] + 1
        f = cg + heur.evaluate(children).astype(np.int64)
        ok = f <= threshold
        if (~ok).any():
            next_t = min(next_t, float(f[~ok].min()))
        if ok.any():
            stack.append((children[ok], ctags[ok], cg[ok]))
    return False, next_t, expanded, generated


def ida_star(problem: ProblemInstance, *, reverse: bool = False, max_seconds=None,
             batch: int = 4096) -> SearchOutcome:
    d = Direction.BACKWARD if reverse else Direction.FORWARD
    dom = problem.domain
    heur = problem.heuristic(d) or ZeroHeuristic(dom, problem.target(d))
    root = problem.root(d)[None]
    target_key = encoding.rows_to_keys(dom.encode(problem.target(d)[None]))[0]
    out = SearchOutcome(INFINITY, algorithm="ida-star")
    out.thresholds = []
    deadline = None if max_seconds is None else time.monotonic() + max_seconds
    t0 = time.perf_counter()
    threshold = int(heur.evaluate(root)[0])
    while threshold < H_INFINITY:
        out.thresholds.append(threshold)
        found, nxt, e, gen = _bounded_dfs(dom, heur, target_key, root, np.zeros(1, np.int64),
                                          np.full(1, -1), threshold, batch=batch,
                                          deadline=deadline)
        out.expanded += e
        out.generated += gen
        if found:
            out.cost = threshold
            break
        if nxt == INFINITY:
            break
        threshold = int(nxt)
    out.elapsed_seconds = time.perf_counter() - t0
    return out


def _bfs_frontier(dom, heur, root, target_key, wanted: int, max_depth: int = 64):
    """Expand breadth-first (parent pruning only) until the frontier exceeds ``wanted``.

    Also returns, per frontier state, the f-values along its prefix path so each
    iteration can prune a path where sequential IDA* would have cut it.
    """
    states, tags = root, np.full(1, -1)
    path_f = heur.evaluate(root).astype(np.int64)[:, None]
    expanded = generated = 0
    for depth in range(max_depth):
        keys = encoding.rows_to_keys(dom.encode(states))
        if (keys == target_key).any():
            return states, tags, path_f, depth, expanded, generated, depth
        if len(states) > wanted:
            return states, tags, path_f, depth, expanded, generated, None
        children, parents, ctags = dom.expand_pruned(states, tags)
        expanded += len(states)
        generated += len(children)
        f = depth + 1 + heur.evaluate(children).astype(np.int64)
        states, tags = children, ctags
        path_f = np.concatenate([path_f[parents], f[:, None]], axis=1)
    return states, tags, path_f, max_depth, expanded, generated, None


def aida_star(problem: ProblemInstance, *, workers: int = 1, reverse: bool = False,
              frontier_factor: int = 8, max_seconds=None, batch: int = 4096) -> SearchOutcome:
    """Parallel IDA*: a breadth-first prefix, then per-worker bounded DFS.

    The frontier is built once, at the first depth whose width exceeds
    ``frontier_factor * workers``, and dealt round-robin to the workers.  Each
    iteration runs every worker's share under the current threshold; the next
    threshold is the smallest f that exceeded it anywhere.
    """
    d = Direction.BACKWARD if reverse else Direction.FORWARD
    dom = problem.domain
    heur = problem.heuristic(d) or ZeroHeuristic(dom, problem.target(d))
    root = problem.root(d)[None]
    target_key = encoding.rows_to_keys(dom.encode(problem.target(d)[None]))[0]
    name = "r-aida-star" if reverse else "aida-star"
    out = SearchOutcome(INFINITY, algorithm=name)
    out.thresholds = []
    deadline = None if max_seconds is None else time.monotonic() + max_seconds
    t0 = time.perf_counter()
    frontier, tags, path_f, depth, e0, g0, hit = _bfs_frontier(
        dom, heur, root, target_key, frontier_factor * workers)
    out.expanded, out.generated = e0, g0
    out.frontier_depth = depth
    if hit is not None:
        out.cost = hit
        out.thresholds.append(hit)
        out.elapsed_seconds = time.perf_counter() - t0
        return out
    shares = [np.arange(w, len(frontier), workers) for w in range(workers)]
    threshold = int(heur.evaluate(root)[0])
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while threshold < H_INFINITY:
            out.thresholds.append(threshold)
            flag = _Flag()

            # a prefix path already over the threshold is cut at its first such node
            over = path_f > threshold
            cut = over.any(axis=1)
            first_over = path_f[np.arange(len(path_f)), np.argmax(over, axis=1)]

            def work(idx, threshold=threshold, flag=flag):
                nxt = float(first_over[idx[cut[idx]]].min()) if cut[idx].any() else INFINITY
                idx = idx[~cut[idx]]
                if not len(idx):
                    return False, nxt, 0, 0
                found, t, e, gen = _bounded_dfs(dom, heur, target_key, frontier[idx],
                                                np.full(len(idx), depth, np.int64), tags[idx],
                                                threshold, batch=batch, flag=flag,
                                                deadline=deadline)
                return found, min(t, nxt), e, gen

            results = list(pool.map(work, shares)) if pool else [work(s) for s in shares]
            out.expanded += sum(r[2] for r in results)
            out.generated += sum(r[3] for r in results)
            if any(r[0] for r in results):
                out.cost = threshold
                break
            nxt = min(r[1] for r in results)
            if nxt == INFINITY:
                break
            threshold = int(nxt)
    finally:
        if pool is not None:
            pool.shutdown()
    out.elapsed_seconds = time.perf_counter() - t0
    return out


# ---------------------------------------------------------------------------
# Analysis

def expansion_depth_histogram(outcome: SearchOutcome, c_star) -> dict:
    """Fraction of expansions made at ``g < C*/2`` (both directions pooled)."""
    hist = outcome.histogram()
    total = sum(hist.values())
    if c_star == 0 or total == 0:
        return {"fraction_before_midpoint": 1.0}
    before = sum(n for g, n in hist.items() if g < c_star / 2)
    return {"fraction_before_midpoint": before / total}


# ---------------------------------------------------------------------------
# Uniform entry point

def solve(algorithm, problem: ProblemInstance, config: EngineConfig | None = None,
          **kw) -> SearchOutcome:
    algorithm = AlgorithmId.parse(algorithm)
    config = config or EngineConfig()
    if algorithm.is_pem:
        policy, _ = make_policy(algorithm)
        if "tie_break" in kw:
            policy = policy.replace(tie_break=kw.pop("tie_break"))
        if "solution_detection" in kw:
            policy = policy.replace(solution_detection=kw.pop("solution_detection"))
        return run_search(problem, policy, config)
    limit = dict(max_seconds=config.max_seconds)
    if algorithm is AlgorithmId.A_STAR:
        return a_star(problem, memory_budget=config.memory_budget, **limit, **kw)
    if algorithm is AlgorithmId.BAE_STAR:
        return bae_star(problem, memory_budget=config.memory_budget, **limit, **kw)
    if algorithm is AlgorithmId.IDA_STAR:
        return ida_star(problem, **limit, **kw)
    if algorithm is AlgorithmId.AIDA_STAR:
        return aida_star(problem, workers=config.workers, **limit, **kw)
    if algorithm is AlgorithmId.R_AIDA_STAR:
        return aida_star(problem, workers=config.workers, reverse=True, **limit, **kw)
    if algorithm is AlgorithmId.BFS_ORACLE:
        return bfs_oracle(problem)
    raise UnsupportedError(algorithm.value)
