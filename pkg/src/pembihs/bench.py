"""Batch runner and result tables.

Result files are tab-separated with the columns ``Instance, Algorithm,
Expanded, Generated, Elapsed, Solution`` followed by ``Domain, Status,
PeakDiskBytes, Depths``.  ``Depths`` lists per-level expansion counts as
``F0:1,F1:2,B0:1``.
"""
from __future__ import annotations

import csv
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .algorithms import AlgorithmId, expansion_depth_histogram, solve
from .domains import (Domain, ProblemInstance, domain_from_name, korf100, read_instances,
                      SlidingTile)
from .errors import InputError, PembihsError, SearchTimeout
from .framework import EngineConfig, SearchOutcome
from .heuristics import make_heuristic_pair
from .types import INFINITY, Direction

log = logging.getLogger(__name__)

COLUMNS = ["Instance", "Algorithm", "Expanded", "Generated", "Elapsed", "Solution",
           "Domain", "Status", "PeakDiskBytes", "Depths"]


@dataclass
class RunSpec:
    algorithms: Sequence
    domain: str
    instances: str | Path | list = "korf100"
    heuristic: str = "md"
    workers: int = 1
    memory_budget: int = 1 << 30
    run_dir: str | Path | None = None
    seed: int = 0
    out: str | Path | None = None
    max_seconds: float | None = None
    keep_buckets: bool = False
    only: Sequence[int] | None = None
    histogram: bool = True

    def __post_init__(self):
        if isinstance(self.algorithms, (str, AlgorithmId)):
            self.algorithms = [self.algorithms]
        self.algorithms = [AlgorithmId.parse(a) for a in self.algorithms]


@dataclass
class ResultRow:
    instance: int
    algorithm: str
    expanded: int = 0
    generated: int = 0
    elapsed: float = 0.0
    solution: float = INFINITY
    domain: str = ""
    status: str = "ok"
    peak_disk_bytes: int = 0
    depths: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_fields(self) -> list[str]:
        sol = "inf" if self.solution == INFINITY else str(int(self.solution))
        if not self.ok:
            sol = "-"
        depths = ",".join(f"{k}:{v}" for k, v in self.depths.items())
        return [str(self.instance), self.algorithm, str(self.expanded), str(self.generated),
                f"{self.elapsed:.3f}", sol, self.domain, self.status,
                str(self.peak_disk_bytes), depths]

    @classmethod
    def from_fields(cls, rec: dict) -> "ResultRow":
        sol = rec["Solution"]
        depths = {}
        for item in filter(None, (rec.get("Depths") or "").split(",")):
            k, v = item.split(":")
            depths[k] = int(v)
        return cls(int(rec["Instance"]), rec["Algorithm"], int(rec["Expanded"]),
                   int(rec["Generated"]), float(rec["Elapsed"]),
                   INFINITY if sol in ("inf", "-") else int(sol), rec.get("Domain", ""),
                   rec.get("Status", "ok"), int(rec.get("PeakDiskBytes") or 0), depths)

    def histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for k, v in self.depths.items():
            g = int(k[1:])
            hist[g] = hist.get(g, 0) + v
        return hist


def _depths(outcome: SearchOutcome) -> dict:
    out = {}
    for d in Direction:
        for g in sorted(outcome.depth_histogram[d]):
            out[f"{d.letter}{g}"] = int(outcome.depth_histogram[d][g])
    return out


def load_instances(spec: RunSpec, domain: Domain) -> list:
    src = spec.instances
    if isinstance(src, list):
        pairs = src
    elif str(src) == "korf100":
        if not (isinstance(domain, SlidingTile) and domain.state_size == 16):
            raise InputError("korf100 instances need the stp4 domain")
        pairs = korf100()
    else:
        path = Path(src)
        if not path.exists():
            raise InputError(f"instance file {path} does not exist")
        pairs = read_instances(path, domain)
    indexed = list(enumerate(pairs))
    if spec.only is not None:
        wanted = set(spec.only)
        indexed = [(i, p) for i, p in indexed if i in wanted]
    return indexed


def _write_header(path: Path) -> None:
    if not path.exists() or path.stat().st_size == 0:
        with open(path, "w", newline="") as fh:
            fh.write("\t".join(COLUMNS) + "\n")


def append_row(path: Path, row: ResultRow) -> None:
    with open(path, "a", newline="") as fh:
        fh.write("\t".join(row.to_fields()) + "\n")
        fh.flush()


def run_benchmark(spec: RunSpec) -> list[ResultRow]:
    """Run every algorithm on every instance, one instance at a time.

    Rows are appended to ``spec.out`` as soon as each run finishes.  A failing
    run produces a row with a non-``ok`` status instead of aborting the batch.
    """
    domain = domain_from_name(spec.domain)
    instances = load_instances(spec, domain)
    out = Path(spec.out) if spec.out else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_header(out)
    config = EngineConfig(workers=spec.workers, memory_budget=spec.memory_budget,
                          run_dir=spec.run_dir, keep_buckets=spec.keep_buckets,
                          max_seconds=spec.max_seconds)
    rows = []
    for index, (start, goal) in instances:
        try:
            heur = make_heuristic_pair(domain, spec.heuristic, start, goal)
            problem = ProblemInstance(domain, start, goal, heur, index)
        except PembihsError as exc:
            problem, setup_error = None, exc
        for alg in spec.algorithms:
            row = ResultRow(index, alg.value, domain=spec.domain)
            if problem is None:
                row.status = f"error: {setup_error}"
            else:
                t0 = time.perf_counter()
                try:
                    res = solve(alg, problem, config)
                    row.expanded, row.generated = res.expanded, res.generated
                    row.elapsed, row.solution = res.elapsed_seconds, res.cost
                    row.peak_disk_bytes = res.peak_disk_bytes
                    if spec.histogram:
                        row.depths = _depths(res)
                except SearchTimeout:
                    row.status = "timeout"
                    row.elapsed = time.perf_counter() - t0
                except (PembihsError, MemoryError, OSError) as exc:
                    row.status = f"error: {exc}".replace("\t", " ").replace("\n", " ")
                    row.elapsed = time.perf_counter() - t0
                    log.warning("instance %s / %s failed: %s", index, alg.value, exc)
            rows.append(row)
            if out is not None:
                append_row(out, row)
    return rows


def read_results(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return [ResultRow.from_fields(r) for r in reader]


# ---------------------------------------------------------------------------
# Reports

def _table(header: list[str], body: Iterable[list]) -> str:
    rows = [header] + [[str(c) for c in r] for r in body]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def _by_algorithm(rows: list[ResultRow]) -> dict[str, list[ResultRow]]:
    groups: dict[str, list[ResultRow]] = {}
    for r in rows:
        if r.ok:
            groups.setdefault(r.algorithm, []).append(r)
    return groups


def means(rows: list[ResultRow]) -> dict[str, tuple[float, float, int]]:
    """algorithm -> (mean elapsed, mean expanded, runs)."""
    return {alg: (statistics.fmean(r.elapsed for r in rs),
                  statistics.fmean(r.expanded for r in rs), len(rs))
            for alg, rs in _by_algorithm(rows).items()}


def hard_subset(rows: list[ResultRow], k: int) -> list[int]:
    """The k instances with the largest solution cost (ties: lower index first)."""
    cost: dict[int, float] = {}
    for r in rows:
        if r.ok and r.solution != INFINITY:
            cost[r.instance] = max(cost.get(r.instance, 0), r.solution)
    ranked = sorted(cost, key=lambda i: (-cost[i], i))
    return sorted(ranked[:k])


def nps(rows: list[ResultRow]) -> dict[tuple[str, str], float]:
    """(algorithm, domain) -> mean nodes expanded per second."""
    groups: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        if r.ok and r.elapsed > 0:
            groups.setdefault((r.algorithm, r.domain), []).append(r.expanded / r.elapsed)
    return {k: statistics.fmean(v) for k, v in groups.items()}


def depth_fractions(rows: list[ResultRow]) -> list[tuple[int, str, float]]:
    out = []
    for r in rows:
        if not r.ok or r.solution == INFINITY:
            continue
        if not r.depths:
            raise InputError(
                f"row {r.instance}/{r.algorithm} has no depth histogram; re-run "
                "`pembihs run` without --no-histogram to record it")
        fake = SearchOutcome(r.solution)
        for k, v in r.depths.items():
            fake.depth_histogram[Direction.FORWARD if k[0] == "F" else Direction.BACKWARD][int(k[1:])] = v
        out.append((r.instance, r.algorithm,
                    expansion_depth_histogram(fake, r.solution)["fraction_before_midpoint"]))
    return out


def report(rows: list[ResultRow], mode: str) -> str:
    """Format ``means``, ``hard:<k>``, ``nps`` or ``depthdist`` tables."""
    if not rows:
        raise InputError("no result rows to report on")
    if mode == "means":
        body = [[alg, f"{t:.3f}", f"{n:.1f}", runs] for alg, (t, n, runs) in means(rows).items()]
        return _table(["Algorithm", "MeanElapsed", "MeanExpanded", "Runs"], body)
    if mode.startswith("hard:"):
        try:
            k = int(mode.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad mode {mode!r}; expected hard:<k>") from None
        chosen = set(hard_subset(rows, k))
        sub = [r for r in rows if r.instance in chosen]
        body = [[alg, f"{t:.3f}", f"{n:.1f}", runs] for alg, (t, n, runs) in means(sub).items()]
        title = "hard instances: " + ", ".join(str(i) for i in sorted(chosen))
        return title + "\n" + _table(["Algorithm", "MeanElapsed", "MeanExpanded", "Runs"], body)
    if mode == "nps":
        body = [[alg, dom, f"{v:,.0f}"] for (alg, dom), v in sorted(nps(rows).items())]
        return _table(["Algorithm", "Domain", "NodesPerSecond"], body)
    if mode == "depthdist":
        body = [[i, alg, f"{frac:.3f}"] for i, alg, frac in depth_fractions(rows)]
        return _table(["Instance", "Algorithm", "FractionBeforeMidpoint"], body)
    raise InputError(f"unknown report mode {mode!r}")


def parse_bytes(text: str) -> int:
    """``"512M"``, ``"2G"``, ``"1048576"`` -> bytes."""
    text = str(text).strip().upper().removesuffix("B")
    scale = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30, "T": 1 << 40}
    if text and text[-1] in scale:
        return int(float(text[:-1]) * scale[text[-1]])
    value = float(text)
    if not math.isfinite(value) or value <= 0:
        raise InputError(f"bad byte count {text!r}")
    return int(value)
