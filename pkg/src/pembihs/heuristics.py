"""Manhattan distance and additive pattern databases.

Pattern databases for sliding tiles keep the blank in the abstract state and
charge only moves of pattern tiles; blank moves past other tiles are free.  The
components of an additive heuristic therefore never charge the same move twice
and their sum stays admissible and consistent.

A tile PDB depends only on the target cells of its members, so PDBs are keyed
by that normalized form.  Instances whose targets share a blank cell share
their PDBs.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoding
from .domains import Domain, Hanoi4, SlidingTile, breadth_first_distances
from .errors import CapacityError, CorruptionError, InputError, UnsupportedError

UNREACHED = 255
# heuristic values at or above this prune the node
H_INFINITY = 1 << 14

DEFAULT_BUILD_BUDGET = 1 << 30
_FORMAT_VERSION = 1
_MAGIC = b"PEMPDB\x00\x01"


class Heuristic:
    """Batch evaluator of a distance estimate towards ``target``."""

    domain: Domain
    target: np.ndarray

    def evaluate(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, state) -> int:
        return int(self.evaluate(np.asarray(state, dtype=np.uint8)[None])[0])


class ZeroHeuristic(Heuristic):
    def __init__(self, domain: Domain, target):
        self.domain, self.target = domain, np.asarray(target, dtype=np.uint8)

    def evaluate(self, states):
        return np.zeros(len(states), dtype=np.int32)


class ManhattanDistance(Heuristic):
    def __init__(self, domain: SlidingTile, target):
        if not isinstance(domain, SlidingTile):
            raise UnsupportedError("Manhattan distance is defined for sliding tiles only")
        self.domain = domain
        self.target = np.asarray(target, dtype=np.uint8)
        n, cols = domain.state_size, domain.cols
        where = np.empty(n, dtype=np.int64)
        where[self.target] = np.arange(n)
        table = np.zeros((n, n), dtype=np.int32)       # [cell, tile]
        for cell in range(n):
            r, c = divmod(cell, cols)
            for tile in range(1, n):
                tr, tc = divmod(int(where[tile]), cols)
                table[cell, tile] = abs(r - tr) + abs(c - tc)
        self._flat = table.ravel()
        self._offsets = np.arange(n) * n

    def evaluate(self, states):
        states = np.asarray(states)
        return self._flat[self._offsets + states].sum(axis=1, dtype=np.int32)


# ---------------------------------------------------------------------------
# Pattern specs and databases

@dataclass(frozen=True)
class PatternSpec:
    """One pattern of an additive heuristic.

    ``members`` are tile labels (sliding tiles) or disk indices (Hanoi); the
    abstract target is read off ``target``.
    """

    domain_name: str
    members: tuple[int, ...]
    target: tuple[int, ...]
    include_blank: bool = True

    def normalized(self) -> dict:
        if self.domain_name.startswith("stp"):
            where = {tile: cell for cell, tile in enumerate(self.target)}
            cells = sorted(where[t] for t in self.members)
            key = {"kind": "tile", "domain": self.domain_name, "cells": cells}
            if self.include_blank:
                key["blank"] = where[0]
            return key
        return {"kind": "hanoi", "disks": len(self.members),
                "target": [self.target[d] for d in sorted(self.members)]}

    def spec_hash(self) -> str:
        blob = json.dumps(self.normalized(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class PDB:
    """Exact abstract distances indexed by the rank of the pattern state."""

    def __init__(self, spec: PatternSpec, entries: np.ndarray, domain: Domain):
        self.spec = spec
        self.entries = entries
        self.domain = domain
        target = np.asarray(spec.target)
        if isinstance(domain, SlidingTile):
            where = np.empty(domain.state_size, dtype=np.int64)
            where[target] = np.arange(domain.state_size)
            # members ordered by target cell, blank last: this is the rank layout
            ordered = sorted(spec.members, key=lambda t: where[t])
            self.labels = np.array(ordered + ([0] if spec.include_blank else []), dtype=np.int64)
        else:
            self.labels = np.array(sorted(spec.members), dtype=np.int64)

    def rank(self, states: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
        if isinstance(self.domain, SlidingTile):
            if positions is None:
                positions = inverse_permutations(states)
            return encoding.rank_partial(positions[:, self.labels], self.domain.state_size)
        sub = np.asarray(states)[:, self.labels].astype(np.int64)
        return sub @ (4 ** np.arange(sub.shape[1], dtype=np.int64))

    def lookup(self, states, positions=None) -> np.ndarray:
        vals = self.entries[self.rank(states, positions)].astype(np.int32)
        vals[vals == UNREACHED] = H_INFINITY
        return vals

    def __len__(self):
        return self.entries.size


def inverse_permutations(states: np.ndarray) -> np.ndarray:
    """cell-of-label table for each row."""
    states = np.asarray(states)
    n, size = states.shape
    inv = np.empty((n, size), dtype=np.int64)
    inv[np.arange(n)[:, None], states] = np.arange(size)
    return inv


def pdb_entry_count(spec: PatternSpec, domain: Domain) -> int:
    if isinstance(domain, SlidingTile):
        k = len(spec.members) + (1 if spec.include_blank else 0)
        return encoding.n_partial_permutations(domain.state_size, k)
    return 4 ** len(spec.members)


def build_pdb(spec: PatternSpec, domain: Domain, *, budget: int = DEFAULT_BUILD_BUDGET) -> PDB:
    """Retrograde breadth-first search from the abstract target."""
    _check_spec(spec, domain)
    size = pdb_entry_count(spec, domain)
    if size > budget:
        raise CapacityError(
            f"PDB over {len(spec.members)} members needs {size} bytes; build budget is {budget}")
    if isinstance(domain, SlidingTile):
        entries = _build_tile_entries(spec, domain, size)
    else:
        sub = Hanoi4(len(spec.members))
        target = np.asarray(spec.target, dtype=np.uint8)[sorted(spec.members)]
        entries = breadth_first_distances(sub, target[None], limit=budget)
    return PDB(spec, entries, domain)


def _check_spec(spec: PatternSpec, domain: Domain) -> None:
    if spec.domain_name != domain.name:
        raise InputError(f"pattern for {spec.domain_name} used with {domain.name}")
    if len(spec.target) != domain.state_size:
        raise InputError("pattern target has the wrong size")
    if len(set(spec.members)) != len(spec.members) or not spec.members:
        raise InputError("pattern members must be distinct and non-empty")
    if isinstance(domain, SlidingTile):
        if 0 in spec.members or not all(0 < t < domain.state_size for t in spec.members):
            raise InputError("tile pattern members must be non-blank tile labels")
    elif not all(0 <= d < domain.state_size for d in spec.members):
        raise InputError("disk index out of range")


def _build_tile_entries(spec: PatternSpec, domain: SlidingTile, size: int) -> np.ndarray:
    n = domain.state_size
    pdb = PDB(spec, np.empty(0, np.uint8), domain)
    target = np.asarray(spec.target, dtype=np.uint8)
    dist = np.full(size, UNREACHED, dtype=np.uint8)
    start = pdb.rank(target[None])
    dist[start] = 0
    nbr = domain.neighbors
    blank = spec.include_blank
    frontier, depth = start, 0

    def moves(ranks, free_moves):
        pos = encoding.unrank_partial(ranks, n, len(pdb.labels))
        out = []
        if blank:
            b = pos[:, -1]
            tiles = pos[:, :-1]
            for d in range(4):
                q = nbr[b, d]
                ok = q >= 0
                hit = (tiles == q[:, None]) & ok[:, None]
                occupied = hit.any(axis=1)
                sel = ok & (~occupied if free_moves else occupied)
                if not sel.any():
                    continue
                child = pos[sel].copy()
                if not free_moves:
                    r, c = np.nonzero(hit[sel])
                    child[r, c] = b[sel][r]
                child[:, -1] = q[sel]
                out.append(encoding.rank_partial(child, n))
        else:
            for i in range(pos.shape[1]):
                for d in range(4):
                    q = nbr[pos[:, i], d]
                    ok = (q >= 0) & ~(pos == q[:, None]).any(axis=1)
                    if not ok.any():
                        continue
                    child = pos[ok].copy()
                    child[:, i] = q[ok]
                    out.append(encoding.rank_partial(child, n))
        return np.unique(np.concatenate(out)) if out else np.empty(0, np.int64)

    chunk = 1 << 17
    while frontier.size:
        layer = [frontier]
        if blank:
            zero = frontier
            while zero.size:
                found = []
                for lo in range(0, zero.size, chunk):
                    kids = moves(zero[lo:lo + chunk], True)
                    kids = kids[dist[kids] == UNREACHED]
                    dist[kids] = depth
                    found.append(kids)
                zero = np.concatenate(found)
                layer.append(zero)
        whole = np.concatenate(layer)
        nxt = []
        for lo in range(0, whole.size, chunk):
            kids = moves(whole[lo:lo + chunk], False)
            kids = kids[dist[kids] == UNREACHED]
            dist[kids] = depth + 1
            nxt.append(kids)
        frontier = np.concatenate(nxt) if nxt else np.empty(0, np.int64)
        depth += 1
    return dist


# ---------------------------------------------------------------------------
# Caching

_memo: dict[str, np.ndarray] = {}
_memo_lock = threading.Lock()


def default_cache_dir() -> Path | None:
    env = os.environ.get("PEMBIHS_PDB_CACHE")
    if env == "":
        return None
    return Path(env) if env else Path.home() / ".cache" / "pembihs" / "pdb"


def save_pdb(pdb: PDB, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _MAGIC + struct.pack("<IQ", _FORMAT_VERSION, pdb.entries.size)
    header += bytes.fromhex(pdb.spec.spec_hash())
    tmp = path.with_suffix(".tmp%d" % os.getpid())
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(pdb.entries.tobytes())
    os.replace(tmp, path)


def load_pdb_entries(path: Path, spec: PatternSpec) -> np.ndarray | None:
    """Entries from a cache file, or None when the header does not match."""
    try:
        raw = path.read_bytes()
    except OSError:
        return None
    head = len(_MAGIC) + 12 + 32
    if len(raw) < head or raw[:len(_MAGIC)] != _MAGIC:
        return None
    version, count = struct.unpack("<IQ", raw[len(_MAGIC):len(_MAGIC) + 12])
    digest = raw[len(_MAGIC) + 12:head].hex()
    if version != _FORMAT_VERSION or digest != spec.spec_hash():
        return None
    if len(raw) - head != count:
        raise CorruptionError(f"truncated PDB cache file {path}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).copy()


def get_pdb(spec: PatternSpec, domain: Domain, *, cache_dir: Path | None | str = "default",
            budget: int = DEFAULT_BUILD_BUDGET) -> PDB:
    """Build or reload the PDB for ``spec`` (memoized per process)."""
    digest = spec.spec_hash()
    with _memo_lock:
        entries = _memo.get(digest)
    if entries is not None:
        return PDB(spec, entries, domain)
    if cache_dir == "default":
        cache_dir = default_cache_dir()
    path = Path(cache_dir) / f"{digest}.pdb" if cache_dir else None
    if path is not None:
        entries = load_pdb_entries(path, spec)
        if entries is not None and entries.size == pdb_entry_count(spec, domain):
            with _memo_lock:
                _memo[digest] = entries
            return PDB(spec, entries, domain)
    pdb = build_pdb(spec, domain, budget=budget)
    if path is not None:
        save_pdb(pdb, path)
    with _memo_lock:
        _memo[digest] = pdb.entries
    return pdb


# ---------------------------------------------------------------------------
# Composite heuristics

class AdditivePDB(Heuristic):
    """Sum of disjoint pattern databases."""

    def __init__(self, pdbs: list[PDB], domain: Domain, target):
        self.pdbs = pdbs
        self.domain = domain
        self.target = np.asarray(target, dtype=np.uint8)
        seen: set[int] = set()
        for p in pdbs:
            overlap = seen & set(p.spec.members)
            if overlap:
                raise InputError(f"patterns overlap on {sorted(overlap)}; sum would be inadmissible")
            seen |= set(p.spec.members)

    def evaluate(self, states):
        states = np.asarray(states)
        positions = inverse_permutations(states) if isinstance(self.domain, SlidingTile) else None
        total = np.zeros(len(states), dtype=np.int32)
        for p in self.pdbs:
            total += p.lookup(states, positions)
        return np.minimum(total, H_INFINITY)


class Reflected(Heuristic):
    """max(h(s), h(mirror(s))) for square sliding-tile puzzles."""

    def __init__(self, base: Heuristic):
        if not isinstance(base.domain, SlidingTile) or base.domain.rows != base.domain.cols:
            raise UnsupportedError("reflection lookups need a square sliding-tile puzzle")
        self.base = base
        self.domain = base.domain
        self.target = base.target
        self.domain.reflect(self.target[None], self.target)   # validates the target

    def evaluate(self, states):
        states = np.asarray(states)
        mirrored = self.domain.reflect(states, self.target)
        return np.maximum(self.base.evaluate(states), self.base.evaluate(mirrored))


def reflect_lookup(h: Heuristic, state) -> int:
    return Reflected(h)(state)


# ---------------------------------------------------------------------------
# Named heuristics

# cell regions per sliding-tile pattern name; the target's blank cell is dropped
TILE_PARTITIONS: dict[tuple[str, str], list[list[int]]] = {
    ("stp3", "4-4"): [[0, 1, 2, 3, 4], [5, 6, 7, 8]],
    ("stp3", "full"): [list(range(9))],
    ("stp4", "3-4-4-4"): [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]],
    ("stp4", "full"): [list(range(16))],
    ("stp5", "6-6-6-6"): [[1, 2, 5, 6, 7, 12], [3, 4, 8, 9, 13, 14],
                          [10, 11, 15, 16, 20, 21], [17, 18, 19, 22, 23, 24, 0]],
}


def tile_pattern_specs(domain: SlidingTile, name: str, target) -> list[PatternSpec]:
    regions = TILE_PARTITIONS.get((domain.name, name))
    if regions is None:
        raise InputError(f"no pattern set {name!r} for {domain.name}")
    target = tuple(int(v) for v in target)
    specs = []
    for cells in regions:
        members = tuple(target[c] for c in cells if target[c] != 0)
        if members:
            specs.append(PatternSpec(domain.name, members, target, True))
    return specs


def hanoi_pattern_specs(domain: Hanoi4, name: str, target) -> list[PatternSpec]:
    """``"a+b+..."``: groups of disks counted from the smallest upward."""
    try:
        sizes = [int(x) for x in name.split("+")]
    except ValueError:
        raise InputError(f"bad Hanoi pattern name {name!r}") from None
    if sum(sizes) != domain.disks or min(sizes) < 1:
        raise InputError(f"pattern {name!r} does not partition {domain.disks} disks")
    target = tuple(int(v) for v in target)
    specs, top = [], domain.disks
    for size in sizes:
        members = tuple(range(top - size, top))
        specs.append(PatternSpec(domain.name, members, target, False))
        top -= size
    return specs


def default_pdb_name(domain: Domain) -> str:
    if isinstance(domain, SlidingTile):
        return {"stp3": "4-4", "stp4": "3-4-4-4", "stp5": "6-6-6-6"}.get(domain.name, "full")
    small = min(domain.disks, max(1, domain.disks - 2))
    return f"{small}+{domain.disks - small}" if small < domain.disks else str(domain.disks)


def make_heuristic(domain: Domain, name: str, target, *, cache_dir="default",
                   budget: int = DEFAULT_BUILD_BUDGET) -> Heuristic:
    """``md``, ``zero``, ``pdb`` (domain default), ``pdb:<name>`` or ``pdb:<name>r``.

    A trailing ``r`` adds the main-diagonal reflection lookup.
    """
    target = np.asarray(target, dtype=np.uint8)
    if name == "md":
        return ManhattanDistance(domain, target)
    if name == "zero":
        return ZeroHeuristic(domain, target)
    if name == "pdb" or name.startswith("pdb:"):
        pattern = name[4:] if name.startswith("pdb:") else default_pdb_name(domain)
        reflect = pattern.endswith("r") and isinstance(domain, SlidingTile)
        pattern = pattern[:-1] if reflect else pattern
        if isinstance(domain, SlidingTile):
            specs = tile_pattern_specs(domain, pattern, target)
        else:
            specs = hanoi_pattern_specs(domain, pattern, target)
        pdbs = [get_pdb(s, domain, cache_dir=cache_dir, budget=budget) for s in specs]
        h: Heuristic = AdditivePDB(pdbs, domain, target)
        return Reflected(h) if reflect else h
    raise InputError(f"unknown heuristic {name!r}")


def make_heuristic_pair(domain: Domain, name: str, start, goal, **kw) -> tuple[Heuristic, Heuristic]:
    """(towards goal, towards start)."""
    return (make_heuristic(domain, name, goal, **kw), make_heuristic(domain, name, start, **kw))
