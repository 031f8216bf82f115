"""Puzzle domains: N x N sliding tiles and the 4-peg Towers of Hanoi.

Every domain works on batches of states held as 2-D ``uint8`` arrays (one row
per state) so that successor generation, heuristic evaluation and packing can
all run vectorized.  Single-state helpers wrap the batch versions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import encoding
from .errors import InputError


@dataclass(frozen=True)
class DomainProperties:
    unit_cost: bool
    undirected: bool
    record_width: int


class Domain:
    """Common interface; subclasses fill in the batch operations."""

    name: str
    state_size: int
    record_width: int
    max_branching: int

    # -- batch operations -------------------------------------------------
    def encode(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decode(self, rows: np.ndarray, *, source: str = "<memory>", offset: int = 0) -> np.ndarray:
        raise NotImplementedError

    def expand(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """All successors of every row; returns ``(children, parent_index)``."""
        children, parents, _ = self.expand_pruned(states, None)
        return children, parents

    def expand_pruned(self, states, last):
        """Successors skipping the move that undoes ``last`` (per row).

        ``last`` is an opaque per-row move tag (``-1`` for none) and the third
        return value carries the tags for the children.
        """
        raise NotImplementedError

    def check_states(self, states: np.ndarray) -> np.ndarray:
        """Boolean mask of legal rows."""
        raise NotImplementedError

    # -- single-state conveniences -----------------------------------------
    def as_state(self, s: Sequence[int]) -> np.ndarray:
        arr = np.asarray(s, dtype=np.int64)
        if arr.shape != (self.state_size,):
            raise InputError(f"{self.name}: expected {self.state_size} entries, got {arr.shape}")
        row = arr.astype(np.uint8)
        if (arr < 0).any() or (arr > 255).any() or not self.check_states(row[None])[0]:
            raise InputError(f"{self.name}: illegal state {list(arr)}")
        return row

    def encode_state(self, s) -> bytes:
        return self.encode(self.as_state(s)[None])[0].tobytes()

    def decode_state(self, packed: bytes) -> tuple[int, ...]:
        if len(packed) != self.record_width:
            raise InputError(f"{self.name}: packed state must be {self.record_width} bytes")
        row = np.frombuffer(packed, dtype=np.uint8)[None]
        return tuple(int(v) for v in self.decode(row)[0])

    def successors(self, s) -> list[tuple[int, ...]]:
        children, _ = self.expand(self.as_state(s)[None])
        return [tuple(int(v) for v in c) for c in children]

    def properties(self) -> DomainProperties:
        return DomainProperties(unit_cost=True, undirected=True, record_width=self.record_width)

    def key(self, s) -> object:
        """Hashable identity of a single state (the packed key)."""
        keys = encoding.rows_to_keys(self.encode(self.as_state(s)[None]))
        return keys[0]

    # -- exhaustive indexing (oracle support) -------------------------------
    n_states: int

    def dense_index(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_dense_index(self, index: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SlidingTile(Domain):
    """``rows x cols`` sliding-tile puzzle; 0 is the blank.

    The canonical goal places the blank in cell 0 and tile ``i`` in cell ``i``.
    """

    max_branching = 4

    def __init__(self, rows: int, cols: int | None = None):
        cols = rows if cols is None else cols
        if rows < 2 or cols < 2 or rows * cols > 36:
            raise InputError(f"unsupported sliding-tile size {rows}x{cols}")
        self.rows, self.cols = rows, cols
        self.state_size = rows * cols
        self.name = f"stp{rows}" if rows == cols else f"stp{rows}x{cols}"
        bits = encoding.lehmer_bits(self.state_size)
        self.code_bits = bits
        self.record_width = -(-bits // 8)
        self.n_states = math.factorial(self.state_size)
        nbr = np.full((self.state_size, 4), -1, dtype=np.int64)
        for cell in range(self.state_size):
            r, c = divmod(cell, cols)
            for d, (dr, dc) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    nbr[cell, d] = rr * cols + cc
        self.neighbors = nbr

    @property
    def goal(self) -> np.ndarray:
        return np.arange(self.state_size, dtype=np.uint8)

    def check_states(self, states):
        states = np.asarray(states)
        return (np.sort(states, axis=1) == np.arange(self.state_size)).all(axis=1)

    def encode(self, states):
        return encoding.rank_permutations(states, self.record_width)

    def decode(self, rows, *, source="<memory>", offset=0):
        return encoding.unrank_permutations(rows, self.state_size, source=source, offset=offset)

    def blank_positions(self, states: np.ndarray) -> np.ndarray:
        return np.argmax(states == 0, axis=1)

    def expand_pruned(self, states, last):
        states = np.asarray(states, dtype=np.uint8)
        n = states.shape[0]
        blank = self.blank_positions(states)
        out, parents, tags = [], [], []
        idx = np.arange(n)
        for d in range(4):
            target = self.neighbors[blank, d]
            ok = target >= 0
            if last is not None:
                ok &= target != last
            sel = idx[ok]
            if sel.size == 0:
                continue
            child = states[sel].copy()
            tgt = target[sel]
            rows = np.arange(sel.size)
            child[rows, blank[sel]] = child[rows, tgt]
            child[rows, tgt] = 0
            out.append(child)
            parents.append(sel)
            tags.append(blank[sel])
        if not out:
            empty = np.empty((0, self.state_size), dtype=np.uint8)
            return empty, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(out), np.concatenate(parents), np.concatenate(tags)

    def parity(self, state) -> int:
        """Invariant under moves: permutation parity plus blank taxicab parity."""
        s = np.asarray(state)
        inv = int(encoding.lehmer_digits(s[None])[0].sum())
        r, c = divmod(int(np.argmax(s == 0)), self.cols)
        return (inv + r + c) % 2

    def solvable(self, start, goal) -> bool:
        return self.parity(start) == self.parity(goal)

    def random_state(self, rng: np.random.Generator, like=None) -> np.ndarray:
        """Uniform random state reachable from ``like`` (default: the goal)."""
        like = self.goal if like is None else np.asarray(like)
        s = rng.permutation(self.state_size).astype(np.uint8)
        if self.parity(s) != self.parity(like):
            tiles = np.flatnonzero(s != 0)[:2]
            s[tiles] = s[tiles[::-1]]
        return s

    def reflect(self, states: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Mirror about the main diagonal, relabelling tiles so ``target`` is fixed."""
        if self.rows != self.cols:
            raise InputError("reflection needs a square puzzle")
        n = self.rows
        cells = np.arange(self.state_size)
        transpose = (cells % n) * n + cells // n
        target = np.asarray(target)
        if transpose[int(np.argmax(target == 0))] != int(np.argmax(target == 0)):
            raise InputError("reflection needs the target blank on the main diagonal")
        where = np.empty(self.state_size, dtype=np.int64)
        where[target] = cells
        relabel = target[transpose[where]].astype(np.uint8)   # label -> mirrored label
        states = np.asarray(states)
        out = np.empty_like(states)
        out[:, transpose] = relabel[states]
        return out

    def dense_index(self, states):
        if self.state_size > 20:
            raise InputError("dense indexing is limited to puzzles with <= 20 cells")
        rows = self.encode(states)
        return encoding.rows_to_keys(rows).astype(np.int64)

    def from_dense_index(self, index):
        index = np.asarray(index, dtype=np.uint64)
        rows = encoding.keys_to_rows(index, self.record_width)
        return self.decode(rows)

    def parse(self, tokens: Sequence[str]) -> np.ndarray:
        return self.as_state([int(t) for t in tokens])

    def format(self, state) -> str:
        return " ".join(str(int(v)) for v in state)


class Hanoi4(Domain):
    """4-peg Towers of Hanoi; a state stores the peg of each disk.

    Disk 0 is the largest.  The stacking order on each peg is implied by disk
    size, so every peg vector is a legal state.
    """

    pegs = 4

    def __init__(self, disks: int):
        if not 1 <= disks <= 32:
            raise InputError(f"unsupported disk count {disks}")
        self.disks = disks
        self.state_size = disks
        self.name = f"toh4:{disks}"
        self.record_width = -(-2 * disks // 8)
        self.n_states = 4 ** disks
        self.max_branching = 6

    @property
    def goal(self) -> np.ndarray:
        return np.full(self.disks, 3, dtype=np.uint8)

    @property
    def start(self) -> np.ndarray:
        return np.zeros(self.disks, dtype=np.uint8)

    def check_states(self, states):
        return (np.asarray(states) < 4).all(axis=1)

    def encode(self, states):
        return encoding.pack_base4(states, self.record_width)

    def decode(self, rows, *, source="<memory>", offset=0):
        return encoding.unpack_base4(rows, self.disks, source=source, offset=offset)

    def tops(self, states: np.ndarray) -> np.ndarray:
        """Index of the smallest disk on each peg, -1 for an empty peg."""
        n = states.shape[0]
        top = np.full((n, 4), -1, dtype=np.int64)
        rev = states[:, ::-1]
        for p in range(4):
            on = rev == p
            has = on.any(axis=1)
            top[has, p] = self.disks - 1 - np.argmax(on[has], axis=1)
        return top

    def expand_pruned(self, states, last):
        states = np.asarray(states, dtype=np.uint8)
        n = states.shape[0]
        top = self.tops(states)
        idx = np.arange(n)
        out, parents, tags = [], [], []
        for a in range(4):
            disk = top[:, a]
            for b in range(4):
                if a == b:
                    continue
                ok = (disk >= 0) & ((top[:, b] < 0) | (top[:, b] < disk))
                if last is not None:
                    ok &= disk != last
                sel = idx[ok]
                if sel.size == 0:
                    continue
                child = states[sel].copy()
                child[np.arange(sel.size), disk[sel]] = b
                out.append(child)
                parents.append(sel)
                tags.append(disk[sel])
        if not out:
            empty = np.empty((0, self.disks), dtype=np.uint8)
            return empty, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(out), np.concatenate(parents), np.concatenate(tags)

    def random_state(self, rng: np.random.Generator, like=None) -> np.ndarray:
        return rng.integers(0, 4, self.disks).astype(np.uint8)

    def solvable(self, start, goal) -> bool:
        return True

    def dense_index(self, states):
        if self.disks > 31:
            raise InputError("dense indexing is limited to 31 disks")
        w = 4 ** np.arange(self.disks, dtype=np.int64)
        return np.asarray(states, dtype=np.int64) @ w

    def from_dense_index(self, index):
        index = np.asarray(index, dtype=np.int64)
        return ((index[:, None] >> (2 * np.arange(self.disks))) & 3).astype(np.uint8)

    def parse(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) == 1:
            return self.as_state([int(ch) for ch in tokens[0]])
        return self.as_state([int(t) for t in tokens])

    def format(self, state) -> str:
        return "".join(str(int(v)) for v in state)


def domain_from_name(name: str) -> Domain:
    """``stp3``, ``stp4``, ``stp5`` or ``toh4:<disks>``."""
    name = name.strip().lower()
    if name.startswith("stp"):
        size = name[3:]
        if "x" in size:
            r, c = size.split("x")
            return SlidingTile(int(r), int(c))
        if size.isdigit():
            return SlidingTile(int(size))
    if name.startswith("toh4:") and name[5:].isdigit():
        return Hanoi4(int(name[5:]))
    raise InputError(f"unknown domain {name!r}")


def domain_properties(domain: Domain) -> DomainProperties:
    return domain.properties()


@dataclass
class ProblemInstance:
    """A start/goal pair plus the front-to-end heuristic pair.

    ``heuristics[0]`` estimates the distance to ``goal`` and ``heuristics[1]``
    the distance to ``start``.
    """

    domain: Domain
    start: np.ndarray
    goal: np.ndarray
    heuristics: tuple = (None, None)
    index: int = 0

    def __post_init__(self):
        self.start = self.domain.as_state(self.start)
        self.goal = self.domain.as_state(self.goal)
        if not self.domain.solvable(self.start, self.goal):
            raise InputError("start and goal are not mutually reachable")

    def heuristic(self, direction) -> object:
        return self.heuristics[int(direction)]

    def root(self, direction) -> np.ndarray:
        return self.start if int(direction) == 0 else self.goal

    def target(self, direction) -> np.ndarray:
        return self.goal if int(direction) == 0 else self.start


# ---------------------------------------------------------------------------
# Instance files

def read_instances(path: str | Path, domain: Domain) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parse an instance file into ``(start, goal)`` pairs.

    Sliding tiles: ``N*N`` integers (start, canonical goal) or ``2*N*N``
    integers (start then goal).  Hanoi: one digit string per state, start then
    optional goal (default: every disk on peg 3).  ``#`` starts a comment.
    """
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            pairs.append(parse_instance(text, domain))
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return pairs


def parse_instance(text: str, domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    tokens = text.split()
    if isinstance(domain, SlidingTile):
        n = domain.state_size
        if len(tokens) == n:
            return domain.parse(tokens), domain.goal
        if len(tokens) == 2 * n:
            return domain.parse(tokens[:n]), domain.parse(tokens[n:])
        raise InputError(f"expected {n} or {2 * n} tile labels, got {len(tokens)}")
    if len(tokens) == 1:
        return domain.parse(tokens), domain.goal
    if len(tokens) == 2:
        return domain.parse(tokens[:1]), domain.parse(tokens[1:])
    raise InputError("expected a start and optional goal peg string")


def format_instance(domain: Domain, start, goal) -> str:
    return f"{domain.format(start)} {domain.format(goal)}"


def write_instances(path: str | Path, domain: Domain, pairs: Iterable) -> None:
    lines = [format_instance(domain, s, g) for s, g in pairs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def generate_instances(domain: Domain, count: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded uniform random start/goal pairs (same parity class for tiles)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        goal = domain.random_state(rng)
        start = domain.random_state(rng, like=goal)
        out.append((start, goal))
    return out


def korf100() -> list[tuple[np.ndarray, np.ndarray]]:
    """Korf's 100 random 15-puzzle instances (canonical goal)."""
    path = Path(__file__).with_name("data") / "korf100.txt"
    return read_instances(path, SlidingTile(4))


def breadth_first_distances(domain: Domain, sources: np.ndarray, *, limit: int = 1 << 27,
                            stop_at: np.ndarray | None = None) -> np.ndarray:
    """Exact unit-cost distances from ``sources`` over the whole state space.

    Returns a dense ``uint8`` array indexed by :meth:`Domain.dense_index`
    (255 = not reached).  When ``stop_at`` is given the sweep ends after the
    layer containing that state.
    """
    from .errors import CapacityError

    if domain.n_states > limit:
        raise CapacityError(
            f"{domain.name}: exhaustive search needs {domain.n_states} entries (limit {limit})")
    dist = np.full(domain.n_states, 255, dtype=np.uint8)
    frontier = np.unique(domain.dense_index(np.atleast_2d(sources)))
    dist[frontier] = 0
    stop = None if stop_at is None else int(domain.dense_index(np.atleast_2d(stop_at))[0])
    depth = 0
    while frontier.size:
        if stop is not None and dist[stop] != 255:
            break
        if depth >= 254:
            raise CapacityError("distances above 254 do not fit the oracle table")
        nxt = []
        for lo in range(0, frontier.size, 1 << 18):
            states = domain.from_dense_index(frontier[lo:lo + (1 << 18)])
            children, _ = domain.expand(states)
            idx = np.unique(domain.dense_index(children))
            idx = idx[dist[idx] == 255]
            dist[idx] = depth + 1
            nxt.append(idx)
        frontier = np.concatenate(nxt) if nxt else np.empty(0, np.int64)
        depth += 1
    return dist
