"""Fixed-width state codecs.

Permutations are packed with their Lehmer code, a mixed-radix integer in
``[0, n!)``.  The integer is built with 32-bit limbs held in ``uint64`` lanes so
that the same vectorized path handles the 15-puzzle (45 bits) and the 24-puzzle
(84 bits).  Codes are serialized as little-endian byte rows of a fixed width.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import CorruptionError, InputError

_LIMB_BITS = 32
_LIMB_MASK = np.uint64((1 << _LIMB_BITS) - 1)


def lehmer_bits(n: int) -> int:
    """Bits needed to hold every Lehmer code of an n-permutation."""
    return max(1, math.ceil(math.log2(math.factorial(n)))) if n > 1 else 1


def lehmer_digits(perms: np.ndarray) -> np.ndarray:
    """Lehmer digits ``d_i = #{j > i : p_j < p_i}`` for each row."""
    perms = np.asarray(perms)
    n = perms.shape[1]
    digits = np.zeros(perms.shape, dtype=np.uint64)
    for i in range(n - 1):
        digits[:, i] = (perms[:, i + 1:] < perms[:, i:i + 1]).sum(axis=1)
    return digits


def _n_limbs(n_bytes: int) -> int:
    return max(1, -(-n_bytes // 4))


def limbs_to_rows(limbs: np.ndarray, width: int) -> np.ndarray:
    """(N, L) limbs of 32 bits -> (N, width) little-endian bytes."""
    raw = np.ascontiguousarray(limbs.astype("<u4")).view(np.uint8)
    return np.ascontiguousarray(raw.reshape(limbs.shape[0], 4 * limbs.shape[1])[:, :width])


def rows_to_limbs(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.uint8)
    n, width = rows.shape
    n_limbs = _n_limbs(width)
    padded = np.zeros((n, 4 * n_limbs), dtype=np.uint8)
    padded[:, :width] = rows
    return padded.view("<u4").astype(np.uint64)


# Small permutations (n <= 16) take a table-driven path: the set of symbols
# seen so far is a 16-bit mask, popcounts give Lehmer digits and a select
# table maps (mask of free symbols, digit) back to a symbol.
_SMALL_N = 16
_tables: dict = {}


def _popcount16() -> np.ndarray:
    t = _tables.get("pop")
    if t is None:
        t = np.zeros(1 << 16, dtype=np.uint8)
        for b in range(16):
            t += ((np.arange(1 << 16) >> b) & 1).astype(np.uint8)
        _tables["pop"] = t
    return t


def _select16() -> np.ndarray:
    """``table[mask, d]`` = position of the d-th set bit of ``mask``."""
    t = _tables.get("sel")
    if t is None:
        masks = np.arange(1 << 16, dtype=np.int64)
        t = np.full((1 << 16, 16), 255, dtype=np.uint8)
        seen = np.zeros(1 << 16, dtype=np.int64)
        for b in range(16):
            bit = ((masks >> b) & 1).astype(bool)
            t[masks[bit], seen[bit]] = b
            seen += bit
        _tables["sel"] = t
    return t


def _rank_small(perms: np.ndarray) -> np.ndarray:
    pop = _popcount16()
    n = perms.shape[1]
    p = perms.astype(np.int64)
    seen = np.zeros(len(p), dtype=np.int64)
    rank = np.zeros(len(p), dtype=np.uint64)
    for i in range(n):
        below = pop[seen & ((1 << p[:, i]) - 1)]
        digit = p[:, i] - below
        rank = rank * np.uint64(n - i) + digit.astype(np.uint64)
        seen |= 1 << p[:, i]
    return rank


def _unrank_small(rank: np.ndarray, n: int) -> np.ndarray:
    sel = _select16()
    count = len(rank)
    digits = np.empty((count, n), dtype=np.int64)
    r = rank.copy()
    for i in range(n - 1, -1, -1):
        radix = np.uint64(n - i)
        digits[:, i] = (r % radix).astype(np.int64)
        r //= radix
    out = np.empty((count, n), dtype=np.uint8)
    free = np.full(count, (1 << n) - 1, dtype=np.int64)
    for i in range(n):
        pick = sel[free, digits[:, i]]
        out[:, i] = pick
        free &= ~(np.int64(1) << pick.astype(np.int64))
    return out, r


def rank_permutations(perms: np.ndarray, width: int) -> np.ndarray:
    """Lehmer-rank each permutation row and pack the rank into ``width`` bytes."""
    perms = np.asarray(perms)
    if perms.ndim != 2:
        raise InputError("expected a 2-D array of permutations")
    n = perms.shape[1]
    if n <= _SMALL_N and width <= 8:
        rank = _rank_small(perms)
        raw = rank.astype("<u8").view(np.uint8).reshape(len(rank), 8)
        return np.ascontiguousarray(raw[:, :width])
    digits = lehmer_digits(perms)
    limbs = np.zeros((perms.shape[0], _n_limbs(width)), dtype=np.uint64)
    for i in range(n):
        # Horner step: value = value * (n - i) + d_i
        carry = digits[:, i].copy()
        radix = np.uint64(n - i)
        for k in range(limbs.shape[1]):
            v = limbs[:, k] * radix + carry
            limbs[:, k] = v & _LIMB_MASK
            carry = v >> np.uint64(_LIMB_BITS)
    return limbs_to_rows(limbs, width)


def unrank_permutations(rows: np.ndarray, n: int, *, source: str = "<memory>",
                        offset: int = 0) -> np.ndarray:
    """Inverse of :func:`rank_permutations`; returns ``(N, n)`` uint8."""
    rows = np.asarray(rows, dtype=np.uint8)
    if n <= _SMALL_N and rows.shape[1] <= 8:
        padded = np.zeros((rows.shape[0], 8), dtype=np.uint8)
        padded[:, :rows.shape[1]] = rows
        rank = padded.view("<u8").ravel().astype(np.uint64)
        perms, rest = _unrank_small(rank, n)
        bad = rest != 0
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            raise CorruptionError(
                f"Lehmer code out of range in {source} at record {offset + first}")
        return perms
    limbs = rows_to_limbs(rows)
    count = limbs.shape[0]
    digits = np.zeros((count, n), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        radix = np.uint64(n - i)
        rem = np.zeros(count, dtype=np.uint64)
        for k in range(limbs.shape[1] - 1, -1, -1):
            cur = (rem << np.uint64(_LIMB_BITS)) | limbs[:, k]
            limbs[:, k] = cur // radix
            rem = cur % radix
        digits[:, i] = rem
    bad = limbs.any(axis=1)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise CorruptionError(
            f"Lehmer code out of range in {source} at record {offset + first}")
    return _digits_to_perms(digits, n)


def _digits_to_perms(digits: np.ndarray, n: int) -> np.ndarray:
    count = digits.shape[0]
    avail = np.ones((count, n), dtype=bool)
    perms = np.empty((count, n), dtype=np.uint8)
    rows = np.arange(count)
    for i in range(n):
        # pick the (d_i)-th still-unused symbol
        seen = np.cumsum(avail, axis=1)
        pick = np.argmax(avail & (seen == (digits[:, i:i + 1] + 1)), axis=1)
        perms[:, i] = pick
        avail[rows, pick] = False
    return perms


def rank_permutation(perm, width: int) -> int:
    """Scalar Lehmer rank as a Python int (handy for tests and fixtures)."""
    row = rank_permutations(np.asarray([perm]), width)[0]
    return int.from_bytes(row.tobytes(), "little")


# ---------------------------------------------------------------------------
# Partial permutations: ordered placements of k distinct items into n cells.
# Used to index sliding-tile pattern databases compactly.

def n_partial_permutations(n: int, k: int) -> int:
    return math.perm(n, k)


def rank_partial(positions: np.ndarray, n: int) -> np.ndarray:
    """Rank rows of k distinct cells in ``[0, n)`` into ``[0, n!/(n-k)!)``."""
    positions = np.asarray(positions, dtype=np.int64)
    count, k = positions.shape
    rank = np.zeros(count, dtype=np.int64)
    for i in range(k):
        smaller = (positions[:, :i] < positions[:, i:i + 1]).sum(axis=1)
        rank = rank * (n - i) + (positions[:, i] - smaller)
    return rank


def unrank_partial(ranks: np.ndarray, n: int, k: int) -> np.ndarray:
    ranks = np.asarray(ranks, dtype=np.int64).copy()
    count = ranks.shape[0]
    digits = np.empty((count, k), dtype=np.int64)
    for i in range(k - 1, -1, -1):
        radix = n - i
        digits[:, i] = ranks % radix
        ranks //= radix
    out = np.empty((count, k), dtype=np.int64)
    for i in range(k):
        d = digits[:, i].copy()
        # undo the "minus #smaller earlier entries" shift in increasing order
        taken = np.sort(out[:, :i], axis=1) if i else np.empty((count, 0), np.int64)
        for j in range(i):
            d += d >= taken[:, j]
        out[:, i] = d
    return out


# ---------------------------------------------------------------------------
# Base-4 peg vectors (Towers of Hanoi).

def pack_base4(pegs: np.ndarray, width: int) -> np.ndarray:
    pegs = np.asarray(pegs, dtype=np.uint64)
    count, n = pegs.shape
    limbs = np.zeros((count, _n_limbs(width)), dtype=np.uint64)
    for i in range(n):
        limb, shift = divmod(2 * i, _LIMB_BITS)
        limbs[:, limb] |= pegs[:, i] << np.uint64(shift)
    return limbs_to_rows(limbs, width)


def unpack_base4(rows: np.ndarray, n: int, *, source: str = "<memory>",
                 offset: int = 0) -> np.ndarray:
    limbs = rows_to_limbs(rows)
    out = np.empty((limbs.shape[0], n), dtype=np.uint8)
    for i in range(n):
        limb, shift = divmod(2 * i, _LIMB_BITS)
        out[:, i] = (limbs[:, limb] >> np.uint64(shift)) & np.uint64(3)
        limbs[:, limb] &= ~(np.uint64(3) << np.uint64(shift))
    bad = limbs.any(axis=1)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise CorruptionError(
            f"stray padding bits in {source} at record {offset + first}")
    return out


# ---------------------------------------------------------------------------
# Keys: the in-memory view of a packed record used for hashing and equality.

def rows_to_keys(rows: np.ndarray) -> np.ndarray:
    """Byte rows -> uint64 keys (width <= 8) or opaque void keys (wider)."""
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    count, width = rows.shape
    if width <= 8:
        padded = np.zeros((count, 8), dtype=np.uint8)
        padded[:, :width] = rows
        return padded.view("<u8").ravel().astype(np.uint64)
    return rows.view(np.dtype((np.void, width))).ravel()


def keys_to_rows(keys: np.ndarray, width: int) -> np.ndarray:
    if keys.dtype == np.uint64:
        raw = np.ascontiguousarray(keys.astype("<u8")).view(np.uint8)
        return np.ascontiguousarray(raw.reshape(-1, 8)[:, :width])
    return np.ascontiguousarray(keys).view(np.uint8).reshape(-1, width)


def key_dtype(width: int) -> np.dtype:
    return np.dtype(np.uint64) if width <= 8 else np.dtype((np.void, width))


def hash_keys(keys: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over the key words."""
    if keys.dtype == np.uint64:
        return _mix(keys.copy())
    width = keys.dtype.itemsize
    rows = np.ascontiguousarray(keys).view(np.uint8).reshape(-1, width)
    n_words = -(-width // 8)
    padded = np.zeros((rows.shape[0], 8 * n_words), dtype=np.uint8)
    padded[:, :width] = rows
    words = padded.view("<u8").astype(np.uint64)
    h = np.zeros(rows.shape[0], dtype=np.uint64)
    for w in range(n_words):
        h = _mix(h ^ words[:, w])
    return h


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))
