import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pembihs import encoding
from pembihs.dedup import (SLOTS_PER_LOCK, InMemoryBucket, InsertResult, TargetIndex,
                           check_for_solution_delayed, check_for_solution_immediate,
                           g_level_filter, in_bucket_insert, remove_duplicates_vs_closed)
from pembihs.errors import CapacityError
from pembihs.storage import SCHEMES, BucketId, BucketStore, MemoryAccount
from pembihs.types import INFINITY, Direction

F, B = Direction.FORWARD, Direction.BACKWARD


def u64(values):
    return np.asarray(values, dtype=np.uint64)


def test_single_inserts():
    t = InMemoryBucket(10, 3)
    assert in_bucket_insert(t, 5) is InsertResult.INSERTED
    assert in_bucket_insert(t, 5) is InsertResult.DUPLICATE
    assert in_bucket_insert(t, 6) is InsertResult.INSERTED
    assert len(t) == 2 and t.duplicates == 1


def test_batch_with_internal_duplicates_first_writer_wins():
    t = InMemoryBucket(100, 3)
    mask = t.insert_many(u64([7, 7, 8, 7, 9, 8]))
    assert mask.tolist() == [True, False, True, False, True, False]
    assert sorted(t.keys().tolist()) == [7, 8, 9]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5000), max_size=400), st.sampled_from([1, 2, 8]))
def test_matches_python_set(values, workers):
    t = InMemoryBucket(max(1, len(values) // 3), 3, workers=workers)
    seen = set()
    expect = []
    for chunk in (values[:100], values[100:]):
        mask = t.insert_many(u64(chunk))
        for v, m in zip(chunk, mask.tolist()):
            expect.append(v not in seen)
            seen.add(v)
            assert m == expect[-1]
    assert sorted(t.keys().tolist()) == sorted(seen)
    assert len(t) == len(seen)
    assert t.contains(u64(list(seen))).all() if seen else True


def test_wide_keys_over_eight_bytes():
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 256, (3000, 11)).astype(np.uint8)
    rows = np.concatenate([rows, rows[:1000]])
    keys = encoding.rows_to_keys(rows)
    t = InMemoryBucket(len(keys), 11, workers=4)
    mask = t.insert_many(keys)
    assert mask.sum() == 3000
    assert np.array_equal(np.unique(t.rows(), axis=0), np.unique(rows, axis=0))


def test_lock_groups_hold_at_least_64_slots():
    t = InMemoryBucket(1000, 3, workers=8)
    assert t.n_groups >= 2
    assert t.slots_per_group >= SLOTS_PER_LOCK
    tiny = InMemoryBucket(10, 3, workers=8)
    assert tiny.n_groups == 1


def test_group_growth_under_skew():
    # capacity is only a sizing hint: far more keys still fit by rehashing
    t = InMemoryBucket(16, 3)
    t.insert_many(u64(range(5000)))
    assert len(t) == 5000
    assert t.contains(u64(range(5000))).all()


def test_growth_respects_memory_budget():
    mem = MemoryAccount(4096)
    t = InMemoryBucket(16, 3, memory=mem)
    with pytest.raises(CapacityError, match="overflow"):
        t.insert_many(u64(range(100_000)))


def test_remove_many_and_contains():
    t = InMemoryBucket(100, 3)
    t.insert_many(u64(range(20)))
    assert t.remove_many(u64([1, 2, 2, 50])) == 2
    assert not t.contains(u64([1, 2])).any()
    assert t.contains(u64([1]), include_removed=True)[0]
    assert len(t) == 18
    assert 1 not in t.keys().tolist()


def test_release_returns_memory():
    mem = MemoryAccount(1 << 20)
    t = InMemoryBucket(100, 3, memory=mem)
    assert mem.used == t.nbytes > 0
    t.release()
    assert mem.used == 0


def test_concurrent_inserts_keep_exactly_one_copy():
    rng = np.random.default_rng(1)
    values = rng.integers(0, 40_000, 200_000).astype(np.uint64)
    t = InMemoryBucket(len(values), 3, workers=8)
    parts = np.array_split(values, 8)
    with ThreadPoolExecutor(8) as pool:
        masks = list(pool.map(t.insert_many, parts))
    n_unique = len(np.unique(values))
    assert sum(int(m.sum()) for m in masks) == n_unique
    assert len(t) == n_unique
    assert t.inserted == n_unique and t.duplicates == len(values) - n_unique


def test_g_level_filter(tmp_path):
    store = BucketStore(tmp_path, 3, SCHEMES["g-h"])
    recs = [store.write_closed(BucketId(F, (g, 3)), np.zeros((1, 3), np.uint8))
            for g in range(7)]
    kept = g_level_filter(recs, 5, unit_cost=True, undirected=True)
    assert [r.id.g for r in kept] == [3, 4, 5]
    assert g_level_filter(recs, 5, unit_cost=False, undirected=True) == recs


def _rows(values):
    return encoding.keys_to_rows(u64(values), 3)


def test_remove_duplicates_vs_closed_segmented(tmp_path):
    store = BucketStore(tmp_path, 3, SCHEMES["g-h"])
    a = store.write_closed(BucketId(F, (1, 2)), _rows([1, 2, 3, 4, 5]))
    b = store.write_closed(BucketId(F, (2, 2)), _rows([10, 11]))
    t = InMemoryBucket(10, 3)
    t.insert_many(u64([2, 4, 11, 99]))
    with ThreadPoolExecutor(2) as pool:
        n = remove_duplicates_vs_closed(t, [a, b], step=2, pool=pool)
    assert n == 3
    assert t.keys().tolist() == [99]


def test_delayed_detection_takes_cheapest_meeting(tmp_path):
    store = BucketStore(tmp_path, 3, SCHEMES["g-hf-hb"])
    r3 = store.write_closed(BucketId(B, (3, 1, 1)), _rows([7, 8]))
    r5 = store.write_closed(BucketId(B, (5, 1, 1)), _rows([7]))
    t = InMemoryBucket(10, 3)
    t.insert_many(u64([7]))
    assert check_for_solution_delayed(t, 4, [r5, r3], INFINITY, step=1) == 7
    # incumbent already as good: nothing changes
    assert check_for_solution_delayed(t, 4, [r5, r3], 7, step=1) == 7
    t2 = InMemoryBucket(10, 3)
    t2.insert_many(u64([100]))
    assert check_for_solution_delayed(t2, 4, [r5, r3], INFINITY, step=1) == INFINITY


def test_immediate_detection():
    idx = TargetIndex(np.uint64(42))
    assert check_for_solution_immediate(u64([1, 42]), 9, idx, INFINITY) == 9
    assert check_for_solution_immediate(u64([1, 2]), 9, idx, INFINITY) == INFINITY
    assert check_for_solution_immediate(u64([42]), 9, idx, 5) == 5
