import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pembihs.dedup import InMemoryBucket
from pembihs.errors import CapacityError, CorruptionError, StorageError
from pembihs.storage import (CLOSED, OPEN, SCHEMES, BucketId, BucketRecord, BucketStore,
                             Frontier, MemoryAccount, SuccessorCache, parallel_read_bucket,
                             read_records, segments)
from pembihs.types import INFINITY, Direction

F, B = Direction.FORWARD, Direction.BACKWARD
GH, GPR, GHH = SCHEMES["g-h"], SCHEMES["g-pr"], SCHEMES["g-hf-hb"]


def rows_of(values, width=3):
    return np.array([[(v >> (8 * i)) & 0xFF for i in range(width)] for v in values],
                    dtype=np.uint8)


def test_bucket_filenames():
    assert BucketId(F, (3, 4)).filename(GH.labels) == "g3-h4.bkt"
    assert BucketId(B, (2, 5, 1)).filename(GHH.labels) == "g2-hf5-hb1.bkt"
    assert BucketId(F, (1, 2), partition=7).filename(GH.labels) == "g1-h2-p7.bkt"


def test_scheme_values():
    k = (3, 5, 2)                       # g, hF, hB
    assert GHH.f_value(k, F) == 8 and GHH.f_value(k, B) == 5
    assert GHH.b_value(k, F) == 2 * 3 + 5 - 2
    assert GHH.b_value(k, B) == 2 * 3 + 2 - 5
    assert GH.primary((3, 4), F) == 7
    assert GPR.primary((3, 9), F) == 9
    # pr > 2g: f is pr itself; pr == 2g: only f >= g is known
    assert GPR.f_value((3, 9), F) == 9 and GPR.f_value((3, 6), F) == 3
    keys = GPR.child_keys(4, np.array([1, 5]), None, F)
    assert keys[:, 0].tolist() == [8, 9]


def test_priority_tie_break_order():
    lo = GH.priority((2, 5), F, higher_g_first=False)
    hi = GH.priority((4, 3), F, higher_g_first=False)
    assert lo < hi
    assert GH.priority((4, 3), F, True) < GH.priority((2, 5), F, True)


def make_frontier(scheme, keys, d=F, higher_g_first=False, counts=None, tmp=None):
    fr = Frontier(d, OPEN, scheme, higher_g_first)
    for i, k in enumerate(keys):
        n = counts[i] if counts else 1
        fr.add(BucketRecord(BucketId(d, k), tmp, 3, n))
    return fr


def test_frontier_stats_and_best(tmp_path):
    fr = make_frontier(GHH, [(0, 10, 0), (2, 7, 3), (3, 6, 5)], counts=[1, 4, 2], tmp=tmp_path)
    st_ = fr.stats()
    assert st_ == fr.recompute()
    assert st_.f_min == 9 and st_.g_min == 0 and st_.total_nodes == 7
    assert st_.b_min == min(0 + 10 - 0, 4 + 7 - 3, 6 + 6 - 5)
    assert fr.best().id.key == (3, 6, 5)
    fr.remove((3, 6, 5))
    assert fr.stats() == fr.recompute()
    assert fr.best().id.key == (2, 7, 3)
    assert Frontier(F, OPEN, GH).stats().f_min == INFINITY
    with pytest.raises(ValueError):
        fr.add(BucketRecord(BucketId(F, (0, 10, 0)), tmp_path, 3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20)),
                min_size=1, max_size=30, unique=True),
       st.data())
def test_incremental_stats_equal_recomputed(keys, data):
    fr = make_frontier(GHH, keys, d=B)
    removed = data.draw(st.lists(st.sampled_from(keys), unique=True))
    for k in removed:
        fr.remove(k)
    assert fr.stats() == fr.recompute()
    if len(fr):
        best = fr.best().id.key
        assert all(GHH.priority(best, B, False) <= GHH.priority(k, B, False)
                   for k in fr.records)


def test_dd_and_dsd_groups(tmp_path):
    fr = make_frontier(GHH, [(1, 2, 3), (2, 2, 3), (2, 3, 3)], tmp=tmp_path)
    assert [r.id.key for r in fr.in_group((2, 3))] == [(1, 2, 3), (2, 2, 3)]
    assert len(fr.in_group(None)) == 3
    fr2 = make_frontier(GH, [(1, 4), (3, 4), (2, 5)], tmp=tmp_path)
    assert [r.id.key for r in fr2.in_group((4,))] == [(1, 4), (3, 4)]


def test_store_append_read_and_layout(tmp_path):
    store = BucketStore(tmp_path / "run", 3, GH)
    bid = BucketId(F, (1, 4))
    store.append_open(bid, rows_of([1, 2]))
    rec = store.append_open(bid, rows_of([3]))
    assert rec.path == tmp_path / "run" / "F" / "open" / "g1-h4.bkt"
    assert rec.node_count == rec.file_count() == 3
    assert read_records(rec).tolist() == rows_of([1, 2, 3]).tolist()
    assert read_records(rec, 1, 1).tolist() == rows_of([2]).tolist()
    assert store.disk_bytes() == 9
    taken = store.take_open(bid)
    assert taken is rec and len(store.open[F]) == 0
    store.write_closed(bid, read_records(taken))
    store.discard(taken)
    assert not taken.path.exists()
    assert store.closed[F].get((1, 4)).path.parent.name == CLOSED
    manifest = store.write_manifest().read_text().splitlines()
    assert manifest[1] == "F\tclosed\t1,4\t3"


def test_closed_merge_replaces_atomically(tmp_path):
    store = BucketStore(tmp_path, 3, GH)
    bid = BucketId(B, (2, 2))
    store.write_closed(bid, rows_of([5]))
    rec = store.write_closed(bid, rows_of([6, 7]))
    assert rec.node_count == 3
    assert sorted(read_records(rec)[:, 0].tolist()) == [5, 6, 7]
    assert not list(tmp_path.rglob("*.merge"))
    assert store.closed[B].total_nodes == 3


def test_component_out_of_range_is_a_storage_error(tmp_path):
    store = BucketStore(tmp_path, 3, GH)
    with pytest.raises(StorageError):
        store.append_open(BucketId(F, (1, -2)), rows_of([1]))


def test_misaligned_file_is_corruption(tmp_path):
    store = BucketStore(tmp_path, 3, GH)
    rec = store.append_open(BucketId(F, (0, 1)), rows_of([1, 2]))
    with open(rec.path, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(CorruptionError, match="not a multiple"):
        read_records(rec)
    rec2 = store.append_open(BucketId(F, (0, 2)), rows_of([1]))
    with pytest.raises(CorruptionError, match="requested records"):
        read_records(rec2, 0, 5)


def test_unwritable_run_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(StorageError):
        BucketStore(blocker / "sub", 3, GH)


@pytest.mark.parametrize("total,parts", [(10, 3), (1, 8), (0, 4), (100, 100), (7, 1)])
def test_segments_partition(total, parts):
    segs = segments(total, parts)
    covered = [i for s, c in segs for i in range(s, s + c)]
    assert covered == list(range(total))
    assert len(segs) <= max(1, parts)
    assert segments(10, 1, step=4) == [(0, 4), (4, 4), (8, 2)]


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_parallel_read_loads_every_record_once(tmp_path, workers):
    store = BucketStore(tmp_path, 3, GH)
    values = list(range(1000)) + list(range(500))        # 500 duplicates
    rec = store.append_open(BucketId(F, (0, 0)), rows_of(values))
    table = InMemoryBucket(2000, 3, workers=workers)
    with ThreadPoolExecutor(workers) as pool:
        parallel_read_bucket(rec, workers, table, pool=pool, n_states=1 << 24)
    assert len(table) == 1000
    assert sorted(table.keys().tolist()) == list(range(1000))


def test_parallel_read_rejects_out_of_range_codes(tmp_path):
    store = BucketStore(tmp_path, 3, GH)
    rec = store.append_open(BucketId(F, (0, 0)), rows_of([1, 2, 999]))
    with pytest.raises(CorruptionError, match="record 2"):
        parallel_read_bucket(rec, 1, InMemoryBucket(10, 3), n_states=500)


def test_memory_account():
    mem = MemoryAccount(100)
    mem.reserve(60, "a")
    with pytest.raises(CapacityError, match="only 40"):
        mem.reserve(50, "b")
    mem.release(60)
    mem.reserve(100, "c")
    assert mem.peak == 100


def test_successor_cache_flushes_and_accounts(tmp_path):
    mem = MemoryAccount(1 << 20)
    store = BucketStore(tmp_path, 3, GH, memory=mem)
    cache = SuccessorCache(0, store, capacity=4)
    a, b = BucketId(F, (1, 1)), BucketId(F, (1, 2))
    cache.add(a, rows_of(range(10)))
    cache.add(b, rows_of([42]))
    assert store.open[F].get((1, 1)).node_count == 8         # two full flushes
    assert mem.used == 2 * 4 * 3
    cache.release()
    assert mem.used == 0
    assert store.open[F].get((1, 1)).node_count == 10
    assert store.open[F].get((1, 2)).node_count == 1
    assert cache.added == cache.flushed == 11


def test_successor_cache_dedup_option(tmp_path):
    store = BucketStore(tmp_path, 3, GH)
    cache = SuccessorCache(0, store, capacity=8, dedup=True)
    cache.add(BucketId(F, (0, 0)), rows_of([1, 1, 2, 1]))
    cache.release()
    assert store.open[F].get((0, 0)).node_count == 2


def test_cache_over_budget_fails_before_allocating(tmp_path):
    store = BucketStore(tmp_path, 3, GH, memory=MemoryAccount(10))
    cache = SuccessorCache(0, store, capacity=100)
    with pytest.raises(CapacityError):
        cache.add(BucketId(F, (0, 0)), rows_of([1]))


def test_concurrent_appends_do_not_interleave(tmp_path):
    store = BucketStore(tmp_path, 3, GH)
    bid = BucketId(F, (0, 0))

    def writer(w):
        for i in range(50):
            store.append_open(bid, rows_of([w * 1000 + i] * 7))

    threads = [threading.Thread(target=writer, args=(w,)) for w in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    rec = store.open[F].get((0, 0))
    data = read_records(rec)
    assert rec.node_count == len(data) == 8 * 50 * 7
    # each append of 7 equal records stays contiguous
    blocks = data.reshape(-1, 7, 3)
    assert (blocks == blocks[:, :1]).all()
    assert store.lock_violations() == 0
