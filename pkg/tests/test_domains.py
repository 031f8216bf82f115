import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pembihs.domains import (Hanoi4, SlidingTile, breadth_first_distances, domain_from_name,
                             generate_instances, korf100, parse_instance, read_instances,
                             write_instances)
from pembihs.errors import CapacityError, CorruptionError, InputError

from conftest import hanoi_distances_by_recursion


def test_domain_names():
    assert domain_from_name("stp4").state_size == 16
    assert domain_from_name("STP3").name == "stp3"
    assert domain_from_name("toh4:12").disks == 12
    assert domain_from_name("stp2x3").n_states == 720
    for bad in ("stp", "toh4:", "toh3:5", "rubik"):
        with pytest.raises(InputError):
            domain_from_name(bad)


def test_record_widths():
    assert SlidingTile(3).record_width == 3
    assert SlidingTile(4).record_width == 6
    assert SlidingTile(5).record_width == 11
    assert Hanoi4(12).record_width == 3
    assert Hanoi4(16).record_width == 4


def test_stp_goal_successors():
    dom = SlidingTile(3)
    kids = dom.successors(dom.goal)
    # blank in the corner: two moves
    assert sorted(kids) == sorted([(3, 1, 2, 0, 4, 5, 6, 7, 8), (1, 0, 2, 3, 4, 5, 6, 7, 8)])


def test_stp_moves_are_reversible(stp4):
    rng = np.random.default_rng(1)
    states = np.array([rng.permutation(16) for _ in range(200)], dtype=np.uint8)
    kids, parents = stp4.expand(states)
    back, back_parents = stp4.expand(kids)
    for i in range(len(kids)):
        assert states[parents[i]].tolist() in back[back_parents == i].tolist()


def test_pruned_expansion_drops_only_the_inverse_move(stp4):
    s = stp4.as_state([5, 1, 2, 3, 4, 0, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15])
    kids, _, tags = stp4.expand_pruned(s[None], None)
    assert len(kids) == 4 and (tags == 5).all()
    # move the blank from cell 5 to cell 4, then forbid moving it back to 5
    idx = [i for i, c in enumerate(kids.tolist()) if c.index(0) == 4][0]
    child = kids[idx]
    again, _, _ = stp4.expand_pruned(child[None], np.array([5]))
    assert s.tolist() not in again.tolist()
    assert len(again) == len(stp4.expand(child[None])[0]) - 1


def test_stp_encode_decode_state(stp4):
    s = korf100()[0][0]
    packed = stp4.encode_state(s)
    assert len(packed) == 6
    assert stp4.decode_state(packed) == tuple(int(v) for v in s)
    with pytest.raises(InputError):
        stp4.decode_state(b"\x00" * 5)


def test_stp_decode_corrupt_record_names_source(stp3):
    rows = np.array([[0, 0, 0], [0xFF, 0xFF, 0xFF]], dtype=np.uint8)
    with pytest.raises(CorruptionError, match="f.bkt at record 1"):
        stp3.decode(rows, source="f.bkt")


def test_illegal_states_are_rejected(stp3):
    with pytest.raises(InputError):
        stp3.as_state([0, 0, 1, 2, 3, 4, 5, 6, 7])
    with pytest.raises(InputError):
        stp3.as_state([0, 1, 2])
    with pytest.raises(InputError):
        Hanoi4(3).as_state([0, 4, 1])


def test_parity_and_unsolvable_pairs(stp3):
    goal = stp3.goal
    swapped = goal.copy()
    swapped[[1, 2]] = swapped[[2, 1]]
    assert not stp3.solvable(swapped, goal)
    from pembihs.domains import ProblemInstance
    with pytest.raises(InputError, match="not mutually reachable"):
        ProblemInstance(stp3, swapped, goal)


def test_stp3_exhaustive_bfs_reaches_half_the_space(stp3):
    dist = breadth_first_distances(stp3, stp3.goal[None])
    reached = dist != 255
    assert reached.sum() == 181_440
    # the 8-puzzle diameter is 31, attained by exactly two states
    assert dist[reached].max() == 31
    assert (dist == 31).sum() == 2


def test_hanoi_moves():
    dom = Hanoi4(3)
    kids = dom.successors([0, 0, 0])
    # only the smallest disk (index 2) can move: three targets
    assert sorted(kids) == [(0, 0, 1), (0, 0, 2), (0, 0, 3)]
    kids = dom.successors([0, 1, 2])
    # tops: peg0 has disk0, peg1 disk1, peg2 disk2
    assert len(kids) == 3 + 2 + 1


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_hanoi_bfs_matches_frame_stewart(n):
    dom = Hanoi4(n)
    dist = breadth_first_distances(dom, dom.goal[None])
    d = dist[dom.dense_index(dom.start[None])[0]]
    assert d == hanoi_distances_by_recursion(n)[n]


def test_bfs_limit():
    with pytest.raises(CapacityError):
        breadth_first_distances(Hanoi4(14), Hanoi4(14).goal[None], limit=1 << 20)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=20))
def test_hanoi_dense_index_roundtrip(pegs):
    dom = Hanoi4(len(pegs))
    s = dom.as_state(pegs)
    idx = dom.dense_index(s[None])
    assert dom.from_dense_index(idx).tolist() == [pegs]
    assert dom.decode_state(dom.encode_state(pegs)) == tuple(pegs)


def test_korf100_fixture():
    pairs = korf100()
    assert len(pairs) == 100
    dom = SlidingTile(4)
    for s, g in pairs:
        assert np.array_equal(g, dom.goal)
        assert dom.solvable(s, g)
    # first line of the classic set
    assert pairs[0][0].tolist() == [14, 13, 15, 7, 11, 12, 9, 5, 6, 0, 2, 1, 4, 8, 10, 3]


def test_instance_files_roundtrip(tmp_path):
    for dom in (SlidingTile(3), Hanoi4(9)):
        pairs = generate_instances(dom, 5, seed=11)
        path = tmp_path / f"{dom.name.replace(':', '_')}.txt"
        write_instances(path, dom, pairs)
        back = read_instances(path, dom)
        assert all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
                   for a, b in zip(pairs, back))
    assert generate_instances(Hanoi4(9), 3, 5)[2][0].tolist() == \
        generate_instances(Hanoi4(9), 3, 5)[2][0].tolist()


def test_instance_parsing_formats_and_errors(tmp_path):
    dom = SlidingTile(3)
    s, g = parse_instance("1 0 2 3 4 5 6 7 8", dom)
    assert g.tolist() == list(range(9))
    s, g = parse_instance("1 0 2 3 4 5 6 7 8 0 1 2 3 4 5 6 7 8", dom)
    assert s.tolist()[:2] == [1, 0]
    s, g = parse_instance("0123", Hanoi4(4))
    assert g.tolist() == [3, 3, 3, 3]
    bad = tmp_path / "bad.txt"
    bad.write_text("# header\n1 2 3\n")
    with pytest.raises(InputError, match="bad.txt:2"):
        read_instances(bad, dom)
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert read_instances(empty, dom) == []


def test_random_tiles_keep_parity(stp4):
    rng = np.random.default_rng(3)
    goal = stp4.random_state(rng)
    for _ in range(50):
        assert stp4.solvable(stp4.random_state(rng, like=goal), goal)


def test_reflection_fixes_target_and_is_an_involution(stp4):
    goal = stp4.goal
    assert np.array_equal(stp4.reflect(goal[None], goal)[0], goal)
    rng = np.random.default_rng(9)
    states = np.array([rng.permutation(16) for _ in range(100)], dtype=np.uint8)
    twice = stp4.reflect(stp4.reflect(states, goal), goal)
    assert np.array_equal(twice, states)
    with pytest.raises(InputError):
        SlidingTile(2, 3).reflect(SlidingTile(2, 3).goal[None], SlidingTile(2, 3).goal)
