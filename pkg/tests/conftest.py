import itertools
import math
import sys

import numpy as np
import pytest

from pembihs.domains import Hanoi4, SlidingTile


@pytest.fixture(autouse=True)
def _isolated_run_dir(tmp_path, monkeypatch):
    # bucket files and PDB caches of one test never leak into another
    monkeypatch.setenv("PEMBIHS_RUN_DIR", str(tmp_path / "runs"))


@pytest.fixture(scope="session")
def stp3():
    return SlidingTile(3)


@pytest.fixture(scope="session")
def stp4():
    return SlidingTile(4)


@pytest.fixture(scope="session")
def all_stp3_states():
    return np.array(list(itertools.permutations(range(9))), dtype=np.uint8)


def brute_lehmer(perm) -> int:
    """Textbook Lehmer rank, used as an independent oracle."""
    perm = list(perm)
    n, rank = len(perm), 0
    for i, v in enumerate(perm):
        smaller = sum(1 for w in perm[i + 1:] if w < v)
        rank += smaller * math.factorial(n - 1 - i)
    return rank


def hanoi_distances_by_recursion(n: int):
    """Frame-Stewart numbers for start-to-goal moves of n disks on 4 pegs."""
    fs = [0]
    for k in range(1, n + 1):
        fs.append(min(2 * fs[i] + (2 ** (k - i) - 1) for i in range(k)))
    return fs


def pytest_terminal_summary(terminalreporter):
    # acceptance verdicts, one line per criterion, in criterion order
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
