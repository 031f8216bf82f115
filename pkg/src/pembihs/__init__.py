"""Parallel external-memory bidirectional heuristic search.

Quick start::

    from pembihs import SlidingTile, ProblemInstance, make_heuristic_pair, solve
    dom = SlidingTile(3, 3)
    start, goal = dom.parse("8 6 7 2 5 4 3 0 1".split()), dom.goal
    problem = ProblemInstance(dom, start, goal, make_heuristic_pair(dom, "md", start, goal))
    print(solve("pem-bae-star", problem).cost)
"""
from .algorithms import AlgorithmId, make_policy, oracle_distances, solve
from .domains import Hanoi4, ProblemInstance, SlidingTile, domain_from_name, korf100
from .errors import (CapacityError, CorruptionError, InputError, PembihsError, SearchTimeout,
                     StorageError, UnsupportedError)
from .framework import EngineConfig, SearchOutcome, SearchPolicy, run_search
from .heuristics import make_heuristic, make_heuristic_pair
from .types import INFINITY, Direction

__version__ = "0.1.0"

__all__ = [
    "AlgorithmId", "make_policy", "oracle_distances", "solve",
    "Hanoi4", "ProblemInstance", "SlidingTile", "domain_from_name", "korf100",
    "CapacityError", "CorruptionError", "InputError", "PembihsError", "SearchTimeout",
    "StorageError", "UnsupportedError",
    "EngineConfig", "SearchOutcome", "SearchPolicy", "run_search",
    "make_heuristic", "make_heuristic_pair", "INFINITY", "Direction",
]
