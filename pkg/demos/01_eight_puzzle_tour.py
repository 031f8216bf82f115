"""
A tour of the 8-puzzle
======================

Every algorithm in the package solves the same 3x3 instance and we compare
the work each one does.  The 3x3 space is small enough (181,440 states per
parity class) that an exhaustive breadth-first sweep gives the exact answer,
so each cost can be checked against ground truth.

Run with ``python demos/01_eight_puzzle_tour.py``.
"""

import numpy as np

from pembihs import AlgorithmId, ProblemInstance, SlidingTile, make_heuristic_pair, solve
from pembihs.algorithms import oracle_distances

dom = SlidingTile(3)
start = dom.parse("8 6 7 2 5 4 3 0 1".split())
goal = dom.goal
print("start:", dom.format(start))
print("goal: ", dom.format(goal))

# Ground truth first.  The oracle table is indexed by a dense state rank.
dist = oracle_distances(dom, goal)
reached = dist[dist != 255]
print(f"\n{reached.size:,} states reach the goal, deepest at {reached.max()} moves")
print("optimal cost for our start:", dist[dom.dense_index(start[None])[0]])

# Manhattan distance toward each end.  Bidirectional searches need both.
problem = ProblemInstance(dom, start, goal, make_heuristic_pair(dom, "md", start, goal))
hf, hb = problem.heuristics
print("\nh_F(start) =", hf(start), "  h_B(goal) =", hb(goal))

#%% Solve with everything
print(f"\n{'algorithm':<14}{'cost':>6}{'expanded':>12}{'generated':>12}")
for alg in AlgorithmId:
    out = solve(alg, problem)
    print(f"{alg.value:<14}{out.cost:>6}{out.expanded:>12,}{out.generated:>12,}")

# The depth-first searches re-expand states on every iteration, which is why
# their counts dwarf the best-first ones even on a puzzle this small.

#%% A perfect heuristic
# A single pattern holding every tile is the exact distance table, and A*
# then walks straight down an optimal path.
perfect = make_heuristic_pair(dom, "pdb:full", start, goal)
out = solve("a-star", ProblemInstance(dom, start, goal, perfect))
print(f"\nA* with the full-pattern database: cost {out.cost}, {out.expanded} expansions")

#%% Heuristic quality across the whole space
states = dom.from_dense_index(np.flatnonzero(dist != 255))
md = make_heuristic_pair(dom, "md", goal, goal)[0].evaluate(states)
pdb = make_heuristic_pair(dom, "pdb:4-4", goal, goal)[0].evaluate(states)
true = dist[dist != 255]
print(f"\nmean true distance {true.mean():.2f}, MD {md.mean():.2f}, 4-4 PDB {pdb.mean():.2f}")
print("PDB never overestimates:", bool((pdb <= true).all()))
