"""
Four-peg Towers of Hanoi with pattern databases
===============================================

The 4-peg puzzle has no proven closed form for arbitrary start and goal
positions, but small instances can be solved exhaustively, so we check the
searches against breadth-first ground truth.  The heuristic is an additive
pair of pattern databases: one for the smallest disks and one for the rest.
"""

import time

from pembihs import Hanoi4, ProblemInstance, make_heuristic_pair, solve
from pembihs.domains import generate_instances

#%% Frame-Stewart moves for the classic puzzle
# All disks on peg 0 moved to peg 3.
for n in (4, 6, 8, 10):
    dom = Hanoi4(n)
    p = ProblemInstance(dom, dom.parse(["0"] * n), dom.parse(["3"] * n))
    print(f"{n:>2} disks: {solve('bfs-oracle', p).cost} moves")

#%% Random pairs at 11 disks
dom = Hanoi4(11)
print(f"\n{'pair':>4}{'C*':>5}{'PEM-A*':>10}{'PEMM':>10}{'PEM-BAE*':>10}   seconds")
totals = {"pem-a-star": 0, "pemm": 0, "pem-bae-star": 0}
for i, (s, g) in enumerate(generate_instances(dom, 4, seed=1)):
    pair = make_heuristic_pair(dom, "pdb:4+7", s, g)
    problem = ProblemInstance(dom, s, g, pair, i)
    truth = solve("bfs-oracle", problem).cost
    t0 = time.perf_counter()
    row = []
    for alg in totals:
        out = solve(alg, problem)
        assert out.cost == truth
        totals[alg] += out.expanded
        row.append(out.expanded)
    print(f"{i:>4}{truth:>5}" + "".join(f"{n:>10,}" for n in row)
          + f"{time.perf_counter() - t0:>10.1f}")

print("\nPEM-A* / PEM-BAE* expansion ratio:",
      round(totals["pem-a-star"] / totals["pem-bae-star"], 2))

# Hanoi graphs have many transpositions, so duplicate detection matters far
# more than on tiles.  IDA* has none and stalls here even at 8 disks unless it
# is handed the exact database.
