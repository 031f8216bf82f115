"""
Meeting in the middle on the 15-puzzle
======================================

Korf's instance 79 is one of the easiest of his hundred (42 moves).  We solve
it with the three external-memory searches and look at where each one spends
its expansions.

The forward search piles most of its work deep in the tree.  The
bidirectional searches split the work between the two ends and stop once the
two frontiers prove that no shorter path remains.
"""

import tempfile
from pathlib import Path

from pembihs import EngineConfig, ProblemInstance, SlidingTile, korf100, make_heuristic_pair, solve
from pembihs.algorithms import expansion_depth_histogram
from pembihs.types import Direction

dom = SlidingTile(4)
start, goal = korf100()[78]
problem = ProblemInstance(dom, start, goal, make_heuristic_pair(dom, "md", start, goal), 78)
print("instance 79:", dom.format(start))

run_dir = Path(tempfile.mkdtemp(prefix="pembihs-demo-"))
config = EngineConfig(run_dir=run_dir, keep_buckets=True)

outcomes = {}
for alg in ("pem-a-star", "pemm", "pem-bae-star"):
    outcomes[alg] = out = solve(alg, problem, config)
    frac = expansion_depth_histogram(out, out.cost)["fraction_before_midpoint"]
    print(f"{alg:<13} cost {out.cost}  expanded {out.expanded:>7,}  "
          f"before midpoint {frac:.2f}  peak disk {out.peak_disk_bytes / 1024:.0f} KiB")

#%% Expansions per g-layer
# F and B columns count expansions in each direction.
print("\n   g " + "".join(f"{a:>24}" for a in outcomes))
for g in range(0, 43, 3):
    cells = []
    for out in outcomes.values():
        f = out.depth_histogram[Direction.FORWARD].get(g, 0)
        b = out.depth_histogram[Direction.BACKWARD].get(g, 0)
        cells.append(f"F{f:>9,} B{b:>9,}")
    print(f"{g:>4} " + "".join(f"{c:>24}" for c in cells))

#%% The lower bound closes on the cost
trace = outcomes["pem-bae-star"].lb_trace
print("\nPEM-BAE* lower bound, every 10th bucket:", trace[::10], "... final", trace[-1])

#%% What the buckets look like on disk
# keep_buckets leaves one directory per run with a manifest of every file.
for run in sorted(run_dir.iterdir())[-1:]:
    lines = (run / "manifest.tsv").read_text().splitlines()
    print(f"\n{run.name}: {len(lines) - 1} bucket files, e.g.")
    for line in lines[:4]:
        print("   ", line)
