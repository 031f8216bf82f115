"""``pembihs`` command line: run, report, pdb build, gen."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .algorithms import AlgorithmId
from .bench import RunSpec, parse_bytes, read_results, report, run_benchmark
from .domains import SlidingTile, domain_from_name, generate_instances, write_instances
from .errors import PembihsError
from .heuristics import (default_cache_dir, get_pdb, hanoi_pattern_specs, pdb_entry_count,
                         tile_pattern_specs)


def _algorithms(text: str) -> list[AlgorithmId]:
    return [AlgorithmId.parse(a) for a in text.split(",") if a.strip()]


def _indices(text: str | None):
    if not text:
        return None
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def cmd_run(args) -> int:
    run_dir = args.run_dir or os.environ.get("PEMBIHS_RUN_DIR")
    spec = RunSpec(algorithms=_algorithms(args.algorithm), domain=args.domain,
                   instances=args.instances, heuristic=args.heuristic, workers=args.workers,
                   memory_budget=parse_bytes(args.memory), run_dir=run_dir, out=args.out,
                   max_seconds=args.max_seconds, keep_buckets=args.keep_buckets,
                   only=_indices(args.only), histogram=not args.no_histogram)
    rows = run_benchmark(spec)
    if not args.out:
        print("\t".join(["Instance", "Algorithm", "Expanded", "Generated", "Elapsed", "Solution"]))
        for r in rows:
            print("\t".join(r.to_fields()[:6]))
    failed = sum(not r.ok for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} runs did not finish; see the Status column",
              file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    print(report(read_results(args.input), args.mode))
    return 0


def cmd_pdb_build(args) -> int:
    """Build the PDBs for a canonical target into the cache."""
    domain = domain_from_name(args.domain)
    name = args.spec.removeprefix("pdb:")
    name = name[:-1] if name.endswith("r") and isinstance(domain, SlidingTile) else name
    target = domain.goal
    if isinstance(domain, SlidingTile):
        specs = tile_pattern_specs(domain, name, target)
    else:
        specs = hanoi_pattern_specs(domain, name, target)
    cache = args.cache_dir or default_cache_dir()
    for spec in specs:
        pdb = get_pdb(spec, domain, cache_dir=cache, budget=parse_bytes(args.budget))
        print(f"{domain.name} pattern {list(spec.members)}: {pdb_entry_count(spec, domain)} "
              f"entries, max {int(pdb.entries[pdb.entries != 255].max())}")
    print(f"cache: {cache}")
    return 0


def cmd_gen(args) -> int:
    domain = domain_from_name(args.domain)
    pairs = generate_instances(domain, args.count, args.seed)
    if args.out:
        write_instances(args.out, domain, pairs)
    else:
        for s, g in pairs:
            print(f"{domain.format(s)} {domain.format(g)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pembihs",
                                description="External-memory parallel bidirectional search")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve a batch of instances")
    r.add_argument("--algorithm", required=True,
                   help="comma-separated ids: " + ", ".join(a.value for a in AlgorithmId))
    r.add_argument("--domain", required=True, help="stp3, stp4, stp5 or toh4:<disks>")
    r.add_argument("--heuristic", default="md", help="md, zero, pdb or pdb:<name>")
    r.add_argument("--instances", default="korf100",
                   help="instance file (default: the built-in Korf 100 set)")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--memory", default="1G", help="memory budget, e.g. 512M or 2G")
    r.add_argument("--run-dir", default=None, help="bucket directory (default $PEMBIHS_RUN_DIR)")
    r.add_argument("--out", default=None, help="TSV file to append rows to")
    r.add_argument("--max-seconds", type=float, default=None, help="per-run time limit")
    r.add_argument("--keep-buckets", action="store_true")
    r.add_argument("--only", default=None, help="instance indices, e.g. 0,4,10-12")
    r.add_argument("--no-histogram", action="store_true", help="omit per-depth counts")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a result file")
    rep.add_argument("--mode", required=True, help="means, hard:<k>, nps or depthdist")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=cmd_report)

    pdb = sub.add_parser("pdb", help="pattern database utilities")
    pdb_sub = pdb.add_subparsers(dest="pdb_command", required=True)
    b = pdb_sub.add_parser("build", help="build and cache a PDB for the canonical goal")
    b.add_argument("--spec", required=True, help="pattern name, e.g. 3-4-4-4 or 10+2")
    b.add_argument("--domain", default="stp4")
    b.add_argument("--budget", default="1G")
    b.add_argument("--cache-dir", default=None)
    b.set_defaults(func=cmd_pdb_build)

    g = sub.add_parser("gen", help="generate seeded random instances")
    g.add_argument("--domain", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PembihsError, ValueError, OSError) as exc:
        print(f"pembihs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
