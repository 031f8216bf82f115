import csv

import pytest

from pembihs import cli
from pembihs.bench import (COLUMNS, ResultRow, RunSpec, depth_fractions, hard_subset, means,
                           nps, parse_bytes, read_results, report, run_benchmark)
from pembihs.domains import Hanoi4, SlidingTile, generate_instances, korf100, write_instances
from pembihs.errors import InputError


def test_columns_start_with_the_result_table_schema():
    assert COLUMNS[:6] == ["Instance", "Algorithm", "Expanded", "Generated", "Elapsed", "Solution"]


def test_report_means_example():
    rows = [ResultRow(0, "a", expanded=100, elapsed=2.0, solution=5),
            ResultRow(1, "a", expanded=300, elapsed=4.0, solution=6)]
    assert means(rows)["a"] == (3.0, 200.0, 2)
    text = report(rows, "means")
    assert "3.000" in text and "200.0" in text


def test_hard_subset_example():
    rows = [ResultRow(0, "a", solution=80), ResultRow(1, "a", solution=113)]
    assert hard_subset(rows, 1) == [1]
    assert report(rows, "hard:1").splitlines()[0] == "hard instances: 1"


def test_nps_and_failed_rows():
    rows = [ResultRow(0, "a", expanded=100, elapsed=2.0, solution=3, domain="stp3"),
            ResultRow(1, "a", expanded=900, elapsed=3.0, solution=3, domain="stp3"),
            ResultRow(2, "a", status="timeout", domain="stp3")]
    assert nps(rows)[("a", "stp3")] == pytest.approx((50 + 300) / 2)
    assert "NodesPerSecond" in report(rows, "nps")


def test_report_errors():
    with pytest.raises(InputError):
        report([], "means")
    with pytest.raises(InputError, match="unknown"):
        report([ResultRow(0, "a", solution=1)], "median")
    with pytest.raises(InputError, match="hard"):
        report([ResultRow(0, "a", solution=1)], "hard:x")
    with pytest.raises(InputError, match="without --no-histogram"):
        depth_fractions([ResultRow(0, "a", solution=4, expanded=3)])


def test_row_roundtrip():
    row = ResultRow(3, "pemm", 10, 40, 1.5, 7, "stp3", "ok", 99, {"F0": 1, "B2": 3})
    back = ResultRow.from_fields(dict(zip(COLUMNS, row.to_fields())))
    assert back == ResultRow(3, "pemm", 10, 40, 1.5, 7, "stp3", "ok", 99, {"F0": 1, "B2": 3})
    assert back.histogram() == {0: 1, 2: 3}


def test_parse_bytes():
    assert parse_bytes("512M") == 512 << 20
    assert parse_bytes("2G") == 2 << 30
    assert parse_bytes("4096") == 4096
    with pytest.raises(InputError):
        parse_bytes("-5")


def test_korf_instance_79_all_algorithms_agree(tmp_path):
    out = tmp_path / "r.tsv"
    spec = RunSpec(["pem-a-star", "pem-bae-star", "pemm", "a-star", "bae-star"], "stp4",
                   "korf100", "md", only=[78], out=out)
    rows = run_benchmark(spec)
    assert len(rows) == 5
    assert {r.solution for r in rows} == {42}
    back = read_results(out)
    assert [r.algorithm for r in back] == [r.algorithm for r in rows]
    assert all(r.depths for r in back)


def test_empty_instance_file(tmp_path):
    empty = tmp_path / "none.txt"
    empty.write_text("# nothing here\n")
    assert run_benchmark(RunSpec("pem-a-star", "stp3", empty)) == []


def test_missing_instance_file():
    with pytest.raises(InputError, match="does not exist"):
        run_benchmark(RunSpec("pem-a-star", "stp3", "/nonexistent/file.txt"))


def test_failures_become_rows_and_do_not_stop_the_batch(tmp_path):
    dom = SlidingTile(4)
    path = tmp_path / "i.txt"
    easy = (dom.parse("1 0 2 3 4 5 6 7 8 9 10 11 12 13 14 15".split()), dom.goal)
    write_instances(path, dom, [korf100()[0], easy])
    out = tmp_path / "r.tsv"
    rows = run_benchmark(RunSpec("pem-a-star", "stp4", path, "md", max_seconds=0.3, out=out))
    assert rows[0].status == "timeout"
    assert rows[1].ok and rows[1].solution == 1
    with open(out) as fh:
        recs = list(csv.DictReader(fh, delimiter="\t"))
    assert [r["Status"] for r in recs] == ["timeout", "ok"]
    assert recs[0]["Solution"] == "-"


def test_repeat_runs_are_reproducible(tmp_path):
    dom = Hanoi4(7)
    path = tmp_path / "h.txt"
    write_instances(path, dom, generate_instances(dom, 2, seed=3))
    spec = RunSpec(["pem-bae-star", "pemm"], "toh4:7", path, "pdb:3+4")
    a, b = run_benchmark(spec), run_benchmark(spec)
    key = lambda rs: [(r.instance, r.algorithm, r.expanded, r.generated, r.solution) for r in rs]
    assert key(a) == key(b)


def test_cli_end_to_end(tmp_path, capsys):
    inst = tmp_path / "toh.txt"
    assert cli.main(["gen", "--domain", "toh4:6", "--count", "2", "--seed", "4",
                     "--out", str(inst)]) == 0
    assert len(inst.read_text().splitlines()) == 2
    out = tmp_path / "res.tsv"
    assert cli.main(["run", "--algorithm", "pem-bae-star,a-star", "--domain", "toh4:6",
                     "--heuristic", "pdb:2+4", "--instances", str(inst), "--out", str(out),
                     "--run-dir", str(tmp_path / "buckets")]) == 0
    assert len(read_results(out)) == 4
    capsys.readouterr()
    for mode in ("means", "hard:1", "nps", "depthdist"):
        assert cli.main(["report", "--mode", mode, "--in", str(out)]) == 0
    text = capsys.readouterr().out
    assert "pem-bae-star" in text and "FractionBeforeMidpoint" in text
    # buckets are removed after each successful instance
    assert not any((tmp_path / "buckets").rglob("*.bkt"))


def test_cli_pdb_build(tmp_path, capsys):
    assert cli.main(["pdb", "build", "--spec", "2+3", "--domain", "toh4:5",
                     "--cache-dir", str(tmp_path)]) == 0
    assert list(tmp_path.glob("*.pdb"))
    assert "entries" in capsys.readouterr().out


def test_cli_errors(capsys, tmp_path):
    assert cli.main(["run", "--algorithm", "nope", "--domain", "stp3"]) == 2
    assert "unknown algorithm" in capsys.readouterr().err
    assert cli.main(["run", "--algorithm", "a-star", "--domain", "stp3",
                     "--instances", "korf100"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_prints_rows_without_out(tmp_path, capsys):
    inst = tmp_path / "t.txt"
    write_instances(inst, SlidingTile(3), generate_instances(SlidingTile(3), 1, seed=1))
    cli.main(["run", "--algorithm", "pem-a-star", "--domain", "stp3", "--instances", str(inst)])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t") == COLUMNS[:6]
    assert len(lines) == 2
