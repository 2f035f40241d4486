import csv
import io
import json

import pytest

from gridmpp.cli import (
    CSV_COLUMNS,
    BenchRecord,
    expand_manifest,
    main,
    scaling_slopes,
)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, out


def last_json(lines):
    return json.loads(lines[-1])


@pytest.fixture
def ring(tmp_path, capsys):
    path = tmp_path / "ring.json"
    code, _ = run(capsys, "generate", "--family", "ring-rotation", "--dims", "10x10", "-o", path)
    assert code == 0
    return path


def test_generate_writes_instance(ring):
    data = json.loads(ring.read_text())
    assert data["dims"] == [10, 10]
    assert len(data["start"]) == len(data["goal"]) == 100


@pytest.mark.parametrize("solver,bound", [("paf", 1), ("dg1", 1), ("isag", None)])
def test_solve_then_validate(ring, tmp_path, capsys, solver, bound):
    plan = tmp_path / f"{solver}.json"
    code, out = run(capsys, "solve", ring, "--solver", solver, "-o", plan)
    assert code == 0
    rec = last_json(out)
    assert rec["solver"] == solver and rec["dg"] == 1
    if bound is not None:
        assert rec["makespan"] == bound
    code, out = run(capsys, "validate", ring, plan)
    assert code == 0 and last_json(out)["valid"] is True


def test_oracle_refuses_large_grid(ring, capsys):
    code, out = run(capsys, "solve", ring, "--solver", "oracle")
    assert code == 4
    assert last_json(out)["error"] == "refused"


def test_oracle_on_small_transposition(tmp_path, capsys):
    inst = tmp_path / "t.json"
    inst.write_text(json.dumps({"dims": [2, 3], "start": [0, 1, 2, 3, 4, 5],
                                "goal": [0, 2, 1, 3, 4, 5]}))
    code, out = run(capsys, "solve", inst, "--solver", "oracle")
    assert code == 0 and last_json(out)["makespan"] == 3


def test_partial_instance_round_trip(tmp_path, capsys):
    inst = tmp_path / "p.json"
    inst.write_text(json.dumps({"dims": [4, 4], "start": [0, 5, 15], "goal": [15, 0, 6]}))
    plan = tmp_path / "plan.json"
    for solver in ("isag", "paf"):
        assert run(capsys, "solve", inst, "--solver", solver, "-o", plan)[0] == 0
        code, out = run(capsys, "validate", inst, plan)
        assert code == 0, out


def test_validate_rejects_wrong_plan(ring, tmp_path, capsys):
    plan = tmp_path / "empty.json"
    plan.write_text(json.dumps({"steps": []}))
    code, out = run(capsys, "validate", ring, plan)
    rec = last_json(out)
    assert code == 2 and rec["valid"] is False and rec["kind"]


def test_validate_rejects_two_swap(tmp_path, capsys):
    inst = tmp_path / "i.json"
    inst.write_text(json.dumps({"dims": [2, 2], "start": [0, 1, 2, 3], "goal": [1, 0, 2, 3]}))
    plan = tmp_path / "swap.json"
    plan.write_text(json.dumps({"steps": [[[0, 1]]]}))
    code, out = run(capsys, "validate", inst, plan)
    assert code == 2


def test_missing_file_is_invalid_input(tmp_path, capsys):
    code, out = run(capsys, "solve", tmp_path / "nope.json")
    assert code == 2 and last_json(out)["error"] == "invalid-input"


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "solve", bad)[0] == 2


def test_bad_dims(tmp_path, capsys):
    code, _ = run(capsys, "generate", "--family", "corner-swap", "--dims", "4by4",
                  "-o", tmp_path / "x.json")
    assert code == 2


def test_decompose(tmp_path, capsys):
    circ = tmp_path / "c.json"
    circ.write_text(json.dumps({"vertices": 5, "edges": [[0, 1, 2], [1, 4, 1], [1, 2, 1],
                                                          [2, 3, 1], [3, 4, 1], [4, 0, 2]]}))
    code, out = run(capsys, "decompose", circ)
    rec = last_json(out)
    assert code == 0 and rec["count"] == 2 and rec["flow_sum_equal"] is True


def test_decompose_rejects_non_conserving(tmp_path, capsys):
    circ = tmp_path / "c.json"
    circ.write_text(json.dumps({"vertices": 3, "edges": [[0, 1, 1]]}))
    code, out = run(capsys, "decompose", circ)
    assert code == 2 and last_json(out)["error"] == "not-conserved"


MANIFEST = {"runs": [{"family": "bounded-dg", "sizes": ["12x12", "16x16"], "seeds": 2,
                      "dg": 2, "solvers": ["isag", "paf"]}]}


def read_rows(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_manifest_expansion_order():
    rows = expand_manifest(MANIFEST)
    assert len(rows) == 8
    assert [r[1] for r in rows[:4]] == [(12, 12)] * 4


def test_bench_csv_and_determinism(tmp_path, capsys):
    man = tmp_path / "m.json"
    man.write_text(json.dumps(MANIFEST))
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"b{threads}.csv"
        assert run(capsys, "bench", man, "-o", out, "--threads", threads)[0] == 0
        outs.append(out.read_text())
    rows = [read_rows(t) for t in outs]
    assert list(rows[0][0].keys()) == list(CSV_COLUMNS)
    strip = lambda rs: [{k: v for k, v in r.items() if k != "micros"} for r in rs]
    assert strip(rows[0]) == strip(rows[1])
    assert all(int(r["makespan"]) >= 0 for r in rows[0])
    assert any(ln.startswith("# slope isag") for ln in outs[0].splitlines())


def test_bench_records_errors_per_row(tmp_path, capsys):
    man = tmp_path / "m.json"
    man.write_text(json.dumps({"runs": [{"family": "random-permutation", "sizes": ["4x4"],
                                        "seeds": 1, "solvers": ["oracle", "isag"]}]}))
    code, out = run(capsys, "bench", man)
    assert code == 0
    rows = read_rows("\n".join(out))
    assert rows[0]["micros"].startswith("error:") and rows[0]["makespan"] == ""
    assert rows[1]["makespan"] != ""


def test_empty_manifest_gives_header_only(tmp_path, capsys):
    man = tmp_path / "m.json"
    man.write_text(json.dumps({"runs": []}))
    code, out = run(capsys, "bench", man)
    assert code == 0 and out == [",".join(CSV_COLUMNS)]


def test_record_round_trip_and_slopes():
    recs = [BenchRecord("random-permutation", (m, m), 0, "isag", 5, 10, m * m, m ** 3)
            for m in (8, 16, 32)]
    row = {k: str(v) for k, v in zip(CSV_COLUMNS, recs[0].row())}
    assert BenchRecord.from_row(row) == recs[0]
    assert scaling_slopes(recs)["isag"] == pytest.approx(1.5)
