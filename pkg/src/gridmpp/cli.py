"""Command-line entry point: generate, solve, validate, decompose, bench.

Every command prints one JSON line on standard output.  Exit codes:
0 success, 2 invalid input, 3 internal invariant violation, 4 refusal.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .flow import Circulation, decompose_circulation, flow_sum
from .grid_core import (
    Instance,
    ModelViolation,
    Plan,
    dumps_canonical,
    embed_virtual_robots,
    instance_from_json,
    instance_to_json,
    load_json,
    plan_from_json,
    plan_to_json,
    save_json,
    validate_plan,
)
from .isag import isag_solve
from .oracle import FAMILIES, InstanceFamily, OracleRefusal, bfs_optimal_makespan, generate
from .paf import paf_solve, solve_dg1

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INTERNAL = 3
EXIT_REFUSED = 4

SOLVERS = ("isag", "paf", "dg1", "oracle")
CSV_COLUMNS = ("kind", "dims", "seed", "solver", "dg", "makespan", "ratio", "vertices", "micros")
THREADS_ENV = "GRIDMPP_THREADS"


class Refusal(Exception):
    pass


def _full_solver(name: str):
    if name == "isag":
        return isag_solve
    if name == "paf":
        return paf_solve
    if name == "dg1":
        return solve_dg1
    if name == "oracle":
        def oracle(instance: Instance) -> Plan:
            ms, plan = bfs_optimal_makespan(instance)
            if ms < 0:
                raise Refusal("goal unreachable from start")
            return plan
        return oracle
    raise ValueError(f"unknown solver {name!r}")


def check_plan(instance: Instance, plan: Plan):
    """Validate a wire plan.

    Wire plans are rotation cycles on the fully occupied grid.  For a
    partially occupied instance the cycles also carry virtual robots, so the
    moves of those are stripped and the real robots are replayed with empty
    vertices allowed.
    """
    if instance.is_full():
        return validate_plan(instance, plan)
    return validate_plan(instance, embed_virtual_robots(instance).strip(plan), strict=False)


def solve_instance(instance: Instance, solver: str) -> Plan:
    """Run a solver and return its wire plan, already validated.

    Partially occupied instances are solved with virtual robots on every
    empty vertex.
    """
    run = _full_solver(solver)
    try:
        plan = run(embed_virtual_robots(instance).instance)
    except OracleRefusal as exc:
        raise Refusal(str(exc)) from exc
    report = check_plan(instance, plan)
    if not report.ok:
        raise AssertionError(f"solver {solver} produced an invalid plan: {report.kind} {report.detail}")
    return plan


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise ValueError(f"bad dims {text!r}; expected e.g. 50x50") from exc
    if not dims or min(dims) < 1:
        raise ValueError(f"bad dims {text!r}")
    return dims


def _emit(obj) -> None:
    sys.stdout.write(dumps_canonical(obj) + "\n")


def _error(kind: str, detail: str, code: int) -> int:
    _emit({"error": kind, "detail": detail})
    return code


# ------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    fam = InstanceFamily(args.family, _parse_dims(args.dims), args.seed, args.dg)
    instance = generate(fam)
    save_json(args.output, instance_to_json(instance))
    _emit({"output": args.output, "vertices": instance.grid.vertex_count,
           "dg": instance.distance_gap})
    return EXIT_OK


def cmd_solve(args) -> int:
    instance = instance_from_json(load_json(args.instance))
    t0 = time.perf_counter()
    plan = solve_instance(instance, args.solver)
    micros = int((time.perf_counter() - t0) * 1e6)
    if args.output:
        save_json(args.output, plan_to_json(plan))
    dg = instance.distance_gap
    _emit({"solver": args.solver, "makespan": plan.makespan, "dg": dg,
           "ratio": plan.makespan / max(dg, 1), "micros": micros})
    return EXIT_OK


def cmd_validate(args) -> int:
    instance = instance_from_json(load_json(args.instance))
    plan = plan_from_json(load_json(args.plan))
    report = check_plan(instance, plan)
    _emit({"valid": report.ok, "makespan": plan.makespan, "kind": report.kind,
           "detail": report.detail})
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_decompose(args) -> int:
    circ = Circulation.from_json(load_json(args.circulation))
    if not circ.is_conserved():
        return _error("not-conserved", "in-flow differs from out-flow at some vertex", EXIT_INVALID)
    units = decompose_circulation(circ, args.f)
    back = flow_sum(units, circ.vertices)
    _emit({"units": [[list(c) for c in u.cycles] for u in units],
           "count": len(units), "flow_sum_equal": back.flow == circ.flow})
    return EXIT_OK


# ------------------------------------------------------------ bench

@dataclass(frozen=True)
class BenchRecord:
    kind: str
    dims: tuple[int, ...]
    seed: int
    solver: str
    dg: int
    makespan: int
    vertices: int
    micros: int
    error: str = ""

    @property
    def ratio(self) -> float:
        return self.makespan / max(self.dg, 1)

    def row(self) -> list:
        if self.error:
            return [self.kind, _dims_text(self.dims), self.seed, self.solver, self.dg,
                    "", "", self.vertices, f"error:{self.error}"]
        return [self.kind, _dims_text(self.dims), self.seed, self.solver, self.dg,
                self.makespan, f"{self.ratio:.4f}", self.vertices, self.micros]

    @classmethod
    def from_row(cls, row: dict) -> "BenchRecord":
        """Rebuild from a CSV row; the ratio is recomputed, never read."""
        err = row["micros"][6:] if row["micros"].startswith("error:") else ""
        return cls(row["kind"], _parse_dims(row["dims"]), int(row["seed"]), row["solver"],
                   int(row["dg"]), int(row["makespan"]) if not err else -1,
                   int(row["vertices"]), int(row["micros"]) if not err else -1, err)


def _dims_text(dims) -> str:
    return "x".join(str(m) for m in dims)


def expand_manifest(manifest: dict) -> list[tuple]:
    """Rows ``(kind, dims, seed, dg, solver)`` in deterministic order.

    A manifest is ``{"runs": [{"family", "sizes", "seeds", "dg", "solvers"}]}``;
    ``sizes`` entries are dims lists or strings like ``"50x50"``; ``seeds``
    is a count or a list; ``dg`` a number or a list.
    """
    rows = []
    for run in manifest.get("runs", []):
        kind = run["family"]
        if kind not in FAMILIES:
            raise ValueError(f"unknown family {kind!r}")
        sizes = [(_parse_dims(s) if isinstance(s, str) else tuple(int(x) for x in s))
                 for s in run["sizes"]]
        seeds = run.get("seeds", 1)
        seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
        dgs = run.get("dg", 1)
        dgs = [int(dgs)] if isinstance(dgs, (int, float)) else [int(d) for d in dgs]
        solvers = run.get("solvers", ["isag"])
        for s in solvers:
            if s not in SOLVERS:
                raise ValueError(f"unknown solver {s!r}")
        for dims in sizes:
            for dg in dgs:
                for seed in seeds:
                    for s in solvers:
                        rows.append((kind, dims, seed, dg, s))
    return rows


_warm: set[str] = set()


def _warm_up(solver: str) -> None:
    """Build lazily cached tables outside the timed region."""
    if solver in _warm or solver == "oracle":
        return
    _warm.add(solver)
    solve_instance(generate(InstanceFamily("random-permutation", (8, 8), 0)), solver)


def run_bench_row(spec: tuple) -> BenchRecord:
    kind, dims, seed, dg, solver = spec
    vertices = math.prod(dims)
    try:
        _warm_up(solver)
        instance = generate(InstanceFamily(kind, dims, seed, dg))
        t0 = time.perf_counter()
        plan = solve_instance(instance, solver)
        micros = int((time.perf_counter() - t0) * 1e6)
        return BenchRecord(kind, dims, seed, solver, instance.distance_gap, plan.makespan,
                           vertices, micros)
    except Exception as exc:  # recorded per row, the bench keeps going
        return BenchRecord(kind, dims, seed, solver, dg, -1, vertices, -1,
                           type(exc).__name__)


def scaling_slopes(records) -> dict[str, float]:
    """Log-log slope of wall time against |V| per solver (needs two sizes)."""
    out = {}
    by_solver: dict[str, list] = {}
    for r in records:
        if not r.error and r.micros > 0:
            by_solver.setdefault(r.solver, []).append((r.vertices, r.micros))
    for solver, pts in sorted(by_solver.items()):
        x = np.log([p[0] for p in pts])
        if len(set(x.tolist())) < 2:
            continue
        y = np.log([p[1] for p in pts])
        out[solver] = float(np.polyfit(x, y, 1)[0])
    return out


def bench_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    for solver, slope in scaling_slopes(records).items():
        buf.write(f"# slope {solver} {slope:.4f}\n")
    return buf.getvalue()


def cmd_bench(args) -> int:
    rows = expand_manifest(load_json(args.manifest))
    threads = args.threads or int(os.environ.get(THREADS_ENV, "1") or 1)
    if threads > 1 and len(rows) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_bench_row, rows))
    else:
        records = [run_bench_row(r) for r in rows]
    text = bench_csv(records)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridmpp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a generated instance")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--dims", required=True, help="e.g. 50x50 or 6x6x6")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dg", type=int, default=1)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve an instance and write the plan")
    s.add_argument("instance")
    s.add_argument("--solver", choices=SOLVERS, default="isag")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="check a plan against an instance")
    v.add_argument("instance")
    v.add_argument("plan")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("decompose", help="split a circulation into unit circulations")
    d.add_argument("circulation")
    d.add_argument("--f", type=int, default=None)
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("bench", help="run a manifest and print CSV")
    b.add_argument("manifest")
    b.add_argument("-o", "--output")
    b.add_argument("--threads", type=int, default=0,
                   help=f"worker processes (default: ${THREADS_ENV} or 1)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Refusal as exc:
        return _error("refused", str(exc), EXIT_REFUSED)
    except (OSError, json.JSONDecodeError, ModelViolation, ValueError) as exc:
        return _error("invalid-input", f"{type(exc).__name__}: {exc}", EXIT_INVALID)
    except AssertionError as exc:
        return _error("internal", str(exc) or type(exc).__name__, EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
