"""Batch front door: analyze, plan, simulate, verify, print.

Exit codes: 0 success / verification passed, 1 parse error, 2 validation
error, 3 analysis error, 4 verification failure or simulation fault.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .commgen import dump_plan, parse_plan
from .errors import (
    AnalysisError,
    BufferStateViolation,
    DeadlockDetected,
    GeometryMismatch,
    ParseError,
    PolydistError,
    ValidationError,
)
from .fields import dump_contents, first_divergence, load_contents, random_contents
from .pipeline import analyze_scop, cap_iterations, override_grid, plan_scop
from .scop import sequential_execute
from .scopio import parse_scop_file, print_scop
from .simrt import init_runtime, run

EXIT_PARSE = 1
EXIT_VALIDATION = 2
EXIT_ANALYSIS = 3
EXIT_VERIFY = 4

DUMPS = ("deps", "place", "chunk", "plan", "trace")


def _parse_grid(text: str):
    try:
        return tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"bad grid spec {text!r}, expected e.g. 2x2")


def _load(args):
    scop = parse_scop_file(args.input)
    if args.grid:
        scop = override_grid(scop, _parse_grid(args.grid))
        scop.validate()
    if args.iters is not None:
        if args.iters < 0:
            raise ValidationError("--iters must be >= 0")
        scop = cap_iterations(scop, args.iters)
    return scop


def _emit(args, filename: str, text: str):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text)
    else:
        sys.stdout.write(f"# {filename}\n")
        sys.stdout.write(text)


def _wanted(args, kind: str) -> bool:
    if not args.dump:
        return kind in ("deps", "place", "chunk", "plan")
    return kind in args.dump.split(",")


def cmd_analyze(args) -> int:
    scop = _load(args)
    analysis = analyze_scop(scop)
    if _wanted(args, "deps"):
        _emit(args, "deps.txt", analysis.dump_deps())
    if _wanted(args, "place"):
        _emit(args, "placements.txt", analysis.dump_placements())
    if _wanted(args, "chunk"):
        _emit(args, "chunks.txt", analysis.dump_chunks())
    return 0


def cmd_plan(args) -> int:
    scop = _load(args)
    _, plan = plan_scop(scop)
    _emit(args, "plan.txt", dump_plan(plan))
    return 0


def _build_or_load_plan(args, scop):
    if args.plan:
        text = Path(args.plan).read_text()
        analysis = analyze_scop(scop)
        return analysis, parse_plan(text)
    return plan_scop(scop)


def _initial_contents(args, scop):
    if args.init:
        return load_contents(scop, Path(args.init).read_text())
    return random_contents(scop, args.seed)


def cmd_simulate(args) -> int:
    scop = _load(args)
    analysis, plan = _build_or_load_plan(args, scop)
    init = _initial_contents(args, scop)
    sim = init_runtime(plan, analysis.scop.grid, init)
    final, trace = run(sim, analysis.scop)
    if _wanted(args, "plan"):
        _emit(args, "plan.txt", dump_plan(plan))
    if _wanted(args, "trace"):
        _emit(args, "trace.txt", trace.to_text())
    _emit(args, "fields.txt", dump_contents(scop, final))
    return 0


def cmd_verify(args) -> int:
    scop = _load(args)
    analysis, plan = _build_or_load_plan(args, scop)
    init = _initial_contents(args, scop)
    expected = sequential_execute(scop, init)
    try:
        sim = init_runtime(plan, analysis.scop.grid, init)
        final, trace = run(sim, analysis.scop)
    except (DeadlockDetected, BufferStateViolation) as e:
        print(f"verify: FAIL ({type(e).__name__}: {e})")
        return EXIT_VERIFY
    if _wanted(args, "trace"):
        _emit(args, "trace.txt", trace.to_text())
    div = first_divergence(expected, final)
    if div is None:
        print(f"verify: PASS (grid={'x'.join(map(str, analysis.scop.grid.extents))}, seed={args.seed})")
        return 0
    name, idx, want, got = div
    print(f"verify: FAIL first divergence field={name} index={idx} expected={want} got={got}")
    return EXIT_VERIFY


def cmd_print(args) -> int:
    scop = _load(args)
    sys.stdout.write(print_scop(scop))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polydist",
        description="Polyhedral communication planner and SPMD simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("analyze", cmd_analyze),
        ("plan", cmd_plan),
        ("simulate", cmd_simulate),
        ("verify", cmd_verify),
        ("print", cmd_print),
    ):
        p = sub.add_parser(name)
        p.add_argument("input", help="scop document (JSON)")
        p.add_argument("--grid", help="node grid override, e.g. 2x2")
        p.add_argument("--iters", type=int, help="cap on the leading loop dimension")
        p.add_argument("--seed", type=int, default=0, help="PRNG seed for initial contents")
        p.add_argument("--out", help="output directory (default: stdout)")
        p.add_argument("--dump", help=f"comma list of {','.join(DUMPS)}")
        p.add_argument("--init", help="initial field contents file")
        p.add_argument("--plan", help="run a previously dumped plan file")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, GeometryMismatch) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AnalysisError, PolydistError) as e:
        print(f"analysis error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
