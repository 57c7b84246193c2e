"""Command-line entry points: solve, tlbsim, chase and bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from typing import List, Optional

from .hugepage_alloc import get_allocator


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# solve


def _v_lines(model: List[int], width: int = 78) -> List[str]:
    lines, cur = [], "v"
    for tok in [str(x) for x in model] + ["0"]:
        if len(cur) + 1 + len(tok) > width:
            lines.append(cur)
            cur = "v"
        cur += " " + tok
    lines.append(cur)
    return lines


def solve_main(argv: Optional[List[str]] = None) -> int:
    from .cnf import DimacsError, model_satisfies, parse_dimacs
    from .solver import Solver

    ap = argparse.ArgumentParser(prog="solve", description="CDCL SAT solver over DIMACS CNF.")
    ap.add_argument("cnf", help="DIMACS CNF file ('-' for stdin)")
    ap.add_argument("--timeout", type=float, help="give up after this many seconds (exit 0)")
    ap.add_argument("--conflicts", type=int, help="give up after this many conflicts (exit 0)")
    ap.add_argument("--stats-json", metavar="PATH", help="write solver and allocator statistics")
    ap.add_argument("--no-blockers", action="store_true", help="disable blocking literals")
    ap.add_argument("--phase-saving", action="store_true",
                    help="reuse the last polarity of a variable instead of always branching negative")
    ap.add_argument("--debug", action="store_true", help="check watch invariants after each propagation")
    args = ap.parse_args(argv)

    try:
        if args.cnf == "-":
            data = sys.stdin.buffer.read()
        else:
            with open(args.cnf, "rb") as fh:
                data = fh.read()
        formula = parse_dimacs(data)
    except (OSError, DimacsError) as exc:
        print(f"c error: {exc}", file=sys.stderr)
        return 1

    solver = Solver(formula, use_blockers=not args.no_blockers, debug=args.debug,
                    phase_saving=args.phase_saving)
    result = solver.solve(timeout=args.timeout, conflict_limit=args.conflicts)
    if result.status == "SAT" and not model_satisfies(formula.dimacs_clauses(), result.model):
        print("c error: model check failed", file=sys.stderr)
        return 1
    status = {"SAT": "SATISFIABLE", "UNSAT": "UNSATISFIABLE"}.get(result.status, "UNKNOWN")
    print(f"s {status}")
    if result.status == "SAT":
        print("\n".join(_v_lines(result.model)))
    if args.stats_json:
        snap = get_allocator().snapshot()
        doc = {"status": result.status, "reason": result.reason,
               "variables": formula.num_vars, "clauses": len(formula)}
        doc.update(result.stats.to_dict())
        doc.update({f"alloc_{k}": v for k, v in asdict(snap).items()})
        doc["alloc_enabled"] = get_allocator().config.enabled
        _write_json(args.stats_json, doc)
    sys.stdout.flush()
    return result.exit_code


# --------------------------------------------------------------------------
# tlbsim / chase


def tlbsim_main(argv: Optional[List[str]] = None) -> int:
    from .tlb import TlbModel, read_trace, simulate

    ap = argparse.ArgumentParser(prog="tlbsim", description="Replay an address trace through an LRU TLB.")
    ap.add_argument("--page-size", type=int, required=True, help="page size in bytes (power of two)")
    ap.add_argument("--entries", type=int, help="TLB entries (omit for unbounded)")
    ap.add_argument("trace", help="trace file: one decimal address per line, '#' comments ('-' for stdin)")
    ap.add_argument("--json", action="store_true", help="print the result as JSON")
    args = ap.parse_args(argv)
    try:
        model = TlbModel(args.entries, args.page_size)
        if args.trace == "-":
            trace = read_trace(sys.stdin)
        else:
            with open(args.trace) as fh:
                trace = read_trace(fh)
    except (OSError, ValueError) as exc:
        print(f"tlbsim: {exc}", file=sys.stderr)
        return 2
    res = simulate(trace, model)
    doc = {"page_size": args.page_size, "entries": args.entries, "accesses": res.accesses,
           "pages_touched": res.distinct_pages, "hits": res.hits, "misses": res.misses}
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        for k, v in doc.items():
            print(f"{k}: {'unbounded' if v is None else v}")
    return 0


def chase_main(argv: Optional[List[str]] = None) -> int:
    from .tlb import run_chase_live

    ap = argparse.ArgumentParser(prog="chase", description="Pointer chase over allocator memory.")
    ap.add_argument("--footprint", type=int, required=True, help="bytes of memory to chase through")
    ap.add_argument("--steps", type=int, required=True, help="number of dependent hops")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--thp", choices=("on", "off"), required=True)
    ap.add_argument("--cpu", type=int, help="pin to this CPU while measuring")
    ap.add_argument("--json", action="store_true", help="print the result as JSON")
    args = ap.parse_args(argv)
    if args.footprint <= 0 or args.steps < 0:
        print("chase: footprint must be positive and steps non-negative", file=sys.stderr)
        return 2
    res = run_chase_live(args.footprint, args.steps, args.seed,
                         "hugepage" if args.thp == "on" else "baseline", args.cpu)
    doc = asdict(res)
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        for k, v in doc.items():
            print(f"{k}: {'NA' if v is None else v}")
    return 0


# --------------------------------------------------------------------------
# bench


def bench_main(argv: Optional[List[str]] = None) -> int:
    from . import bench
    from .instances import write_mini_suite

    ap = argparse.ArgumentParser(prog="bench", description="Paired THP on/off benchmark suites.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run (or resume) a suite")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p = sub.add_parser("report", help="render the report of a suite directory")
    p.add_argument("dir")
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p = sub.add_parser("validate", help="check a manifest and list every problem")
    p.add_argument("manifest")
    p = sub.add_parser("generate", help="write the built-in mini suite and its manifest")
    p.add_argument("dir")
    p.add_argument("--timeout", type=float, default=60)
    p.add_argument("--parallel", type=int, help="max concurrent runs (default: usable CPUs, at most 5)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    if args.cmd == "generate":
        print(write_mini_suite(args.dir, timeout=args.timeout, parallel=args.parallel))
        return 0
    if args.cmd == "report":
        try:
            docs = bench.emit_report(args.dir, args.format)
        except (OSError, ValueError) as exc:
            print(f"bench: {exc}", file=sys.stderr)
            return 1
        sys.stdout.write(docs["report.md" if args.format == "md" else "report.csv"])
        return 0
    try:
        manifest = bench.load_manifest(args.manifest)
    except OSError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    errors = manifest.validate()
    if errors:
        print(f"{args.manifest}: {len(errors)} problem(s)", file=sys.stderr)
        for e in errors:
            print(f"  - {e}", file=sys.stderr)
        return 2
    if args.cmd == "validate":
        print(f"{args.manifest}: ok ({len(manifest.solvers)} solver(s), "
              f"{len(manifest.instances)} instance(s), "
              f"{bench.expected_records(manifest)} runs)")
        return 0
    report = bench.run_suite(manifest, args.out)
    print(f"executed {report.executed} run(s); {len(report.records)} record(s) in {args.out}",
          file=sys.stderr)
    docs = bench.emit_report(args.out, args.format)
    sys.stdout.write(docs["report.md" if args.format == "md" else "report.csv"])
    return 0


COMMANDS = {"solve": solve_main, "tlbsim": tlbsim_main, "chase": chase_main, "bench": bench_main}


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in COMMANDS:
        print(f"usage: python -m thpsat {{{','.join(COMMANDS)}}} ...", file=sys.stderr)
        return 2
    return COMMANDS[argv[0]](argv[1:])


def _entry(name):
    def run():
        sys.exit(COMMANDS[name]())
    return run


solve = _entry("solve")
tlbsim = _entry("tlbsim")
chase = _entry("chase")
bench = _entry("bench")
