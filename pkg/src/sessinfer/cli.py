"""Command-line interface.

  sessinfer check FILE    typecheck a fully annotated program
  sessinfer infer FILE    infer declarations for undeclared processes
  sessinfer bench FILES   time inference over a grid of configurations

Exit codes: 0 success; 2 parse or validity error; 3 no structural
assignment fits (or a type error in check mode); 4 index constraints
unsatisfiable; 5 budget exceeded; 6 solution outside the template language.
"""

from __future__ import annotations

import argparse
import sys
import time

from . import subtyping
from .parser import parse_signature
from .pretty import pp_decl, pp_signature
from .smt import set_default_timeout
from .stage2 import InferOptions, infer
from .syntax import SourceError
from .typecheck import CheckError, check_signature

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_STRUCTURAL = 3
EXIT_ARITH = 4
EXIT_TIMEOUT = 5
EXIT_INEXPRESSIBLE = 6

_STATUS_EXIT = {
    "success": EXIT_OK,
    "structural": EXIT_STRUCTURAL,
    "arith": EXIT_ARITH,
    "timeout": EXIT_TIMEOUT,
    "inexpressible": EXIT_INEXPRESSIBLE,
}


def _load(path: str):
    with open(path) as f:
        return parse_signature(f.read())


def _options(args) -> InferOptions:
    return InferOptions(
        strategy=args.strategy,
        arith=args.arith,
        degree=args.degree,
        transitivity=not args.no_transitivity,
        budget_ms=args.budget_ms,
        z3_timeout_ms=args.z3_timeout_ms,
    )


def cmd_check(args) -> int:
    try:
        sig = _load(args.file)
        check_signature(sig)
    except CheckError as e:
        print(e.render(args.file), file=sys.stderr)
        return EXIT_STRUCTURAL
    except SourceError as e:
        print(e.render(args.file), file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.file}: ok")
    return EXIT_OK


def cmd_infer(args) -> int:
    try:
        sig = _load(args.file)
        from .validity import check_signature_valid
        check_signature_valid(sig)
    except SourceError as e:
        print(e.render(args.file), file=sys.stderr)
        return EXIT_INVALID
    undeclared = [n for n in sig.defs if n not in sig.decls]
    if args.dump_constraints:
        from .constraints import gen_constraints, introduce_placeholders
        from .stage1 import build_search_space
        probe = _load(args.file)
        info = introduce_placeholders(probe)
        tcs, _ = gen_constraints(probe)
        from .pretty import pp_type
        print(f"% {len(tcs)} generated constraints")
        for c in tcs:
            print(f"%   {pp_type(c.lhs)} <: {pp_type(c.rhs)}")
        space = build_search_space(probe, tcs, info, transitivity=not args.no_transitivity)
        print(f"% {len(space.constraints)} after transitivity elimination")
        for l, r in space.constraints:
            print(f"%   {pp_type(l)} <: {pp_type(r)}")
        for u in space.unknowns:
            print(f"%   {u} in {{{', '.join(space.candidates[u])}}}")
    r = infer(sig, _options(args))
    if r.status != "success":
        print(f"{args.file}: inference failed ({r.status}): {r.message}", file=sys.stderr)
        return _STATUS_EXIT[r.status]
    if args.emit_reconstructed:
        print(pp_signature(r.program))
    else:
        for name in undeclared:
            print(pp_decl(r.program.decls[name]))
    return EXIT_OK


def cmd_bench(args) -> int:
    grid = [("poly", "real", True)]
    if args.grid == "full":
        grid = [
            ("poly", "real", True),
            ("poly", "int", True),
            ("uif", "real", True),
            ("poly", "real", False),
        ]
    print(f"{'file':<28} {'strategy':<10} {'arith':<6} {'trans':<6} "
          f"{'status':<14} {'time':>8}")
    worst = EXIT_OK
    for path in args.files:
        try:
            parse_signature(open(path).read())
        except SourceError as e:
            print(e.render(path), file=sys.stderr)
            return EXIT_INVALID
        for strategy, arith, trans in grid:
            times = []
            status = "?"
            for _ in range(args.trials):
                sig = _load(path)
                opts = InferOptions(strategy=strategy, arith=arith,
                                    transitivity=trans, degree=args.degree,
                                    budget_ms=args.budget_ms,
                                    z3_timeout_ms=args.z3_timeout_ms)
                t0 = time.monotonic()
                status = infer(sig, opts).status
                times.append(time.monotonic() - t0)
            best = min(times)
            print(f"{path:<28} {strategy:<10} {arith:<6} {str(trans):<6} "
                  f"{status:<14} {best:>7.2f}s")
            worst = max(worst, _STATUS_EXIT[status])
    return worst


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="sessinfer",
                                 description="refined session type checking and inference")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def solver_opts(p):
        p.add_argument("--z3-timeout-ms", type=int, default=10_000,
                       help="per-query solver timeout")
        p.add_argument("--budget-ms", type=int, default=60_000,
                       help="overall inference budget")
        p.add_argument("--degree", type=int, default=1,
                       help="maximum degree of index polynomials")

    pc = sub.add_parser("check", help="typecheck an annotated program")
    pc.add_argument("file")
    pc.add_argument("--trace-subtyping", action="store_true")
    pc.add_argument("--z3-timeout-ms", type=int, default=10_000)
    pc.set_defaults(fn=cmd_check)

    pi = sub.add_parser("infer", help="infer declarations for undeclared processes")
    pi.add_argument("file")
    pi.add_argument("--strategy", choices=["poly", "uif"], default="poly")
    pi.add_argument("--arith", choices=["real", "int"], default="real")
    pi.add_argument("--no-transitivity", action="store_true",
                    help="skip transitivity elimination (intermediates are enumerated)")
    pi.add_argument("--trace-subtyping", action="store_true")
    pi.add_argument("--dump-constraints", action="store_true")
    pi.add_argument("--emit-reconstructed", action="store_true",
                    help="print the full reconstructed program")
    solver_opts(pi)
    pi.set_defaults(fn=cmd_infer)

    pb = sub.add_parser("bench", help="time inference over a configuration grid")
    pb.add_argument("files", nargs="+")
    pb.add_argument("--grid", choices=["default", "full"], default="default")
    pb.add_argument("--trials", type=int, default=1)
    pb.add_argument("--strategy", choices=["poly", "uif"], default="poly")
    pb.add_argument("--arith", choices=["real", "int"], default="real")
    solver_opts(pb)
    pb.set_defaults(fn=cmd_bench)

    args = ap.parse_args(argv)
    if getattr(args, "trace_subtyping", False):
        subtyping.TRACE_SINK = lambda msg: print(f"[subtype] {msg}", file=sys.stderr)
    if getattr(args, "z3_timeout_ms", None):
        set_default_timeout(args.z3_timeout_ms)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
