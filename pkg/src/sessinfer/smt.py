"""Arithmetic entailment and constraint solving via an SMT solver.

Index variables range over naturals; this is encoded by working in integer
(or, as a solving strategy, real) arithmetic with explicit >= 0 guards on
every quantified variable.

Every query is an independent SMT-LIB2 script.  Scripts are handed to a
solver backend: either an external binary taking a script file (a native z3,
if one is configured/available) or a persistent node.js worker evaluating
scripts with the z3 WASM build.  Each request still runs in a fresh solver
context, so the two backends are interchangeable.
"""

from __future__ import annotations

import os
import select
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .syntax import (
    Add, And, Arith, Bot, Cmp, Const, Implies, Mul, Not, Or, Prop, Sub, Top,
    Unknown, VC, Var, arith_unknowns, arith_vars, conj, eval_prop, prop_unknowns,
    prop_vars, subst_arith, subst_prop,
)

DEFAULT_TIMEOUT_MS = 10_000
_TIMEOUT = [DEFAULT_TIMEOUT_MS]
_DEBUG = bool(os.environ.get("SESSINFER_DEBUG"))


def set_default_timeout(ms: int) -> None:
    """Set the per-query solver timeout used when none is passed."""
    _TIMEOUT[0] = ms

_WORKER_JS = os.path.join(os.path.dirname(__file__), "solver", "z3worker.js")


class SolverUnavailable(Exception):
    pass


class _NodeWorker:
    """Persistent node.js process evaluating SMT-LIB2 scripts with z3 WASM."""

    def __init__(self):
        self.proc: Optional[subprocess.Popen] = None

    def _start(self) -> None:
        node = shutil.which("node")
        if node is None:
            raise SolverUnavailable("no z3 binary and no node.js for the WASM worker")
        self.proc = subprocess.Popen(
            [node, _WORKER_JS],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            bufsize=0,
        )
        self._buf = b""
        ready = self._read_line(time.monotonic() + 60.0)
        if ready is None or ready.strip() != "READY":
            raise SolverUnavailable(f"worker failed to start: {ready!r}")

    def _read_line(self, deadline: float) -> Optional[str]:
        """Read one line from the (unbuffered) worker stdout with a deadline."""
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buf:
            budget = deadline - time.monotonic()
            if budget <= 0:
                return None
            ready, _, _ = select.select([fd], [], [], budget)
            if not ready:
                return None
            chunk = os.read(fd, 65536)
            if chunk == b"":
                return None
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode()

    def _read_until_done(self, deadline: float) -> Optional[str]:
        out: list[str] = []
        while True:
            line = self._read_line(deadline)
            if line is None:
                return None
            if line.strip() == "===DONE===":
                return "\n".join(out)
            out.append(line)

    def run(self, script: str, timeout_ms: int) -> str:
        if self.proc is None or self.proc.poll() is not None:
            self._start()
        with tempfile.NamedTemporaryFile(
            "w", suffix=".smt2", delete=False, prefix="sessinfer_"
        ) as f:
            f.write(script)
            path = f.name
        try:
            self.proc.stdin.write((path + "\n").encode())
            self.proc.stdin.flush()
            result = self._read_until_done(time.monotonic() + timeout_ms / 1000.0)
            if result is None:
                # a stuck WASM solver cannot be interrupted; kill and restart
                self.proc.kill()
                self.proc = None
                return "timeout"
            return result
        finally:
            os.unlink(path)


class _ExternalSolver:
    """Run an external solver binary once per script."""

    def __init__(self, command: list[str]):
        self.command = command

    def run(self, script: str, timeout_ms: int) -> str:
        with tempfile.NamedTemporaryFile(
            "w", suffix=".smt2", delete=False, prefix="sessinfer_"
        ) as f:
            f.write(script)
            path = f.name
        try:
            out = subprocess.run(
                self.command + [path],
                capture_output=True,
                text=True,
                timeout=timeout_ms / 1000.0,
            )
            return out.stdout
        except subprocess.TimeoutExpired:
            return "timeout"
        finally:
            os.unlink(path)


_BACKEND = None


def get_backend():
    """The process-wide solver backend, chosen once.

    SESSINFER_SMT_CMD overrides with an external command; otherwise a z3
    binary on PATH is used, falling back to the bundled node/WASM worker.
    """
    global _BACKEND
    if _BACKEND is None:
        cmd = os.environ.get("SESSINFER_SMT_CMD")
        if cmd:
            _BACKEND = _ExternalSolver(cmd.split())
        elif shutil.which("z3"):
            _BACKEND = _ExternalSolver(["z3", "-smt2"])
        else:
            _BACKEND = _NodeWorker()
    return _BACKEND


def run_script(script: str, timeout_ms: int | None = None) -> tuple[str, str]:
    """Run a script; returns (status, rest) where status is the first line."""
    if timeout_ms is None:
        timeout_ms = _TIMEOUT[0]
    out = get_backend().run(script, timeout_ms).strip()
    if not out:
        return "unknown", ""
    head, _, rest = out.partition("\n")
    return head.strip(), rest


# ---------------------------------------------------------------------------
# SMT-LIB2 emission


def smt_arith(e: Arith, unk: Callable[[Unknown], str] | None = None) -> str:
    if isinstance(e, Const):
        return str(e.value) if e.value >= 0 else f"(- {-e.value})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        return f"(+ {smt_arith(e.left, unk)} {smt_arith(e.right, unk)})"
    if isinstance(e, Sub):
        return f"(- {smt_arith(e.left, unk)} {smt_arith(e.right, unk)})"
    if isinstance(e, Mul):
        return f"(* {smt_arith(e.left, unk)} {smt_arith(e.right, unk)})"
    if unk is None:
        raise ValueError(f"unexpected unknown {e.name} in a ground expression")
    return unk(e)


def smt_prop(p: Prop, unk: Callable[[Unknown], str] | None = None) -> str:
    if isinstance(p, Top):
        return "true"
    if isinstance(p, Bot):
        return "false"
    if isinstance(p, Cmp):
        return f"({p.op} {smt_arith(p.left, unk)} {smt_arith(p.right, unk)})"
    if isinstance(p, Not):
        return f"(not {smt_prop(p.body, unk)})"
    if isinstance(p, And):
        return f"(and {smt_prop(p.left, unk)} {smt_prop(p.right, unk)})"
    if isinstance(p, Or):
        return f"(or {smt_prop(p.left, unk)} {smt_prop(p.right, unk)})"
    return f"(=> {smt_prop(p.left, unk)} {smt_prop(p.right, unk)})"


def _guards(vars: tuple[str, ...]) -> list[str]:
    return [f"(>= {v} 0)" for v in vars]


# ---------------------------------------------------------------------------
# Entailment

_entails_cache: dict[tuple, str] = {}


def entails(vc: VC, goal: Prop, timeout_ms: int | None = None) -> str:
    """Does the context entail the goal for all natural values of vc.vars?

    Returns 'yes', 'no' or 'unknown'.  Encoded as unsatisfiability of
    vars >= 0 /\\ ctx /\\ ~goal over the integers.
    """
    key = (vc.vars, vc.cons, goal)
    hit = _entails_cache.get(key)
    if hit is not None:
        return hit
    if not vc.vars:
        # closed: evaluate concretely, no solver round trip needed
        env: dict[str, int] = {}
        try:
            if any(not eval_prop(c, env) for c in vc.cons):
                res = "yes"
            else:
                res = "yes" if eval_prop(goal, env) else "no"
        except (KeyError, ValueError):
            res = None
        if res is not None:
            _entails_cache[key] = res
            return res
    lines = ["(set-logic ALL)"]
    for v in vc.vars:
        lines.append(f"(declare-const {v} Int)")
    for g in _guards(vc.vars):
        lines.append(f"(assert {g})")
    for c in vc.cons:
        lines.append(f"(assert {smt_prop(c)})")
    lines.append(f"(assert (not {smt_prop(goal)}))")
    lines.append("(check-sat)")
    status, _ = run_script("\n".join(lines) + "\n", timeout_ms)
    res = {"unsat": "yes", "sat": "no"}.get(status, "unknown")
    if res != "unknown":
        _entails_cache[key] = res
    return res


def entails_exists(
    vc: VC,
    evars: tuple[str, ...],
    body: tuple[Prop, ...],
    timeout_ms: int | None = None,
) -> str:
    """Does the context entail (exists evars >= 0. /\\ body)?"""
    key = (vc.vars, vc.cons, evars, body)
    hit = _entails_cache.get(key)
    if hit is not None:
        return hit
    lines = ["(set-logic ALL)"]
    for v in vc.vars:
        lines.append(f"(declare-const {v} Int)")
    for g in _guards(vc.vars):
        lines.append(f"(assert {g})")
    for c in vc.cons:
        lines.append(f"(assert {smt_prop(c)})")
    binders = " ".join(f"({v} Int)" for v in evars)
    inner = " ".join(_guards(evars) + [smt_prop(p) for p in body]) or "true"
    if evars:
        lines.append(f"(assert (not (exists ({binders}) (and {inner}))))")
    else:
        lines.append(f"(assert (not (and {inner})))")
    lines.append("(check-sat)")
    status, _ = run_script("\n".join(lines) + "\n", timeout_ms)
    res = {"unsat": "yes", "sat": "no"}.get(status, "unknown")
    if res != "unknown":
        _entails_cache[key] = res
    return res


# ---------------------------------------------------------------------------
# Model parsing


def _sexp(text: str):
    """Parse the first S-expression in text into nested lists of atoms."""
    toks: list[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            toks.append(c)
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            toks.append(text[i:j])
            i = j

    pos = [0]

    def rd():
        if pos[0] >= len(toks):
            raise ValueError("unbalanced model S-expression")
        t = toks[pos[0]]
        pos[0] += 1
        if t == "(":
            out = []
            while pos[0] < len(toks) and toks[pos[0]] != ")":
                out.append(rd())
            pos[0] += 1
            return out
        return t

    return rd()


def _num_value(sx) -> Fraction:
    if isinstance(sx, str):
        return Fraction(sx)
    if isinstance(sx, list) and sx and sx[0] == "-" and len(sx) == 2:
        return -_num_value(sx[1])
    if isinstance(sx, list) and sx and sx[0] == "/" and len(sx) == 3:
        return _num_value(sx[1]) / _num_value(sx[2])
    if isinstance(sx, list) and sx and sx[0] == "to_real" and len(sx) == 2:
        return _num_value(sx[1])
    raise ValueError(f"not a numeral: {sx!r}")


def parse_model(text: str) -> dict[str, tuple[list[str], object]]:
    """Parse (define-fun name ((p S)...) S body) entries from a model.

    Returns name -> (parameter names, body S-expression).
    """
    sx = _sexp(text)
    if isinstance(sx, list) and sx and sx[0] == "model":
        sx = sx[1:]
    out: dict[str, tuple[list[str], object]] = {}
    for entry in sx:
        if not (isinstance(entry, list) and entry and entry[0] == "define-fun"):
            continue
        name = entry[1]
        params = [p[0] for p in entry[2]]
        out[name] = (params, entry[4])
    return out


def sexp_to_poly(body, params: list[str]) -> Optional[dict[tuple[int, ...], Fraction]]:
    """Interpret an S-expression as a polynomial over params.

    Returns a map from exponent vectors to coefficients, or None if the body
    uses anything beyond +, -, * and numerals (ite, div, mod, ...).
    """
    zero = tuple(0 for _ in params)

    def mono(v: str):
        return tuple(1 if p == v else 0 for p in params)

    def mul(a, b):
        out: dict[tuple[int, ...], Fraction] = {}
        for ea, ca in a.items():
            for eb, cb in b.items():
                e = tuple(x + y for x, y in zip(ea, eb))
                out[e] = out.get(e, Fraction(0)) + ca * cb
        return out

    def add(a, b, sign=1):
        out = dict(a)
        for e, c in b.items():
            out[e] = out.get(e, Fraction(0)) + sign * c
        return out

    def go(sx):
        if isinstance(sx, str):
            if sx in params:
                return {mono(sx): Fraction(1)}
            try:
                return {zero: Fraction(sx)}
            except ValueError:
                return None
        if not sx:
            return None
        op, args = sx[0], sx[1:]
        if op == "-" and len(args) == 1:
            a = go(args[0])
            return None if a is None else {e: -c for e, c in a.items()}
        if op in ("+", "-", "*") and args:
            acc = go(args[0])
            if acc is None:
                return None
            for arg in args[1:]:
                nxt = go(arg)
                if nxt is None:
                    return None
                acc = mul(acc, nxt) if op == "*" else add(acc, nxt, -1 if op == "-" else 1)
            return acc
        if op == "/" and len(args) == 2:
            a, b = go(args[0]), go(args[1])
            if a is None or b is None or set(b) - {zero}:
                return None
            return {e: c / b[zero] for e, c in a.items()}
        if op == "to_real" and len(args) == 1:
            return go(args[0])
        return None

    poly = go(body)
    if poly is None:
        return None
    return {e: c for e, c in poly.items() if c != 0}


# ---------------------------------------------------------------------------
# Template-based constraint solving


@dataclass(frozen=True)
class ArithConstraint:
    """All naturals satisfying the context must satisfy the goal.

    When evars is nonempty the goal is existentially quantified:
    forall vc.vars >= 0. ctx => exists evars >= 0. goal.
    """

    vc: VC
    goal: Prop
    evars: tuple[str, ...] = ()


def monomials(nparams: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors up to total degree, in graded lexicographic order."""
    out: list[tuple[int, ...]] = []
    for d in range(degree + 1):
        level: list[tuple[int, ...]] = []

        def gen(prefix: list[int], remaining: int, slots: int):
            if slots == 0:
                if remaining == 0:
                    level.append(tuple(prefix))
                return
            for k in range(remaining, -1, -1):
                gen(prefix + [k], remaining - k, slots - 1)

        gen([], d, nparams)
        out.extend(level)
    return out


def poly_arith(coeffs: dict[tuple[int, ...], int], params: list[Arith]) -> Arith:
    """Build an arithmetic expression for an integer-coefficient polynomial."""
    pos: Optional[Arith] = None
    neg: Optional[Arith] = None
    for expo in sorted(coeffs, key=lambda e: (sum(e), tuple(-x for x in e))):
        c = coeffs[expo]
        if c == 0:
            continue
        term: Optional[Arith] = None
        mag = abs(c)
        if mag != 1 or not any(expo):
            term = Const(mag)
        for p, k in zip(params, expo):
            for _ in range(k):
                term = p if term is None else Mul(term, p)
        assert term is not None
        if c > 0:
            pos = term if pos is None else Add(pos, term)
        else:
            neg = term if neg is None else Add(neg, term)
    if pos is None and neg is None:
        return Const(0)
    if neg is None:
        return pos
    return Sub(pos if pos is not None else Const(0), neg)


@dataclass
class SolveResult:
    status: str  # sat | unsat | unknown | timeout | inexpressible
    solution: dict[str, tuple[list[str], Arith]] = field(default_factory=dict)
    detail: str = ""


def _constraint_assert(c: ArithConstraint, unk) -> str:
    """Index variables always range over the (non-negative) integers."""
    prem = _guards(c.vc.vars) + [smt_prop(p, unk) for p in c.vc.cons]
    body = smt_prop(c.goal, unk)
    if c.evars:
        binders = " ".join(f"({v} Int)" for v in c.evars)
        inner = " ".join(_guards(c.evars) + [body])
        body = f"(exists ({binders}) (and {inner}))"
    if prem:
        body = f"(=> (and {' '.join(prem)}) {body})"
    if c.vc.vars:
        binders = " ".join(f"({v} Int)" for v in c.vc.vars)
        return f"(assert (forall ({binders}) {body}))"
    return f"(assert {body})"


def counterexample(
    vc: VC,
    goal: Prop,
    evars: tuple[str, ...] = (),
    timeout_ms: int | None = None,
) -> Optional[dict[str, int]]:
    """Values of vc.vars where the context holds but the goal fails, or None."""
    lines = ["(set-logic ALL)"]
    for v in vc.vars:
        lines.append(f"(declare-const {v} Int)")
    for g in _guards(vc.vars):
        lines.append(f"(assert {g})")
    for c in vc.cons:
        lines.append(f"(assert {smt_prop(c)})")
    body = smt_prop(goal)
    if evars:
        binders = " ".join(f"({v} Int)" for v in evars)
        inner = " ".join(_guards(evars) + [body])
        body = f"(exists ({binders}) (and {inner}))"
    lines.append(f"(assert (not {body}))")
    lines.append("(check-sat)")
    if vc.vars:
        lines.append(f"(get-value ({' '.join(vc.vars)}))")
    status, rest = run_script("\n".join(lines) + "\n", timeout_ms)
    if status != "sat":
        return None
    if not vc.vars:
        return {}
    try:
        sx = _sexp(rest)
        return {pair[0]: int(_num_value(pair[1])) for pair in sx}
    except (ValueError, IndexError, TypeError):
        return None


def _apply_sol_arith(e: Arith, sol: dict) -> Arith:
    if isinstance(e, Unknown):
        args = [_apply_sol_arith(a, sol) for a in e.args]
        if e.name in sol:
            params, body = sol[e.name]
            return subst_arith(body, dict(zip(params, args)))
        return Unknown(e.name, tuple(args))
    if isinstance(e, (Add, Sub, Mul)):
        return type(e)(_apply_sol_arith(e.left, sol), _apply_sol_arith(e.right, sol))
    return e


def _apply_sol_prop(p: Prop, sol: dict) -> Prop:
    if isinstance(p, Cmp):
        return Cmp(p.op, _apply_sol_arith(p.left, sol), _apply_sol_arith(p.right, sol))
    if isinstance(p, Not):
        return Not(_apply_sol_prop(p.body, sol))
    if isinstance(p, (And, Or, Implies)):
        return type(p)(_apply_sol_prop(p.left, sol), _apply_sol_prop(p.right, sol))
    return p


def _initial_points(vars: tuple[str, ...]) -> list[dict[str, int]]:
    pts = [dict.fromkeys(vars, k) for k in (0, 1, 2, 64)]
    for v in vars:
        for k in (1, 64):
            # the large samples make a bounded-coefficient template behave
            # asymptotically right along each axis from the start, instead of
            # learning sign information one counterexample at a time
            pt = dict.fromkeys(vars, 0)
            pt[v] = k
            pts.append(pt)
    seen, out = set(), []
    for pt in pts:
        key = tuple(sorted(pt.items()))
        if key not in seen:
            seen.add(key)
            out.append(pt)
    return out


def _eliminate_defined(c: ArithConstraint) -> ArithConstraint:
    """Instantiate quantified variables pinned by an equality premise.

    A premise `v = e` with v quantified and not occurring in e lets the
    constraint be specialised at v := e, replacing the premise by the
    nonnegativity guard `e >= 0` (v ranges over naturals, so the instance
    is only implied where e is a natural).  This keeps the coupling through
    e exact when the remaining variables are later sampled at points.
    """
    vars_left = list(c.vc.vars)
    cons = list(c.vc.cons)
    goal = c.goal
    # hypotheses of an implication goal are premises in disguise
    while isinstance(goal, Implies) and not c.evars:
        cons.append(goal.left)
        goal = goal.right
    changed = True
    while changed:
        changed = False
        for i, p in enumerate(cons):
            if not (isinstance(p, Cmp) and p.op == "="):
                continue
            for v, rhs in ((p.left, p.right), (p.right, p.left)):
                if (isinstance(v, Var) and v.name in vars_left
                        and v.name not in arith_vars(rhs)):
                    sub = {v.name: rhs}
                    guard = Cmp(">=", rhs, Const(0))
                    cons = ([subst_prop(q, sub) for q in cons[:i]]
                            + [guard]
                            + [subst_prop(q, sub) for q in cons[i + 1:]])
                    goal = subst_prop(goal, sub)
                    vars_left.remove(v.name)
                    changed = True
                    break
            if changed:
                break
    return ArithConstraint(VC(tuple(vars_left), tuple(cons)), goal, c.evars)


def _sk_arith(e: Arith, names, table) -> Arith:
    """Replace applications of `names` by fresh existential variables."""
    if isinstance(e, Unknown):
        args = tuple(_sk_arith(a, names, table) for a in e.args)
        if e.name in names:
            key = (e.name, args)
            if key not in table:
                table[key] = Var(f"_sk{len(table)}")
            return table[key]
        return Unknown(e.name, args)
    if isinstance(e, (Add, Sub, Mul)):
        return type(e)(_sk_arith(e.left, names, table),
                       _sk_arith(e.right, names, table))
    return e


def _sk_prop(p: Prop, names, table) -> Prop:
    if isinstance(p, Cmp):
        return Cmp(p.op, _sk_arith(p.left, names, table),
                   _sk_arith(p.right, names, table))
    if isinstance(p, Not):
        return Not(_sk_prop(p.body, names, table))
    if isinstance(p, (And, Or, Implies)):
        return type(p)(_sk_prop(p.left, names, table),
                       _sk_prop(p.right, names, table))
    return p


def _solve_poly_cegis(
    constraints: list[ArithConstraint],
    unknowns: dict[str, int],
    degree: int,
    timeout_ms: int,
    primary: Optional[set[str]] = None,
    transitivity: bool = True,
) -> SolveResult:
    """Counterexample-guided coefficient search.

    The quantified constraints are sampled at concrete points, giving a
    quantifier-free problem over the coefficients; a candidate model is
    verified against the original quantified constraints and any
    counterexample point is added to the samples.

    When `primary` names a proper subset of the unknowns, the search is
    staged: the primary unknowns are synthesised first with the remaining
    ones treated as existential instantiations (shared per argument value),
    and the rest are then solved with the primary solution substituted in.
    If staging fails the unknowns are synthesised jointly.
    """
    deadline = time.monotonic() + timeout_ms / 1000.0
    prim = set(unknowns) if primary is None else primary & set(unknowns)
    sec = {u: n for u, n in unknowns.items() if u not in prim}
    if prim and sec:
        if _DEBUG:
            print(f"[cegis] stage A: prim={sorted(prim)} sec={sorted(sec)}")
        res_a = _cegis_core(constraints, {u: unknowns[u] for u in prim},
                            degree, deadline, set(sec), sorted(prim),
                            eliminate=transitivity)
        if _DEBUG:
            print(f"[cegis] stage A -> {res_a.status} {res_a.detail or ''}")
        if res_a.status in ("unsat", "timeout"):
            return res_a
        if res_a.status == "sat":
            cons_b = []
            for c in constraints:
                props = list(c.vc.cons) + [c.goal]
                if any(set(prop_unknowns(p)) & set(sec) for p in props):
                    cons_b.append(ArithConstraint(
                        VC(c.vc.vars,
                           tuple(_apply_sol_prop(p, res_a.solution)
                                 for p in c.vc.cons)),
                        _apply_sol_prop(c.goal, res_a.solution),
                        c.evars))
            if _DEBUG:
                print(f"[cegis] stage B: {len(cons_b)} constraints")
            res_b = _cegis_core(cons_b, sec, degree, deadline, set(),
                                sorted(sec), eliminate=transitivity)
            if _DEBUG:
                print(f"[cegis] stage B -> {res_b.status} {res_b.detail or ''}")
            if res_b.status == "sat":
                merged = dict(res_a.solution)
                merged.update(res_b.solution)
                return SolveResult("sat", merged)
            if res_b.status == "timeout":
                return res_b
        # staging failed; fall through to a joint search
    if _DEBUG:
        print("[cegis] joint search")
    return _cegis_core(constraints, dict(unknowns), degree, deadline,
                       set(), sorted(prim) or sorted(unknowns),
                       eliminate=transitivity)


def _cegis_core(
    constraints: list[ArithConstraint],
    unknowns: dict[str, int],
    degree: int,
    deadline: float,
    existential: set[str],
    minimise_first: list[str],
    eliminate: bool = True,
) -> SolveResult:
    monos = {u: monomials(n, degree) for u, n in unknowns.items()}
    coeff_names = {
        u: [f"{u}_c{i}" for i in range(len(monos[u]))] for u in unknowns
    }

    def unk(e: Unknown) -> str:
        args = [smt_arith(a, unk) for a in e.args]
        if e.name in existential:
            # an application of a deferred unknown stands for some natural;
            # syntactically equal applications share one symbol
            key = (e.name, tuple(args))
            if key not in ex_table:
                ex_table[key] = f"_g{len(ex_table)}"
                ex_created.append(ex_table[key])
            return ex_table[key]
        terms = []
        for cname, expo in zip(coeff_names[e.name], monos[e.name]):
            t = cname
            for a, k in zip(args, expo):
                for _ in range(k):
                    if not _is_numeral(a):
                        symbolic_product[0] = True
                    t = f"(* {t} {a})"
            terms.append(t)
        return terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"

    # cutting variables pinned by an equality premise is an instance of the
    # transitivity optimization, so it is switched off together with it
    syn_cons = ([_eliminate_defined(c) for c in constraints]
                if eliminate else list(constraints))
    points: list[list[dict[str, int]]] = [
        _initial_points(c.vc.vars) for c in syn_cons
    ]
    fresh = [0]
    last_fail = [0]
    symbolic_product = [False]
    ex_table: dict[tuple, str] = {}
    ex_created: list[str] = []

    def synth(bound: Optional[int], cap: Optional[int] = None,
              group: Optional[list[str]] = None,
              pins: Optional[dict[str, int]] = None):
        lines = []
        for u in sorted(unknowns):
            for cname in coeff_names[u]:
                lines.append(f"(declare-const {cname} Int)")
                if bound is not None:
                    lines.append(
                        f"(assert (and (>= {cname} (- {bound})) (<= {cname} {bound})))")
        ex_table.clear()
        ex_created.clear()
        seen: set[str] = set()
        for c, pts in zip(syn_cons, points):
            for pt in pts:
                env = {v: Const(k) for v, k in pt.items()}
                n0 = len(ex_created)
                prem, vacuous = [], False
                for p in c.vc.cons:
                    q = subst_prop(p, env)
                    if not prop_unknowns(q):
                        if eval_prop(q, {}):
                            continue  # ground true premise adds nothing
                        vacuous = True
                        break
                    prem.append(smt_prop(q, unk))
                if vacuous:
                    continue
                goal_p = subst_prop(c.goal, env)
                decls: list[str] = []
                if c.evars:
                    ren = {}
                    for v in c.evars:
                        fresh[0] += 1
                        ren[v] = Var(f"_w{fresh[0]}")
                        decls.append(f"(declare-const {ren[v].name} Int)")
                    goal_p = subst_prop(goal_p, ren)
                    parts = ([f"(>= {r.name} 0)" for r in ren.values()]
                             + [smt_prop(goal_p, unk)])
                    goal = f"(and {' '.join(parts)})"
                elif not prop_unknowns(goal_p):
                    if eval_prop(goal_p, {}):
                        continue  # instance already satisfied
                    if not prem:
                        lines.append("(assert false)")
                        continue
                    lines.append(f"(assert (not (and {' '.join(prem)})))")
                    continue
                else:
                    goal = smt_prop(goal_p, unk)
                if prem:
                    goal = f"(=> (and {' '.join(prem)}) {goal})"
                stmt = f"(assert {goal})"
                for g in ex_created[n0:]:
                    lines.append(f"(declare-const {g} Int)")
                    lines.append(f"(assert (>= {g} 0))")
                if stmt in seen:
                    continue
                seen.add(stmt)
                lines.extend(decls)
                lines.append(stmt)
        if pins:
            for cname, v in pins.items():
                lines.append(f"(assert (= {cname} {_smt_int(v)}))")
        if cap is not None:
            sums = []
            for u in (group if group is not None else sorted(unknowns)):
                for cname in coeff_names[u]:
                    lines.append(f"(declare-const {cname}_a Int)")
                    lines.append(f"(assert (>= {cname}_a {cname}))")
                    lines.append(f"(assert (>= {cname}_a (- {cname})))")
                    sums.append(f"{cname}_a")
            total = sums[0] if len(sums) == 1 else f"(+ {' '.join(sums)})"
            lines.append(f"(assert (<= {total} {cap}))")
        logic = "QF_NIA" if symbolic_product[0] else "QF_LIA"
        lines = [f"(set-logic {logic})"] + lines
        lines += ["(check-sat)", "(get-model)"]
        left = int((deadline - time.monotonic()) * 1000)
        if left <= 0:
            return "timeout", ""
        return run_script("\n".join(lines) + "\n", left)

    def extract(model) -> Optional[dict]:
        solution = {}
        for u, n in sorted(unknowns.items()):
            coeffs: dict[tuple[int, ...], int] = {}
            for cname, expo in zip(coeff_names[u], monos[u]):
                if cname not in model:
                    continue
                val = _num_value(model[cname][1])
                if val.denominator != 1:
                    return None
                if val != 0:
                    coeffs[expo] = int(val)
            params = [f"{u}_p{i}" for i in range(n)]
            solution[u] = (params, poly_arith(coeffs, [Var(p) for p in params]))
        return solution

    def verify(sol) -> tuple[bool, Optional[tuple[int, dict[str, int]]]]:
        """Check every constraint; on failure return its index and a point.

        Constraints whose premises mention existentially-treated unknowns
        cannot be checked here and are deferred; ones whose goal mentions
        them are checked with those applications as existential variables.
        """

        def holds(vc, goal, evars, budget) -> str:
            if evars:
                return entails_exists(vc, evars, (goal,), budget)
            return entails(vc, goal, budget)

        # start at the constraint that failed last round: successive
        # candidates tend to trip over the same few constraints, and a
        # single failure is enough to refine
        order = list(range(last_fail[0], len(constraints)))
        order += list(range(last_fail[0]))
        for i in order:
            c = constraints[i]
            left = max(1, int((deadline - time.monotonic()) * 1000))
            per = min(3000, left)
            cons = tuple(_apply_sol_prop(p, sol) for p in c.vc.cons)
            goal = _apply_sol_prop(c.goal, sol)
            evars = c.evars
            if existential:
                if any(set(prop_unknowns(p)) & existential for p in cons):
                    continue  # deferred to the second stage
                if set(prop_unknowns(goal)) & existential:
                    table: dict[tuple, Var] = {}
                    goal = _sk_prop(goal, existential, table)
                    evars = evars + tuple(v.name for v in table.values())
            vc = VC(c.vc.vars, cons)
            res = holds(vc, goal, evars, per)
            if res == "unknown" and left > per:
                # an inconclusive quick check gets one generous retry
                res = holds(vc, goal, evars, min(4 * per, left))
            if res != "yes":
                last_fail[0] = i
                cex = counterexample(vc, goal, evars, per)
                if _DEBUG:
                    print(f"[cegis] constraint {i} fails ({res}); cex={cex}; "
                          f"sol={{{', '.join(f'{u}: {b}' for u, (_, b) in sorted(sol.items()))}}}")
                return False, (i, cex) if cex is not None else None
        return True, None

    # Coefficients are searched in a widening ladder of magnitude bounds:
    # small bounds keep the quantifier-free queries fast, and an unsat
    # answer under a bound only widens the bound rather than concluding.
    bounds: list[Optional[int]] = [4, 16, None]

    def group_sum(sol, us) -> int:
        total = 0
        for u in us:
            params, body = sol[u]
            for c in _poly_coeffs_of(body, params).values():
                total += abs(c)
        return total

    def pins_for(sol, us) -> dict[str, int]:
        pins = {}
        for u in us:
            params, body = sol[u]
            coeffs = _poly_coeffs_of(body, params)
            for cname, expo in zip(coeff_names[u], monos[u]):
                pins[cname] = coeffs.get(expo, 0)
        return pins

    def add_point(failure) -> Optional[SolveResult]:
        if failure is None or time.monotonic() > deadline:
            return SolveResult("timeout" if time.monotonic() > deadline else "unknown",
                               detail="could not refine a candidate model")
        i, cex = failure
        pt = {v: max(0, cex.get(v, 0)) for v in syn_cons[i].vc.vars}
        if pt in points[i]:
            return SolveResult("unknown", detail="refinement made no progress")
        points[i].append(pt)
        return None

    bi = 0
    for _ in range(32):
        status, rest = synth(bounds[bi])
        if status == "unsat":
            if bounds[bi] is not None:
                bi += 1
                continue
            return SolveResult("unsat")
        if status == "timeout":
            return SolveResult("timeout")
        if status != "sat":
            return SolveResult("unknown", detail=status)
        sol = extract(parse_model(rest))
        if sol is None:
            return SolveResult("inexpressible", detail="non-integral coefficient")
        ok, failure = verify(sol)
        if ok:
            break
        err = add_point(failure)
        if err is not None:
            return err
    else:
        return SolveResult("unknown", detail="refinement did not converge")

    # Minimise the total coefficient magnitude to prefer the simplest
    # (and in practice the most general) solution: first over the named
    # group, then over the rest with that group pinned.  The cap descends
    # from the found solution; an unsat answer proves minimality, since a
    # solution under a smaller cap would also satisfy the larger one.
    if _DEBUG:
        print("[cegis] converged; minimising")

    def minimise(best, us, pins):
        cap = group_sum(best, us) - 1
        while cap >= 0:
            if time.monotonic() > deadline:
                break
            improved = False
            for _ in range(8):
                status, rest = synth(bounds[bi], cap, us, pins)
                if status != "sat":
                    return best
                cand = extract(parse_model(rest))
                if cand is None:
                    return best
                ok, failure = verify(cand)
                if ok:
                    best, improved = cand, True
                    break
                if add_point(failure) is not None:
                    return best
            if not improved:
                break
            cap = group_sum(best, us) - 1
        return best

    first = sorted(u for u in unknowns if u in set(minimise_first))
    others = sorted(u for u in unknowns if u not in set(first))
    if first:
        sol = minimise(sol, first, {})
    if others:
        sol = minimise(sol, others, pins_for(sol, first))
    return SolveResult("sat", sol)


def _smt_int(v: int) -> str:
    return str(v) if v >= 0 else f"(- {-v})"


def _is_numeral(s: str) -> bool:
    t = s.strip()
    if t.startswith("(-") and t.endswith(")"):
        t = t[2:-1].strip()
    return t.lstrip("-").isdigit()


def _poly_coeffs_of(body: Arith, params: list[str]) -> dict[tuple[int, ...], int]:
    poly = sexp_to_poly(_arith_sexp(body), params)
    return {} if poly is None else {e: int(c) for e, c in poly.items()}


def _arith_sexp(e: Arith):
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        return ["+", _arith_sexp(e.left), _arith_sexp(e.right)]
    if isinstance(e, Sub):
        return ["-", _arith_sexp(e.left), _arith_sexp(e.right)]
    if isinstance(e, Mul):
        return ["*", _arith_sexp(e.left), _arith_sexp(e.right)]
    raise ValueError(f"not a closed polynomial: {e!r}")


def solve_poly(
    constraints: list[ArithConstraint],
    unknowns: dict[str, int],
    degree: int = 1,
    logic: str = "real",
    timeout_ms: int | None = None,
    primary: Optional[set[str]] = None,
    transitivity: bool = True,
) -> SolveResult:
    """Solve for each unknown a polynomial of bounded degree in its arguments.

    With logic="real" (the relaxed encoding) the search is
    counterexample-guided: candidates come from quantifier-free queries over
    sampled instances and are verified against the quantified constraints.
    With logic="int" the quantified constraints are handed to the solver
    directly over integer coefficients.

    Solutions are canonicalised by minimising the total coefficient
    magnitude of the `primary` unknowns first (all unknowns if None) and
    then of the rest with the primary part pinned.
    """
    if timeout_ms is None:
        timeout_ms = _TIMEOUT[0]
    if logic == "real":
        t0 = time.monotonic()
        head = min(3000, timeout_ms)
        direct = _solve_poly_direct(constraints, unknowns, degree, head, primary)
        if direct.status in ("sat", "unsat"):
            return direct
        left = timeout_ms - int((time.monotonic() - t0) * 1000)
        if left <= 0:
            return SolveResult("timeout")
        return _solve_poly_cegis(constraints, unknowns, degree, left, primary,
                                 transitivity=transitivity)
    return _solve_poly_direct(constraints, unknowns, degree, timeout_ms, primary)


def _solve_poly_direct(
    constraints: list[ArithConstraint],
    unknowns: dict[str, int],
    degree: int,
    timeout_ms: int,
    primary: Optional[set[str]] = None,
) -> SolveResult:
    """Hand the quantified constraints to the solver over integer coefficients.

    Coefficients are searched in a widening ladder of magnitude bounds:
    small bounds keep the quantified queries tractable, and an unsat answer
    under a bound only widens the bound rather than concluding.
    """
    deadline = time.monotonic() + timeout_ms / 1000.0
    monos = {u: monomials(n, degree) for u, n in unknowns.items()}
    coeff_names = {
        u: [f"{u}_c{i}" for i in range(len(monos[u]))] for u in unknowns
    }

    def unk(e: Unknown) -> str:
        args = [smt_arith(a, unk) for a in e.args]
        terms = []
        for cname, expo in zip(coeff_names[e.name], monos[e.name]):
            t = cname
            for a, k in zip(args, expo):
                for _ in range(k):
                    t = f"(* {t} {a})"
            terms.append(t)
        if len(terms) == 1:
            return terms[0]
        return f"(+ {' '.join(terms)})"

    base = ["(set-logic ALL)"]
    for u in sorted(unknowns):
        for cname in coeff_names[u]:
            base.append(f"(declare-const {cname} Int)")
    for c in constraints:
        base.append(_constraint_assert(c, unk))

    def run_with(cap: Optional[int], group: Optional[list[str]] = None,
                 pins: Optional[dict[str, int]] = None,
                 bound: Optional[int] = None):
        lines = list(base)
        if bound is not None:
            for u in sorted(unknowns):
                for cname in coeff_names[u]:
                    lines.append(
                        f"(assert (and (>= {cname} (- {bound})) (<= {cname} {bound})))")
        if pins:
            for cname, v in pins.items():
                lines.append(f"(assert (= {cname} {_smt_int(v)}))")
        if cap is not None:
            sums = []
            for u in (group if group is not None else sorted(unknowns)):
                for cname in coeff_names[u]:
                    lines.append(f"(declare-const {cname}_a Int)")
                    lines.append(f"(assert (>= {cname}_a {cname}))")
                    lines.append(f"(assert (>= {cname}_a (- {cname})))")
                    sums.append(f"{cname}_a")
            total = sums[0] if len(sums) == 1 else f"(+ {' '.join(sums)})"
            lines.append(f"(assert (<= {total} {cap}))")
        lines += ["(check-sat)", "(get-model)"]
        left = int((deadline - time.monotonic()) * 1000)
        if left <= 0:
            return "timeout", ""
        return run_script("\n".join(lines) + "\n", left)

    ladder: list[Optional[int]] = [2, 16, None]
    bi = 0
    while True:
        status, rest = run_with(None, bound=ladder[bi])
        if status == "unsat" and ladder[bi] is not None:
            bi += 1
            continue
        break
    if status == "timeout":
        return SolveResult("timeout")
    if status == "unsat":
        return SolveResult("unsat")
    if status != "sat":
        return SolveResult("unknown", detail=status)
    model = parse_model(rest)

    # Descend on the total coefficient magnitude to prefer the simplest
    # (and in practice the most general) solution: first over the primary
    # unknowns, then over the rest with the primary part pinned.
    def model_coeff(model, cname) -> Optional[int]:
        if cname not in model:
            return 0
        val = _num_value(model[cname][1])
        return int(val) if val.denominator == 1 else None

    def group_sum(model, us) -> Optional[int]:
        total = 0
        for u in us:
            for cname in coeff_names[u]:
                v = model_coeff(model, cname)
                if v is None:
                    return None
                total += abs(v)
        return total

    prim = sorted(u for u in unknowns if primary is None or u in primary)
    others = sorted(u for u in unknowns if u not in set(prim))
    for us, pinned in ((prim, []), (others, prim)):
        if not us:
            continue
        pins = {}
        for u in pinned:
            for cname in coeff_names[u]:
                v = model_coeff(model, cname)
                if v is not None:
                    pins[cname] = v
        cap = group_sum(model, us)
        for _ in range(24):
            if not cap or time.monotonic() > deadline:
                break
            status, rest = run_with(cap - 1, us, pins, bound=ladder[bi])
            if status != "sat":
                break
            best = parse_model(rest)
            nxt = group_sum(best, us)
            if nxt is None:
                break
            model, cap = best, nxt

    solution: dict[str, tuple[list[str], Arith]] = {}
    for u, n in sorted(unknowns.items()):
        coeffs: dict[tuple[int, ...], int] = {}
        for cname, expo in zip(coeff_names[u], monos[u]):
            if cname not in model:
                continue
            val = _num_value(model[cname][1])
            if val.denominator != 1:
                return SolveResult("inexpressible", detail=f"{u} has no integral value")
            if val != 0:
                coeffs[expo] = int(val)
        params = [Var(f"{u}_p{i}") for i in range(n)]
        solution[u] = ([v.name for v in params], poly_arith(coeffs, params))
    return SolveResult("sat", solution)


def solve_uif(
    constraints: list[ArithConstraint],
    unknowns: dict[str, int],
    degree: int = 1,
    timeout_ms: int | None = None,
) -> SolveResult:
    """Solve with unknowns as uninterpreted integer functions.

    The solver is free to answer with any interpretation; anything that is
    not a polynomial of the bounded degree (if-then-else, division, ...) is
    reported as inexpressible.
    """

    def unk(e: Unknown) -> str:
        if not e.args:
            return e.name
        args = " ".join(smt_arith(a, unk) for a in e.args)
        return f"({e.name} {args})"

    lines = ["(set-logic ALL)"]
    for u, n in sorted(unknowns.items()):
        doms = " ".join(["Int"] * n)
        lines.append(f"(declare-fun {u} ({doms}) Int)")
    for c in constraints:
        lines.append(_constraint_assert(c, unk))
    lines.append("(check-sat)")
    lines.append("(get-model)")
    status, rest = run_script("\n".join(lines) + "\n", timeout_ms)
    if status == "timeout":
        return SolveResult("timeout")
    if status == "unsat":
        return SolveResult("unsat")
    if status != "sat":
        return SolveResult("unknown", detail=status)
    model = parse_model(rest)
    solution: dict[str, tuple[list[str], Arith]] = {}
    for u, n in sorted(unknowns.items()):
        if u not in model:
            params = [f"{u}_p{i}" for i in range(n)]
            solution[u] = (params, Const(0))
            continue
        params, body = model[u]
        poly = sexp_to_poly(body, params)
        if poly is None:
            return SolveResult("inexpressible", detail=f"{u} is not a polynomial")
        if any(sum(e) > degree for e in poly):
            return SolveResult("inexpressible", detail=f"{u} exceeds degree {degree}")
        if any(c.denominator != 1 for c in poly.values()):
            return SolveResult("inexpressible", detail=f"{u} has fractional coefficients")
        icoeffs = {e: int(c) for e, c in poly.items()}
        solution[u] = (params, poly_arith(icoeffs, [Var(p) for p in params]))
    return SolveResult("sat", solution)
