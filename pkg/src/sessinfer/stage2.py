"""Stage 2 of inference: solving for index expressions.

With structural candidates assigned and bodies reconstructed, the
typechecker is re-run in batch mode: every arithmetic premise becomes a
constraint over the index unknowns (one per index position of each inferred
declaration, plus one per witness hole).  Each unknown additionally gets a
naturality guard: it must be non-negative for all non-negative arguments.

The constraints go to the solver either with polynomial templates of a
bounded degree (real coefficients first, integer fallback) or with
uninterpreted functions whose models must read back as polynomials.  A
returned model is always re-validated by substituting it into every
collected constraint and discharging each one individually; only then is
the assignment accepted.  On any failure the driver pulls the next stage-1
assignment until the search space or the time budget is exhausted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .constraints import gen_constraints, introduce_placeholders
from .reconstruct import HOLE_PREFIX, ReconstructionMismatch, reconstruct_def
from .smt import (
    ArithConstraint, SolveResult, entails, entails_exists, solve_poly, solve_uif,
)
from .stage1 import assign_signature, build_search_space, enumerate_assignments
from .syntax import (
    Add, And, Arith, Top, AssertP, AssumeP, Case, Close, Cmp, Const, Fwd, Implies,
    Impossible, Lolli, Mul, Not, One, Or, Plus, ProcDecl, ProcDef, Process,
    Prop, RecvChan, RecvWitness, SendChan, SendLabel, SendWitness, SessionType,
    Signature, Spawn, Sub, Tensor, TpAssert, TpAssume, TpExists, TpForall,
    TpName, TpUnknown, Unknown, VC, Var, Wait, With, prop_vars, subst_arith,
    subst_prop, type_vars,
)
from .typecheck import BatchDischarge, CheckError, check_def

Solution = dict[str, tuple[list[str], Arith]]


# ---------------------------------------------------------------------------
# Unknown registry

def _reg_arith(e: Arith, reg: dict[str, int]) -> None:
    if isinstance(e, Unknown):
        reg[e.name] = len(e.args)
        for a in e.args:
            _reg_arith(a, reg)
    elif isinstance(e, (Add, Sub, Mul)):
        _reg_arith(e.left, reg)
        _reg_arith(e.right, reg)


def _reg_prop(p: Prop, reg: dict[str, int]) -> None:
    if isinstance(p, Cmp):
        _reg_arith(p.left, reg)
        _reg_arith(p.right, reg)
    elif isinstance(p, Not):
        _reg_prop(p.body, reg)
    elif isinstance(p, (And, Or, Implies)):
        _reg_prop(p.left, reg)
        _reg_prop(p.right, reg)


def _reg_type(t: SessionType, reg: dict[str, int]) -> None:
    if isinstance(t, (TpName, TpUnknown)):
        for a in t.args:
            _reg_arith(a, reg)
    elif isinstance(t, (Plus, With)):
        for _, a in t.branches:
            _reg_type(a, reg)
    elif isinstance(t, (Tensor, Lolli)):
        _reg_type(t.left, reg)
        _reg_type(t.right, reg)
    elif isinstance(t, (TpAssert, TpAssume)):
        _reg_prop(t.phi, reg)
        _reg_type(t.cont, reg)
    elif isinstance(t, (TpExists, TpForall)):
        _reg_type(t.cont, reg)


def registry(constraints: list[ArithConstraint], sig: Signature) -> dict[str, int]:
    """All index unknowns with their arities, from constraints and decls."""
    reg: dict[str, int] = {}
    for c in constraints:
        for p in c.vc.cons:
            _reg_prop(p, reg)
        _reg_prop(c.goal, reg)
    for d in sig.decls.values():
        for _, ty in d.used:
            _reg_type(ty, reg)
        _reg_type(d.offered, reg)
    return reg


def naturality_guards(reg: dict[str, int]) -> list[ArithConstraint]:
    """For each declaration index unknown e: forall args >= 0, e(args) >= 0.

    Witness and instantiation holes are exempt: they already carry a
    non-negativity obligation under their use site's context.
    """
    out = []
    for name, arity in sorted(reg.items()):
        if name.startswith(HOLE_PREFIX):
            continue
        params = tuple(f"_p{i}" for i in range(arity))
        goal = Cmp(">=", Unknown(name, tuple(Var(p) for p in params)), Const(0))
        out.append(ArithConstraint(VC(params), goal))
    return out


# ---------------------------------------------------------------------------
# Applying a solution

def apply_arith(e: Arith, sol: Solution) -> Arith:
    if isinstance(e, Unknown):
        args = [apply_arith(a, sol) for a in e.args]
        if e.name in sol:
            params, body = sol[e.name]
            return subst_arith(body, dict(zip(params, args)))
        return Unknown(e.name, tuple(args))
    if isinstance(e, (Add, Sub, Mul)):
        return type(e)(apply_arith(e.left, sol), apply_arith(e.right, sol))
    return e


def apply_prop(p: Prop, sol: Solution) -> Prop:
    if isinstance(p, Cmp):
        return Cmp(p.op, apply_arith(p.left, sol), apply_arith(p.right, sol))
    if isinstance(p, Not):
        return Not(apply_prop(p.body, sol))
    if isinstance(p, (And, Or, Implies)):
        return type(p)(apply_prop(p.left, sol), apply_prop(p.right, sol))
    return p


def apply_type(t: SessionType, sol: Solution) -> SessionType:
    if isinstance(t, TpName):
        return TpName(t.name, tuple(apply_arith(a, sol) for a in t.args))
    if isinstance(t, TpUnknown):
        return TpUnknown(t.name, tuple(apply_arith(a, sol) for a in t.args))
    if isinstance(t, (Plus, With)):
        return type(t)(tuple((l, apply_type(a, sol)) for l, a in t.branches))
    if isinstance(t, (Tensor, Lolli)):
        return type(t)(apply_type(t.left, sol), apply_type(t.right, sol))
    if isinstance(t, (TpAssert, TpAssume)):
        return type(t)(apply_prop(t.phi, sol), apply_type(t.cont, sol))
    if isinstance(t, (TpExists, TpForall)):
        return type(t)(t.var, apply_type(t.cont, sol))
    return t


def apply_process(p: Process, sol: Solution) -> Process:
    if isinstance(p, (AssertP, AssumeP)):
        return replace(p, phi=apply_prop(p.phi, sol), cont=apply_process(p.cont, sol))
    if isinstance(p, SendWitness):
        e = apply_arith(p.expr, sol) if p.expr is not None else None
        return replace(p, expr=e, cont=apply_process(p.cont, sol))
    if isinstance(p, (SendLabel, SendChan, RecvChan, Wait, RecvWitness)):
        return replace(p, cont=apply_process(p.cont, sol))
    if isinstance(p, Case):
        return Case(p.chan, tuple((l, apply_process(a, sol)) for l, a in p.branches))
    if isinstance(p, Spawn):
        args = tuple(apply_arith(a, sol) for a in p.index_args)
        cont = apply_process(p.cont, sol) if p.cont is not None else None
        return replace(p, index_args=args, cont=cont)
    return p


def apply_signature(sig: Signature, sol: Solution) -> Signature:
    out = Signature(dict(sig.type_defs), {}, {}, dict(sig.positions))
    for name, d in sig.decls.items():
        out.decls[name] = ProcDecl(
            name, d.params, d.constraint,
            tuple((c, apply_type(ty, sol)) for c, ty in d.used),
            d.offered_chan, apply_type(d.offered, sol),
        )
    for name, d in sig.defs.items():
        out.defs[name] = ProcDef(name, d.params, d.offered_chan, d.arg_chans,
                                 apply_process(d.body, sol))
    return out


# ---------------------------------------------------------------------------
# Collection and validation

def collect_arith(sig: Signature) -> list[ArithConstraint]:
    """Re-run the typechecker in batch mode over every definition."""
    out: list[ArithConstraint] = []
    for name, pdef in sig.defs.items():
        bd = BatchDischarge(sig.positions.get(("proc", name)))
        check_def(sig, pdef, bd)
        out.extend(bd.obligations)
    return out


def _constraint_unknowns(c: ArithConstraint) -> set[str]:
    reg: dict[str, int] = {}
    for p in c.vc.cons:
        _reg_prop(p, reg)
    _reg_prop(c.goal, reg)
    return set(reg)


def partition_constraints(
    constraints: list[ArithConstraint],
    reg: dict[str, int],
) -> list[tuple[list[ArithConstraint], dict[str, int]]]:
    """Split into connected components of the shared-unknown graph.

    Ground constraints (no unknowns) are dropped; they are re-checked when
    the final solution is validated.
    """
    parent: dict[str, str] = {u: u for u in reg}

    def find(u: str) -> str:
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    constraints = [c for c in constraints if not isinstance(c.goal, Top)]
    per_con: list[set[str]] = []
    for c in constraints:
        us = _constraint_unknowns(c)
        per_con.append(us)
        us = sorted(us)
        for other in us[1:]:
            parent[find(other)] = find(us[0])
    groups: dict[str, tuple[list[ArithConstraint], dict[str, int]]] = {}
    for u in reg:
        root = find(u)
        groups.setdefault(root, ([], {}))[1][u] = reg[u]
    for c, us in zip(constraints, per_con):
        if us:
            groups[find(next(iter(us)))][0].append(c)
    return [groups[r] for r in sorted(groups)]


def validate_solution(
    constraints: list[ArithConstraint],
    sol: Solution,
    timeout_ms: int,
) -> bool:
    """Substitute the model and discharge every constraint individually."""

    def holds(vc, goal, evars, budget) -> str:
        if evars:
            return entails_exists(vc, evars, (goal,), budget)
        return entails(vc, goal, budget)

    for c in constraints:
        vc = VC(c.vc.vars, tuple(apply_prop(p, sol) for p in c.vc.cons))
        goal = apply_prop(c.goal, sol)
        res = holds(vc, goal, c.evars, min(3000, timeout_ms))
        if res == "unknown":
            # an inconclusive quick check gets one generous retry
            res = holds(vc, goal, c.evars, timeout_ms)
        if res != "yes":
            return False
    return True


# ---------------------------------------------------------------------------
# Parameter pruning

def _rewrite_body(p: Process, sub: dict[str, Arith], drop: dict[str, set[int]]) -> Process:
    if isinstance(p, (AssertP, AssumeP)):
        return replace(p, phi=subst_prop(p.phi, sub), cont=_rewrite_body(p.cont, sub, drop))
    if isinstance(p, SendWitness):
        e = subst_arith(p.expr, sub) if p.expr is not None else None
        return replace(p, expr=e, cont=_rewrite_body(p.cont, sub, drop))
    if isinstance(p, RecvWitness):
        sub2 = {k: v for k, v in sub.items() if k != p.bind}
        return replace(p, cont=_rewrite_body(p.cont, sub2, drop))
    if isinstance(p, (SendLabel, SendChan, RecvChan, Wait)):
        return replace(p, cont=_rewrite_body(p.cont, sub, drop))
    if isinstance(p, Case):
        return Case(p.chan, tuple((l, _rewrite_body(a, sub, drop)) for l, a in p.branches))
    if isinstance(p, Spawn):
        args = [subst_arith(a, sub) for a in p.index_args]
        if p.proc in drop:
            args = [a for i, a in enumerate(args) if i not in drop[p.proc]]
        cont = _rewrite_body(p.cont, sub, drop) if p.cont is not None else None
        return replace(p, index_args=tuple(args), cont=cont)
    return p


def prune_params(sig: Signature, orig_counts: dict[str, int]) -> Signature:
    """Drop invented declaration parameters that the solved types never use.

    The pruned program is an instance (at zero) of the one the solver
    validated, so it stays well typed; every spawn of an affected process
    loses the corresponding index arguments.
    """
    drop: dict[str, set[int]] = {}
    subs: dict[str, dict[str, Arith]] = {}
    for name, orig in orig_counts.items():
        d = sig.decls[name]
        used_vars = prop_vars(d.constraint)
        for _, ty in d.used:
            used_vars |= type_vars(ty)
        used_vars |= type_vars(d.offered)
        dead = {i for i in range(orig, len(d.params)) if d.params[i] not in used_vars}
        if dead:
            drop[name] = dead
            subs[name] = {d.params[i]: Const(0) for i in dead}
    if not drop:
        return sig
    out = Signature(dict(sig.type_defs), {}, {}, dict(sig.positions))
    for name, d in sig.decls.items():
        params = tuple(p for i, p in enumerate(d.params)
                       if i not in drop.get(name, set()))
        out.decls[name] = ProcDecl(name, params, d.constraint, d.used,
                                   d.offered_chan, d.offered)
    for name, f in sig.defs.items():
        params = tuple(p for i, p in enumerate(f.params)
                       if i not in drop.get(name, set()))
        out.defs[name] = ProcDef(name, params, f.offered_chan, f.arg_chans,
                                 _rewrite_body(f.body, subs.get(name, {}), drop))
    return out


# ---------------------------------------------------------------------------
# Driver

@dataclass
class InferOptions:
    strategy: str = "poly"  # poly | uif
    arith: str = "real"  # real | int (first try for poly templates)
    degree: int = 1
    transitivity: bool = True
    budget_ms: int = 60_000
    z3_timeout_ms: int = 10_000


@dataclass
class InferResult:
    status: str  # success | structural | arith | timeout | inexpressible
    message: str = ""
    program: Signature | None = None
    assignment: dict[str, str] = field(default_factory=dict)
    solution: Solution = field(default_factory=dict)
    attempts: int = 0


def infer(sig: Signature, opts: InferOptions | None = None) -> InferResult:
    """Two-stage inference over a program with undeclared processes."""
    if opts is None:
        opts = InferOptions()
    deadline = time.monotonic() + opts.budget_ms / 1000.0
    info = introduce_placeholders(sig)
    undeclared = {name for name, _ in info.owner.values()}
    try:
        tcs, _ = gen_constraints(sig)
    except CheckError as e:
        return InferResult("structural", e.msg)
    space = build_search_space(sig, tcs, info, transitivity=opts.transitivity)
    for u in space.unknowns:
        if not space.candidates[u]:
            return InferResult("structural", f"no structural candidate fits {u}")

    saw_arith = False
    inexpr_msg = None
    last_msg = "no structural assignment fits"
    attempts = 0
    try:
        for asg in enumerate_assignments(sig, space, deadline):
            attempts += 1
            if time.monotonic() > deadline:
                raise TimeoutError("inference budget exceeded")
            assigned = assign_signature(sig, {u: asg[u] for u in info.signature_unknowns})
            try:
                for name in list(assigned.defs):
                    assigned.defs[name] = reconstruct_def(assigned, assigned.defs[name])
                cons = collect_arith(assigned)
            except (ReconstructionMismatch, CheckError) as e:
                last_msg = str(e)
                continue
            reg = registry(cons, assigned)
            cons = cons + naturality_guards(reg)
            budget_left = int((deadline - time.monotonic()) * 1000)
            if budget_left <= 0:
                raise TimeoutError("inference budget exceeded")
            tmo = min(opts.z3_timeout_ms, budget_left)
            if not reg:
                if validate_solution(cons, {}, tmo):
                    res = SolveResult("sat")
                else:
                    res = SolveResult("unsat", detail="a collected premise is not valid")
            else:
                res = SolveResult("sat")
                for gcons, greg in partition_constraints(cons, reg):
                    budget_left = int((deadline - time.monotonic()) * 1000)
                    if budget_left <= 0:
                        raise TimeoutError("inference budget exceeded")
                    tmo = budget_left
                    if opts.strategy == "uif":
                        gres = solve_uif(gcons, greg, opts.degree, tmo)
                    else:
                        decl_unknowns = {u for u in greg
                                         if not u.startswith(HOLE_PREFIX)}
                        gres = solve_poly(gcons, greg, opts.degree, opts.arith,
                                          tmo, primary=decl_unknowns,
                                          transitivity=opts.transitivity)
                    if gres.status != "sat":
                        res = gres
                        break
                    res.solution.update(gres.solution)
            if res.status == "sat":
                if reg and not validate_solution(cons, res.solution, tmo):
                    last_msg = "solver model failed re-validation"
                    continue
                program = apply_signature(assigned, res.solution)
                orig_counts = {n: len(sig.defs[n].params)
                               for n in undeclared if n in sig.defs}
                program = prune_params(program, orig_counts)
                return InferResult("success", program=program, assignment=dict(asg),
                                   solution=res.solution, attempts=attempts)
            if res.status == "unsat":
                saw_arith = True
                last_msg = res.detail or "index constraints are unsatisfiable"
            elif res.status == "inexpressible":
                inexpr_msg = res.detail or "no index solution in the template language"
                last_msg = inexpr_msg
            else:
                last_msg = res.detail or f"solver answered {res.status}"
    except TimeoutError as e:
        # an inexpressibility verdict is a statement about the template
        # language, not about the exhausted search, so it survives a timeout
        if inexpr_msg is not None:
            return InferResult("inexpressible", inexpr_msg, attempts=attempts)
        return InferResult("timeout", str(e), attempts=attempts)
    if time.monotonic() > deadline:
        if inexpr_msg is not None:
            return InferResult("inexpressible", inexpr_msg, attempts=attempts)
        return InferResult("timeout", "inference budget exceeded", attempts=attempts)
    if inexpr_msg is not None:
        return InferResult("inexpressible", inexpr_msg, attempts=attempts)
    if saw_arith:
        return InferResult("arith", last_msg, attempts=attempts)
    return InferResult("structural", last_msg, attempts=attempts)
