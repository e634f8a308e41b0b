"""Subtyping of refined session types.

`subtype` implements the algorithmic judgment with a closure environment for
loop detection.  Type names and structural constructors are made to
alternate first (`internal_rename`), so every recursion point passes through
a name/name pair where a closure can be recorded.  On revisiting a name pair
the recorded closure is replayed as a forall/exists entailment (st_def); new
name pairs are unfolded (st_expd) up to a bound.

Two discharge modes:

  - eager: every arithmetic premise is checked immediately with the solver
    (used by the typechecker and for ground queries);
  - batch: premises are collected as constraints over index unknowns (used
    by stage-2 inference).

`partial_subtype` is the refinement-free approximation used to prune
structural candidates during stage-1 inference; it treats unknowns as
wildcards and answers success / reduced / failure.

`simulation` is an independent bounded oracle for the declarative
definition on closed types, used to cross-check `subtype` in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .smt import ArithConstraint, entails, entails_exists
from .syntax import (
    Arith, BOT, Cmp, Const, Implies, Lolli, One, Or, Plus, Prop, SessionType,
    Signature, TOP, Tensor, TpAssert, TpAssume, TpExists, TpForall, TpName,
    TpUnknown, TypeDef, VC, Var, With, conj, eval_prop, fresh_name,
    subst_arith, subst_prop, subst_type, type_vars,
)

# ---------------------------------------------------------------------------
# Internal renaming


def internal_rename(sig: Signature) -> Signature:
    """Hoist structural subexpressions into fresh %-definitions.

    In the result every child of a structural constructor in a definition
    body is a type-name instance, so unfolding alternates between names and
    structure.  The original names keep their meaning.
    """
    out = Signature(dict(sig.type_defs), dict(sig.decls), dict(sig.defs), dict(sig.positions))
    counter = [0]

    def hoist_child(t: SessionType, scope: tuple[str, ...]) -> SessionType:
        if isinstance(t, TpName):
            return t
        params = tuple(v for v in scope if v in type_vars(t))
        name = f"%{counter[0]}"
        counter[0] += 1
        body = hoist(t, params)
        out.type_defs[name] = TypeDef(name, params, TOP, body)
        return TpName(name, tuple(Var(v) for v in params))

    def hoist(t: SessionType, scope: tuple[str, ...]) -> SessionType:
        if isinstance(t, (One, TpName, TpUnknown)):
            return t
        if isinstance(t, Plus):
            return Plus(tuple((l, hoist_child(a, scope)) for l, a in t.branches))
        if isinstance(t, With):
            return With(tuple((l, hoist_child(a, scope)) for l, a in t.branches))
        if isinstance(t, TpAssert):
            return TpAssert(t.phi, hoist_child(t.cont, scope))
        if isinstance(t, TpAssume):
            return TpAssume(t.phi, hoist_child(t.cont, scope))
        if isinstance(t, TpExists):
            return TpExists(t.var, hoist_child(t.cont, scope + (t.var,)))
        if isinstance(t, TpForall):
            return TpForall(t.var, hoist_child(t.cont, scope + (t.var,)))
        if isinstance(t, Tensor):
            return Tensor(hoist_child(t.left, scope), hoist_child(t.right, scope))
        return Lolli(hoist_child(t.left, scope), hoist_child(t.right, scope))

    for name in list(sig.type_defs):
        d = sig.type_defs[name]
        out.type_defs[name] = TypeDef(name, d.params, d.constraint, hoist(d.body, d.params))
    return out


# Optional sink receiving a line per subtyping step (--trace-subtyping).
TRACE_SINK: Optional[Callable[[str], None]] = None

_RENAMED: dict[int, Signature] = {}


def renamed(sig: Signature) -> Signature:
    key = id(sig)
    if key not in _RENAMED:
        _RENAMED[key] = internal_rename(sig)
    return _RENAMED[key]


# ---------------------------------------------------------------------------
# Full subtyping


@dataclass(frozen=True)
class Closure:
    vars: tuple[str, ...]
    cons: tuple[Prop, ...]
    lname: str
    largs: tuple[Arith, ...]
    rname: str
    rargs: tuple[Arith, ...]


@dataclass
class SubtypeResult:
    ok: bool
    reason: str = ""
    obligations: list[ArithConstraint] = field(default_factory=list)


def _st_def_parts(vc: VC, cl: Closure, largs, rargs):
    ren = {v: Var(fresh_name(v.replace("'", "_") + "_r")) for v in cl.vars}
    evars = tuple(ren[v].name for v in cl.vars)
    props = [subst_prop(p, ren) for p in cl.cons]
    for old, new in zip(cl.largs, largs):
        props.append(Cmp("=", subst_arith(old, ren), new))
    for old, new in zip(cl.rargs, rargs):
        props.append(Cmp("=", subst_arith(old, ren), new))
    return evars, tuple(props)


def subtype(
    sig: Signature,
    vc: VC,
    a: SessionType,
    b: SessionType,
    mode: str = "eager",
    expand_depth: int = 2,
    trace: Optional[list[str]] = None,
) -> SubtypeResult:
    """Decide/collect the premises of a <: b under vc.

    In eager mode ok=True means the subtyping holds (all premises were
    discharged).  In batch mode ok=True means the structure matched and
    obligations carries the collected arithmetic premises.
    """
    rsig = renamed(sig)
    res = SubtypeResult(True)

    def note(msg: str):
        if trace is not None:
            trace.append(msg)
        if TRACE_SINK is not None:
            TRACE_SINK(msg)

    def fail(vc: VC, why: str) -> bool:
        # st_bot: anything holds in a contradictory context
        if mode == "eager" and entails(vc, BOT) == "yes":
            note(f"st_bot discharges: {why}")
            return True
        res.reason = why
        return False

    def oblige(vc: VC, goal: Prop, evars: tuple[str, ...] = ()) -> bool:
        if mode == "batch":
            res.obligations.append(ArithConstraint(vc, goal, evars))
            return True
        if evars:
            ok = entails_exists(vc, evars, (goal,)) == "yes"
        else:
            ok = entails(vc, goal) == "yes"
        if not ok:
            from .pretty import pp_prop
            res.reason = f"entailment failed: {pp_prop(goal)}"
        return ok

    def go(vc: VC, a: SessionType, b: SessionType, gamma: tuple[Closure, ...]) -> bool:
        from .pretty import pp_type
        note(f"{pp_type(a)} <: {pp_type(b)}")
        if isinstance(a, TpName) and isinstance(b, TpName):
            if a.name == b.name and a.args == b.args:
                note("  st_refl (identical)")
                return True
            if mode == "eager" and a.name == b.name:
                # st_refl: provably equal index lists suffice
                eqs = conj([Cmp("=", x, y) for x, y in zip(a.args, b.args)])
                if entails(vc, eqs) == "yes":
                    note("  st_refl")
                    return True
            matches = [cl for cl in gamma if cl.lname == a.name and cl.rname == b.name]
            if mode == "eager":
                for cl in reversed(matches):
                    evars, props = _st_def_parts(vc, cl, a.args, b.args)
                    if entails_exists(vc, evars, props) == "yes":
                        note("  st_def")
                        return True
                if len(matches) >= expand_depth:
                    return fail(vc, f"recursion bound reached at {a.name} <: {b.name}")
            else:
                if matches:
                    if a.name == b.name:
                        # st_refl: the same definition with equal index lists
                        # is always a subtype of itself.
                        note("  st_refl (emitted)")
                        eqs = [Cmp("=", x, y) for x, y in zip(a.args, b.args)]
                        return oblige(vc, conj(eqs))
                    cl = matches[-1]
                    evars, props = _st_def_parts(vc, cl, a.args, b.args)
                    note("  st_def (emitted)")
                    return oblige(vc, conj(list(props)), evars)
            note("  st_expd")
            cl = Closure(vc.vars, vc.cons, a.name, a.args, b.name, b.args)
            return go(vc, rsig.unfold(a), rsig.unfold(b), gamma + (cl,))
        if isinstance(a, TpName):
            return go(vc, rsig.unfold(a), b, gamma)
        if isinstance(b, TpName):
            return go(vc, a, rsig.unfold(b), gamma)
        if isinstance(a, TpUnknown) or isinstance(b, TpUnknown):
            raise ValueError("structural unknown reached full subtyping")
        if isinstance(a, Plus) and isinstance(b, Plus):
            extra = set(a.labels()) - set(b.labels())
            if extra:
                return fail(vc, f"+ label {sorted(extra)[0]} missing on the right")
            return all(go(vc, ta, b.branch(l), gamma) for l, ta in a.branches)
        if isinstance(a, With) and isinstance(b, With):
            extra = set(b.labels()) - set(a.labels())
            if extra:
                return fail(vc, f"& label {sorted(extra)[0]} missing on the left")
            return all(go(vc, a.branch(l), tb, gamma) for l, tb in b.branches)
        if isinstance(a, Tensor) and isinstance(b, Tensor):
            return go(vc, a.left, b.left, gamma) and go(vc, a.right, b.right, gamma)
        if isinstance(a, Lolli) and isinstance(b, Lolli):
            return go(vc, b.left, a.left, gamma) and go(vc, a.right, b.right, gamma)
        if isinstance(a, One) and isinstance(b, One):
            return True
        if isinstance(a, TpAssert) and isinstance(b, TpAssert):
            if not oblige(vc, Implies(a.phi, b.phi)):
                return fail(vc.push_con(a.phi), res.reason)
            return go(vc.push_con(a.phi), a.cont, b.cont, gamma)
        if isinstance(a, TpAssume) and isinstance(b, TpAssume):
            if not oblige(vc, Implies(b.phi, a.phi)):
                return fail(vc.push_con(b.phi), res.reason)
            return go(vc.push_con(b.phi), a.cont, b.cont, gamma)
        if isinstance(a, TpExists) and isinstance(b, TpExists):
            k = fresh_name("_v")
            return go(
                vc.push_var(k),
                subst_type(a.cont, {a.var: Var(k)}),
                subst_type(b.cont, {b.var: Var(k)}),
                gamma,
            )
        if isinstance(a, TpForall) and isinstance(b, TpForall):
            k = fresh_name("_v")
            return go(
                vc.push_var(k),
                subst_type(a.cont, {a.var: Var(k)}),
                subst_type(b.cont, {b.var: Var(k)}),
                gamma,
            )
        from .pretty import pp_type
        return fail(vc, f"constructor mismatch: {pp_type(a)} </: {pp_type(b)}")

    res.ok = go(vc, a, b, ())
    return res


# ---------------------------------------------------------------------------
# Partial subtyping (stage 1)

SUCCESS = "success"
REDUCED = "reduced"
FAILURE = "failure"


def partial_subtype(
    sig: Signature,
    a: SessionType,
    b: SessionType,
    dead_code_allowed: bool = False,
) -> str:
    """Structural subtyping on refinement-stripped types with unknowns.

    Unknowns match anything (result `reduced`); definite constructor
    mismatches are `failure` unless dead_code_allowed hides them.
    """
    state = {"reduced": False}

    def mismatch() -> bool:
        if dead_code_allowed:
            state["reduced"] = True
            return True
        return False

    def go(a: SessionType, b: SessionType, seen: frozenset) -> bool:
        if isinstance(a, TpUnknown) or isinstance(b, TpUnknown):
            state["reduced"] = True
            return True
        if isinstance(a, TpName) and isinstance(b, TpName):
            if a.name == b.name:
                return True
            if (a.name, b.name) in seen:
                return True
            return go(sig.unfold(a), sig.unfold(b), seen | {(a.name, b.name)})
        if isinstance(a, TpName):
            return go(sig.unfold(a), b, seen)
        if isinstance(b, TpName):
            return go(a, sig.unfold(b), seen)
        if isinstance(a, Plus) and isinstance(b, Plus):
            if set(a.labels()) - set(b.labels()):
                return mismatch()
            return all(go(ta, b.branch(l), seen) for l, ta in a.branches)
        if isinstance(a, With) and isinstance(b, With):
            if set(b.labels()) - set(a.labels()):
                return mismatch()
            return all(go(a.branch(l), tb, seen) for l, tb in b.branches)
        if isinstance(a, Tensor) and isinstance(b, Tensor):
            return go(a.left, b.left, seen) and go(a.right, b.right, seen)
        if isinstance(a, Lolli) and isinstance(b, Lolli):
            return go(b.left, a.left, seen) and go(a.right, b.right, seen)
        if isinstance(a, One) and isinstance(b, One):
            return True
        return mismatch()

    ok = go(a, b, frozenset())
    if not ok:
        return FAILURE
    return REDUCED if state["reduced"] else SUCCESS


# ---------------------------------------------------------------------------
# Simulation oracle


def simulation(
    sig: Signature,
    a: SessionType,
    b: SessionType,
    depth: int = 8,
    witness_max: int | None = None,
) -> bool:
    """Bounded check of the declarative type-simulation on closed types.

    Follows the coinductive definition clause by clause, sampling
    quantifier witnesses 0..witness_max (defaulting to the depth).  A True
    answer means "not refuted within the bound".
    """
    if witness_max is None:
        witness_max = depth

    def holds(p: Prop) -> bool:
        return eval_prop(p, {})

    def go(a: SessionType, b: SessionType, depth: int) -> bool:
        if depth <= 0:
            return True
        if isinstance(a, TpName):
            return go(sig.unfold(a), b, depth)
        if isinstance(b, TpName):
            return go(a, sig.unfold(b), depth)
        if isinstance(a, Plus) and isinstance(b, Plus):
            if set(a.labels()) - set(b.labels()):
                return False
            return all(go(ta, b.branch(l), depth - 1) for l, ta in a.branches)
        if isinstance(a, With) and isinstance(b, With):
            if set(b.labels()) - set(a.labels()):
                return False
            return all(go(a.branch(l), tb, depth - 1) for l, tb in b.branches)
        if isinstance(a, Tensor) and isinstance(b, Tensor):
            return go(a.left, b.left, depth - 1) and go(a.right, b.right, depth - 1)
        if isinstance(a, Lolli) and isinstance(b, Lolli):
            return go(b.left, a.left, depth - 1) and go(a.right, b.right, depth - 1)
        if isinstance(a, One) and isinstance(b, One):
            return True
        if isinstance(a, TpAssert) and isinstance(b, TpAssert):
            if not holds(a.phi):
                return True
            return holds(b.phi) and go(a.cont, b.cont, depth - 1)
        if isinstance(a, TpAssume) and isinstance(b, TpAssume):
            if not holds(b.phi):
                return True
            return holds(a.phi) and go(a.cont, b.cont, depth - 1)
        if isinstance(a, TpExists) and isinstance(b, TpExists):
            return all(
                go(
                    subst_type(a.cont, {a.var: Const(i)}),
                    subst_type(b.cont, {b.var: Const(i)}),
                    depth - 1,
                )
                for i in range(witness_max + 1)
            )
        if isinstance(a, TpForall) and isinstance(b, TpForall):
            return all(
                go(
                    subst_type(a.cont, {a.var: Const(i)}),
                    subst_type(b.cont, {b.var: Const(i)}),
                    depth - 1,
                )
                for i in range(witness_max + 1)
            )
        return False

    return go(a, b, depth)
