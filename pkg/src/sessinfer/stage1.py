"""Stage 1 of inference: structural candidates for type unknowns.

The generated subtyping constraints are first erased to plain structure
(refinements, quantifiers and index arguments dropped).  Transitivity
elimination then removes the intermediate unknowns invented during
generation wherever that is sound:

  - an intermediate with a single bare lower bound is replaced by that
    bound at occurrences where a smaller type keeps every constraint
    (covariant on the left of <:, contravariant on the right); dually for
    a single bare upper bound;
  - an intermediate sandwiched between bare bounds with no other
    occurrences is cut by plain transitivity;
  - internal-choice lower bounds (dually, external-choice upper bounds) on
    the same unknown merge by label union.

Each remaining signature unknown ranges over the signature's type names,
narrower candidates first.  Candidates are pruned per unknown with the
refinement-free partial subtyping, and full assignments are enumerated
depth-first with incremental rechecking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import count

from .constraints import Placeholders, TypeConstraint
from .subtyping import FAILURE, SUCCESS, partial_subtype
from .syntax import (
    Lolli, One, Plus, ProcDecl, ProcDef, SessionType, Signature, TOP, Tensor, TpAssert,
    TpAssume, TpExists, TpForall, TpName, TpUnknown, TypeDef, Unknown, Var,
    With, type_unknowns,
)


# ---------------------------------------------------------------------------
# Erasure

def strip_type(t: SessionType) -> SessionType:
    """Erase refinements, quantifiers and index arguments from a type."""
    if isinstance(t, One):
        return t
    if isinstance(t, TpName):
        return TpName(t.name, ())
    if isinstance(t, TpUnknown):
        return TpUnknown(t.name, ())
    if isinstance(t, Plus):
        return Plus(tuple((l, strip_type(a)) for l, a in t.branches))
    if isinstance(t, With):
        return With(tuple((l, strip_type(a)) for l, a in t.branches))
    if isinstance(t, Tensor):
        return Tensor(strip_type(t.left), strip_type(t.right))
    if isinstance(t, Lolli):
        return Lolli(strip_type(t.left), strip_type(t.right))
    if isinstance(t, (TpAssert, TpAssume, TpExists, TpForall)):
        return strip_type(t.cont)
    raise TypeError(f"not a type: {t!r}")


def strip_signature(sig: Signature, include_internal: bool = False) -> Signature:
    """A signature whose type definitions are erased to plain structure."""
    out = Signature()
    for name, d in sig.type_defs.items():
        if name.startswith("%") and not include_internal:
            continue
        out.type_defs[name] = TypeDef(name, (), TOP, strip_type(d.body))
    return out


def strip_constraints(constraints: list[TypeConstraint]) -> list[tuple[SessionType, SessionType]]:
    return [(strip_type(c.lhs), strip_type(c.rhs)) for c in constraints]


# ---------------------------------------------------------------------------
# Transitivity elimination

def _subst_unknown(t: SessionType, name: str, rep: SessionType) -> SessionType:
    if isinstance(t, TpUnknown):
        return rep if t.name == name else t
    if isinstance(t, (One, TpName)):
        return t
    if isinstance(t, Plus):
        return Plus(tuple((l, _subst_unknown(a, name, rep)) for l, a in t.branches))
    if isinstance(t, With):
        return With(tuple((l, _subst_unknown(a, name, rep)) for l, a in t.branches))
    if isinstance(t, Tensor):
        return Tensor(_subst_unknown(t.left, name, rep), _subst_unknown(t.right, name, rep))
    return Lolli(_subst_unknown(t.left, name, rep), _subst_unknown(t.right, name, rep))


def _polarities(t: SessionType, name: str, pol: int) -> set[int]:
    """Signs (+1 covariant, -1 contravariant) at which unknown `name` occurs."""
    if isinstance(t, TpUnknown):
        return {pol} if t.name == name else set()
    if isinstance(t, (One, TpName)):
        return set()
    if isinstance(t, (Plus, With)):
        out: set[int] = set()
        for _, a in t.branches:
            out |= _polarities(a, name, pol)
        return out
    if isinstance(t, Tensor):
        return _polarities(t.left, name, pol) | _polarities(t.right, name, pol)
    return _polarities(t.left, name, -pol) | _polarities(t.right, name, pol)


def _merge_choices(cs: list[tuple[SessionType, SessionType]]) -> list[tuple[SessionType, SessionType]]:
    """Merge +{..} lower bounds (and &{..} upper bounds) on the same unknown."""
    out: list[tuple[SessionType, SessionType]] = []
    lower_at: dict[str, int] = {}
    upper_at: dict[str, int] = {}
    for lhs, rhs in cs:
        if isinstance(rhs, TpUnknown) and isinstance(lhs, Plus):
            i = lower_at.get(rhs.name)
            if i is not None and isinstance(out[i][0], Plus):
                prev = out[i][0]
                if not set(prev.labels()) & set(lhs.labels()):
                    out[i] = (Plus(prev.branches + lhs.branches), rhs)
                    continue
            lower_at[rhs.name] = len(out)
        elif isinstance(lhs, TpUnknown) and isinstance(rhs, With):
            i = upper_at.get(lhs.name)
            if i is not None and isinstance(out[i][1], With):
                prev = out[i][1]
                if not set(prev.labels()) & set(rhs.labels()):
                    out[i] = (lhs, With(prev.branches + rhs.branches))
                    continue
            upper_at[lhs.name] = len(out)
        out.append((lhs, rhs))
    return out


def transitivity_eliminate(
    cs: list[tuple[SessionType, SessionType]],
    keep: set[str],
) -> list[tuple[SessionType, SessionType]]:
    """Remove intermediate unknowns (those not in `keep`) where sound.

    A lower bound may replace an unknown at covariant-left/contravariant-right
    occurrences; an upper bound dually; a bare-bounded unknown with no other
    occurrences is cut by transitivity.  Runs to a fixpoint interleaved with
    choice merging.
    """

    def bare(t: SessionType) -> str | None:
        return t.name if isinstance(t, TpUnknown) else None

    def step(cs: list[tuple[SessionType, SessionType]]):
        inter = set()
        for lhs, rhs in cs:
            inter |= type_unknowns(lhs) | type_unknowns(rhs)
        inter -= keep
        for u in sorted(inter):
            lowers = [i for i, (l, r) in enumerate(cs) if bare(r) == u]
            uppers = [i for i, (l, r) in enumerate(cs) if bare(l) == u]
            defs = set(lowers) | set(uppers)
            occ: set[tuple[int, int]] = set()  # (constraint index, polarity*side)
            nested: set[int] = set()
            for i, (l, r) in enumerate(cs):
                for p in _polarities(l, u, +1):
                    if not (i in defs and bare(l) == u):
                        occ.add((i, p)); nested.add(i)
                for p in _polarities(r, u, +1):
                    if not (i in defs and bare(r) == u):
                        occ.add((i, -p)); nested.add(i)
            # occ carries +1 where a smaller type is fine (covariant-left or
            # contravariant-right), -1 where a larger one is.
            if len(lowers) == 1 and not uppers:
                i = lowers[0]
                bound = cs[i][0]
                if u in type_unknowns(bound):
                    continue
                if all(p == +1 for _, p in occ) or isinstance(bound, TpUnknown):
                    rest = [c for j, c in enumerate(cs) if j != i]
                    return [
                        (_subst_unknown(l, u, bound), _subst_unknown(r, u, bound))
                        for l, r in rest
                    ]
            if len(uppers) == 1 and not lowers:
                i = uppers[0]
                bound = cs[i][1]
                if u in type_unknowns(bound):
                    continue
                if all(p == -1 for _, p in occ) or isinstance(bound, TpUnknown):
                    rest = [c for j, c in enumerate(cs) if j != i]
                    return [
                        (_subst_unknown(l, u, bound), _subst_unknown(r, u, bound))
                        for l, r in rest
                    ]
            if lowers and uppers and not nested:
                bounds_l = [cs[i][0] for i in lowers]
                bounds_u = [cs[i][1] for i in uppers]
                if any(u in type_unknowns(b) for b in bounds_l + bounds_u):
                    continue
                rest = [c for j, c in enumerate(cs) if j not in defs]
                return rest + [(bl, bu) for bl in bounds_l for bu in bounds_u]
            if (lowers or uppers) and not nested and not (lowers and uppers):
                # one-sided bounds only: the unknown is unconstrained otherwise
                bounds = [cs[i][0] for i in lowers] + [cs[i][1] for i in uppers]
                if any(u in type_unknowns(b) for b in bounds):
                    continue
                return [c for j, c in enumerate(cs) if j not in defs]
        return None

    cs = list(cs)
    while True:
        cs = _merge_choices(cs)
        nxt = step(cs)
        if nxt is None:
            return cs
        cs = nxt


# ---------------------------------------------------------------------------
# Candidate search

@dataclass
class SearchSpace:
    unknowns: list[str]
    candidates: dict[str, list[str]]
    constraints: list[tuple[SessionType, SessionType]] = field(default_factory=list)
    stripped: Signature = field(default_factory=Signature)


def ordered_candidates(stripped: Signature) -> list[str]:
    """Type names, narrower ones first, declaration order breaking ties."""
    names = list(stripped.type_defs)

    def wider_count(c: str) -> int:
        n = 0
        for d in names:
            if d == c:
                continue
            if (partial_subtype(stripped, TpName(c), TpName(d)) == SUCCESS
                    and partial_subtype(stripped, TpName(d), TpName(c)) == FAILURE):
                n += 1
        return n

    return sorted(names, key=lambda c: -wider_count(c))


def build_search_space(
    sig: Signature,
    constraints: list[TypeConstraint],
    info: Placeholders,
    transitivity: bool = True,
) -> SearchSpace:
    """Erase, eliminate intermediates, and prune candidates per unknown.

    With transitivity=False the intermediates survive elimination and join
    the enumeration alongside the signature unknowns; they range over every
    structural subterm of the signature's definitions (each a name of the
    internally renamed signature), while signature unknowns always range
    over the source-level type names.
    """
    cs = strip_constraints(constraints)
    keep = set(info.signature_unknowns)
    if transitivity:
        stripped = strip_signature(sig)
        cs = transitivity_eliminate(cs, keep)
    else:
        from .subtyping import renamed
        stripped = strip_signature(renamed(sig), include_internal=True)
    unknowns = list(info.signature_unknowns)
    if not transitivity:
        extra: set[str] = set()
        for lhs, rhs in cs:
            extra |= type_unknowns(lhs) | type_unknowns(rhs)
        unknowns += sorted(extra - keep)
    cands = ordered_candidates(stripped)
    user = [c for c in cands if not c.startswith("%")]
    space = SearchSpace(unknowns, {}, cs, stripped)
    for u in unknowns:
        keepers = []
        for c in (user if u in keep else cands):
            ok = True
            for lhs, rhs in cs:
                mentioned = (type_unknowns(lhs) | type_unknowns(rhs)) & set(unknowns)
                if mentioned != {u}:
                    continue
                l2 = _subst_unknown(lhs, u, TpName(c))
                r2 = _subst_unknown(rhs, u, TpName(c))
                if partial_subtype(stripped, l2, r2) == FAILURE:
                    ok = False
                    break
            if ok:
                keepers.append(c)
        space.candidates[u] = keepers
    return space


def enumerate_assignments(
    sig: Signature,
    space: SearchSpace,
    deadline: float | None = None,
):
    """Yield full candidate assignments consistent with the constraints.

    Depth-first over the unknowns in order; a partial assignment is cut as
    soon as some constraint over already-assigned unknowns fails the
    partial subtyping.
    """
    stripped = space.stripped
    unknowns = space.unknowns
    uset = set(unknowns)
    relevant: list[list[int]] = [[] for _ in unknowns]
    mentions: list[set[str]] = []
    for i, (lhs, rhs) in enumerate(space.constraints):
        m = (type_unknowns(lhs) | type_unknowns(rhs)) & uset
        mentions.append(m)
        if m:
            last = max(unknowns.index(u) for u in m)
            relevant[last].append(i)

    def apply(t: SessionType, asg: dict[str, str]) -> SessionType:
        for u, c in asg.items():
            t = _subst_unknown(t, u, TpName(c))
        return t

    def go(k: int, asg: dict[str, str]):
        if deadline is not None and time.monotonic() > deadline:
            raise TimeoutError("structural search budget exceeded")
        if k == len(unknowns):
            yield dict(asg)
            return
        u = unknowns[k]
        for c in space.candidates[u]:
            asg[u] = c
            ok = True
            for i in relevant[k]:
                lhs, rhs = space.constraints[i]
                if partial_subtype(stripped, apply(lhs, asg), apply(rhs, asg)) == FAILURE:
                    ok = False
                    break
            if ok:
                yield from go(k + 1, asg)
            del asg[u]

    yield from go(0, {})


# ---------------------------------------------------------------------------
# Applying an assignment

def assign_signature(sig: Signature, asg: dict[str, str]) -> Signature:
    """Replace placeholder unknowns by their assigned type names.

    The declaration gains one fresh universally quantified parameter per
    index position on its argument channels (one degree of freedom per
    input index).  Every index position -- on argument channels and on the
    offered channel alike -- then becomes an index unknown over all of the
    declaration's parameters, to be solved in stage 2.  Spawn sites supply
    the invented parameters implicitly; reconstruction fills them in with
    per-site unknowns.
    """
    out = Signature(dict(sig.type_defs), {}, dict(sig.defs), dict(sig.positions))
    for name, d in sig.decls.items():
        arity_of = {}
        for _, ty in d.used + ((d.offered_chan, d.offered),):
            if isinstance(ty, TpUnknown) and ty.name in asg:
                arity_of[ty.name] = len(sig.type_defs[asg[ty.name]].params)
        slots = sum(arity_of.get(ty.name, 0)
                    for _, ty in d.used if isinstance(ty, TpUnknown))
        params = list(d.params)
        i = 0
        while len(params) < len(d.params) + slots:
            i += 1
            if f"i{i}" not in params:
                params.append(f"i{i}")
        pargs = tuple(Var(p) for p in params)

        def fill(t: SessionType) -> SessionType:
            if isinstance(t, TpUnknown) and t.name in asg:
                args = tuple(Unknown(f"{t.name}.{j}", pargs)
                             for j in range(arity_of[t.name]))
                return TpName(asg[t.name], args)
            return t

        used = tuple((c, fill(ty)) for c, ty in d.used)
        offered = fill(d.offered)
        ptuple = tuple(params)
        out.decls[name] = ProcDecl(name, ptuple, d.constraint, used, d.offered_chan, offered)
        if ptuple != d.params and name in out.defs:
            pdef = out.defs[name]
            out.defs[name] = ProcDef(name, ptuple, pdef.offered_chan, pdef.arg_chans, pdef.body)
    return out
