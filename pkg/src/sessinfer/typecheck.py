"""Typechecking of fully annotated processes.

The checker walks a process with the offered channel's type and a linear
context of consumed channels, unfolding type names on demand.  Arithmetic
premises are discharged through a Discharge object:

  - EagerDischarge asks the solver immediately and raises on failure
    (the `check` command);
  - BatchDischarge collects premises as constraints over index unknowns
    (stage-2 inference re-runs the same walk over reconstructed bodies).

Refinement actions must be explicit in the process: an assert/assume for
every ?{phi}/!{phi} exposed, a witness send/receive for every quantifier.
`impossible` is accepted only where the accumulated constraints are
contradictory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .smt import ArithConstraint, entails
from .subtyping import subtype
from .syntax import (
    Arith, AssertP, AssumeP, BOT, Case, Close, Cmp, Const, Fwd, Impossible,
    Lolli, One, Plus, Process, ProcDecl, ProcDef, Prop, RecvChan, RecvWitness,
    SendChan, SendLabel, SendWitness, SessionType, Signature, SourceError,
    Spawn, Tensor, TpAssert, TpAssume, TpExists, TpForall, TpName, TpUnknown,
    VC, Var, Wait, With, arith_vars, arith_unknowns, fresh_name, prop_vars,
    subst_prop, subst_type,
)


class CheckError(SourceError):
    def __init__(self, msg: str, pos=None):
        super().__init__("type", msg, pos)


class Discharge:
    def require(self, vc: VC, goal: Prop, why: str) -> None:
        raise NotImplementedError

    def require_subtype(self, sig: Signature, vc: VC, a: SessionType, b: SessionType,
                        why: str) -> None:
        raise NotImplementedError

    def require_absurd(self, vc: VC, why: str) -> None:
        self.require(vc, BOT, why)


class EagerDischarge(Discharge):
    def __init__(self, pos=None):
        self.pos = pos

    def require(self, vc, goal, why):
        if entails(vc, goal) != "yes":
            from .pretty import pp_prop
            raise CheckError(f"{why}: cannot prove {pp_prop(goal)}", self.pos)

    def require_subtype(self, sig, vc, a, b, why):
        r = subtype(sig, vc, a, b, mode="eager")
        if not r.ok:
            from .pretty import pp_type
            raise CheckError(
                f"{why}: {pp_type(a)} is not a subtype of {pp_type(b)} ({r.reason})",
                self.pos,
            )


class BatchDischarge(Discharge):
    def __init__(self, pos=None):
        self.pos = pos
        self.obligations: list[ArithConstraint] = []

    def require(self, vc, goal, why):
        self.obligations.append(ArithConstraint(vc, goal))

    def require_subtype(self, sig, vc, a, b, why):
        r = subtype(sig, vc, a, b, mode="batch")
        if not r.ok:
            from .pretty import pp_type
            raise CheckError(
                f"{why}: {pp_type(a)} is not a subtype of {pp_type(b)} ({r.reason})",
                self.pos,
            )
        self.obligations.extend(r.obligations)


@dataclass
class _St:
    """Checker state threaded through the walk."""

    sig: Signature
    discharge: Discharge
    pos: tuple[int, int] | None
    allow_unknowns: bool = False


def _err(st: _St, msg: str):
    raise CheckError(msg, st.pos)


def _scope_arith(st: _St, vc: VC, e: Arith, what: str) -> None:
    bad = arith_vars(e) - set(vc.vars)
    if bad:
        _err(st, f"{what}: index variable {sorted(bad)[0]} not in scope")
    if not st.allow_unknowns and arith_unknowns(e):
        _err(st, f"{what}: unsolved index unknown")


def _scope_prop(st: _St, vc: VC, p: Prop, what: str) -> None:
    bad = prop_vars(p) - set(vc.vars)
    if bad:
        _err(st, f"{what}: index variable {sorted(bad)[0]} not in scope")


def _peel_absurd(st: _St, vc: VC, t: SessionType, provider_view: bool) -> VC:
    """Collect the assumptions a branch may make before `impossible`.

    For a consumed channel (provider_view=False) these are leading ?{phi}
    prefixes and ?n binders; for the offered channel, !{phi} and !n.
    """
    t = st.sig.unfold(t)
    while True:
        if isinstance(t, TpAssert) and not provider_view:
            vc = vc.push_con(t.phi)
            t = st.sig.unfold(t.cont)
        elif isinstance(t, TpAssume) and provider_view:
            vc = vc.push_con(t.phi)
            t = st.sig.unfold(t.cont)
        elif isinstance(t, TpExists) and not provider_view:
            k = fresh_name("_v")
            vc = vc.push_var(k)
            t = st.sig.unfold(subst_type(t.cont, {t.var: Var(k)}))
        elif isinstance(t, TpForall) and provider_view:
            k = fresh_name("_v")
            vc = vc.push_var(k)
            t = st.sig.unfold(subst_type(t.cont, {t.var: Var(k)}))
        else:
            return vc


def check_process(
    st: _St,
    vc: VC,
    delta: dict[str, SessionType],
    body: Process,
    och: str,
    oty: SessionType,
) -> None:
    sig = st.sig

    def lookup(c: str) -> SessionType:
        if c == och:
            _err(st, f"channel {c} is offered here, not consumed")
        if c not in delta:
            _err(st, f"channel {c} is not available")
        return delta[c]

    if isinstance(body, Impossible):
        st.discharge.require_absurd(vc, "impossible branch")
        return

    if isinstance(body, Close):
        if body.chan != och:
            _err(st, f"close on consumed channel {body.chan}")
        if not isinstance(sig.unfold(oty), One):
            _err(st, f"close on {och}, whose type is not 1")
        if delta:
            _err(st, f"close with unconsumed channels: {', '.join(sorted(delta))}")
        return

    if isinstance(body, Wait):
        t = sig.unfold(lookup(body.chan))
        if not isinstance(t, One):
            _err(st, f"wait on {body.chan}, whose type is not 1")
        rest = dict(delta)
        del rest[body.chan]
        check_process(st, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, Fwd):
        if body.offered == och:
            cons = body.consumed
        elif body.consumed == och:
            cons = body.offered
        else:
            _err(st, "forward must involve the offered channel")
        if set(delta) != {cons}:
            _err(st, f"forward must consume exactly the remaining channel, have {sorted(delta)}")
        st.discharge.require_subtype(sig, vc, delta[cons], oty, "forward")
        return

    if isinstance(body, SendLabel):
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, Plus):
                _err(st, f"label send on {och} needs an internal choice, got its type")
            if body.label not in t.labels():
                _err(st, f"label {body.label} is not offered by the type of {och}")
            check_process(st, vc, delta, body.cont, och, t.branch(body.label))
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, With):
                _err(st, f"label send on consumed {body.chan} needs an external choice")
            if body.label not in t.labels():
                _err(st, f"label {body.label} is not accepted by {body.chan}")
            rest = dict(delta)
            rest[body.chan] = t.branch(body.label)
            check_process(st, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, Case):
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, With):
                _err(st, f"case on offered {och} needs an external choice")
            provider = True
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, Plus):
                _err(st, f"case on consumed {body.chan} needs an internal choice")
            provider = False
        have = dict(body.branches)
        extra = set(have) - set(t.labels())
        if extra:
            _err(st, f"case branch {sorted(extra)[0]} is not a label of {body.chan}'s type")
        for lab in t.labels():
            if lab not in have:
                _err(st, f"case on {body.chan} is missing branch {lab}")
            cont_ty = t.branch(lab)
            arm = have[lab]
            if isinstance(arm, Impossible):
                vcb = _peel_absurd(st, vc, cont_ty, provider)
                st.discharge.require_absurd(vcb, f"impossible branch {lab}")
                continue
            if provider:
                check_process(st, vc, dict(delta), arm, och, cont_ty)
            else:
                rest = dict(delta)
                rest[body.chan] = cont_ty
                check_process(st, vc, rest, arm, och, oty)
        return

    if isinstance(body, SendChan):
        pty = lookup(body.payload)
        rest = dict(delta)
        del rest[body.payload]
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, Tensor):
                _err(st, f"channel send on {och} needs a tensor type")
            st.discharge.require_subtype(sig, vc, pty, t.left, f"send {body.payload} on {och}")
            check_process(st, vc, rest, body.cont, och, t.right)
        else:
            t = sig.unfold(rest.get(body.chan) if body.chan in rest else lookup(body.chan))
            if not isinstance(t, Lolli):
                _err(st, f"channel send on consumed {body.chan} needs a lolli type")
            st.discharge.require_subtype(sig, vc, pty, t.left, f"send {body.payload} on {body.chan}")
            rest[body.chan] = t.right
            check_process(st, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, RecvChan):
        if body.bind == och or body.bind in delta:
            _err(st, f"received channel name {body.bind} is already in use")
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, Lolli):
                _err(st, f"receive on offered {och} needs a lolli type")
            rest = dict(delta)
            rest[body.bind] = t.left
            check_process(st, vc, rest, body.cont, och, t.right)
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, Tensor):
                _err(st, f"receive on consumed {body.chan} needs a tensor type")
            rest = dict(delta)
            rest[body.bind] = t.left
            rest[body.chan] = t.right
            check_process(st, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, AssertP):
        _scope_prop(st, vc, body.phi, "assert")
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, TpAssert):
                _err(st, f"assert on offered {och} needs a ?{{...}} type")
            st.discharge.require(vc, t.phi, f"assert on {och}")
            check_process(st, vc, delta, body.cont, och, t.cont)
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, TpAssume):
                _err(st, f"assert on consumed {body.chan} needs a !{{...}} type")
            st.discharge.require(vc, t.phi, f"assert on {body.chan}")
            rest = dict(delta)
            rest[body.chan] = t.cont
            check_process(st, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, AssumeP):
        _scope_prop(st, vc, body.phi, "assume")
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, TpAssume):
                _err(st, f"assume on offered {och} needs a !{{...}} type")
            check_process(st, vc.push_con(t.phi), delta, body.cont, och, t.cont)
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, TpAssert):
                _err(st, f"assume on consumed {body.chan} needs a ?{{...}} type")
            rest = dict(delta)
            rest[body.chan] = t.cont
            check_process(st, vc.push_con(t.phi), rest, body.cont, och, oty)
        return

    if isinstance(body, SendWitness):
        if body.expr is None:
            _err(st, "witness hole {_} is only allowed as inference input")
        _scope_arith(st, vc, body.expr, "witness send")
        st.discharge.require(vc, Cmp(">=", body.expr, Const(0)),
                             "witness must be a natural number")
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, TpExists):
                _err(st, f"witness send on offered {och} needs an existential type")
            check_process(st, vc, delta, body.cont, och,
                          subst_type(t.cont, {t.var: body.expr}))
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, TpForall):
                _err(st, f"witness send on consumed {body.chan} needs a universal type")
            rest = dict(delta)
            rest[body.chan] = subst_type(t.cont, {t.var: body.expr})
            check_process(st, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, RecvWitness):
        if body.bind in vc.vars:
            _err(st, f"witness name {body.bind} shadows an index variable")
        vcb = vc.push_var(body.bind)
        if body.chan == och:
            t = sig.unfold(oty)
            if not isinstance(t, TpForall):
                _err(st, f"witness receive on offered {och} needs a universal type")
            check_process(st, vcb, delta, body.cont, och,
                          subst_type(t.cont, {t.var: Var(body.bind)}))
        else:
            t = sig.unfold(lookup(body.chan))
            if not isinstance(t, TpExists):
                _err(st, f"witness receive on consumed {body.chan} needs an existential type")
            rest = dict(delta)
            rest[body.chan] = subst_type(t.cont, {t.var: Var(body.bind)})
            check_process(st, vcb, rest, body.cont, och, oty)
        return

    if isinstance(body, Spawn):
        decl = sig.decls.get(body.proc)
        if decl is None:
            _err(st, f"spawned process {body.proc} has no declaration")
        if len(body.index_args) != len(decl.params):
            _err(st, f"{body.proc} takes {len(decl.params)} index arguments")
        if len(body.chan_args) != len(decl.used):
            _err(st, f"{body.proc} consumes {len(decl.used)} channels")
        for e in body.index_args:
            _scope_arith(st, vc, e, f"spawn of {body.proc}")
            st.discharge.require(vc, Cmp(">=", e, Const(0)),
                                 "index argument must be a natural number")
        inst = dict(zip(decl.params, body.index_args))
        st.discharge.require(vc, subst_prop(decl.constraint, inst),
                             f"index constraint of {body.proc}")
        if len(set(body.chan_args)) != len(body.chan_args):
            _err(st, f"spawn of {body.proc} uses a channel twice")
        rest = dict(delta)
        for y, (_, bty) in zip(body.chan_args, decl.used):
            if y == och or y not in rest:
                _err(st, f"channel {y} is not available for spawn of {body.proc}")
            st.discharge.require_subtype(sig, vc, rest.pop(y), subst_type(bty, inst),
                                         f"argument {y} of {body.proc}")
        offered_inst = subst_type(decl.offered, inst)
        if body.cont is None:
            if body.bind != och:
                _err(st, f"tail call must offer {och}, not {body.bind}")
            if rest:
                _err(st, f"tail call with unconsumed channels: {', '.join(sorted(rest))}")
            st.discharge.require_subtype(sig, vc, offered_inst, oty,
                                         f"tail call of {body.proc}")
            return
        if body.bind == och or body.bind in rest:
            _err(st, f"spawned channel name {body.bind} is already in use")
        rest[body.bind] = offered_inst
        check_process(st, vc, rest, body.cont, och, oty)
        return

    _err(st, f"cannot check process form {type(body).__name__}")


def check_def(sig: Signature, pdef: ProcDef, discharge: Discharge | None = None) -> None:
    decl = sig.decls.get(pdef.name)
    pos = sig.positions.get(("proc", pdef.name))
    if decl is None:
        raise CheckError(f"process {pdef.name} has no declaration", pos)
    if discharge is None:
        discharge = EagerDischarge(pos)
    st = _St(sig, discharge, pos, allow_unknowns=isinstance(discharge, BatchDischarge))
    vc = VC(decl.params).push_con(decl.constraint)
    delta = {c: ty for c, (_, ty) in zip(pdef.arg_chans, decl.used)}
    check_process(st, vc, delta, pdef.body, pdef.offered_chan, decl.offered)


def check_signature(sig: Signature) -> None:
    """Validity plus typechecking of every process definition."""
    from .validity import check_signature_valid

    check_signature_valid(sig)
    for name, pdef in sig.defs.items():
        check_def(sig, pdef)
    for name in sig.decls:
        if name not in sig.defs:
            # declarations without definitions are allowed (library decls)
            pass
