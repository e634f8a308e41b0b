"""Constraint generation for type inference.

Undeclared processes get placeholder declarations whose channel types are
structural unknowns carrying the declaration's index variables as arguments
(so spawn sites record the index substitution).  A constraint-generating
walk then mirrors the typechecker, but instead of requiring each channel's
type to already have the right constructor, it invents a fresh intermediate
unknown per continuation and emits a subtyping constraint:

  - actions on the offered channel put the invented structure on the LEFT
    of <: (the process must offer at least this much);
  - actions on a consumed channel put it on the RIGHT (the channel must
    supply at least this much);
  - forwarding and spawning relate the two types directly.

Arithmetic premises (assert bodies, witness naturality, declaration
constraints) are collected separately; stage 2 re-derives them from the
reconstructed program, so here they are kept only for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .smt import ArithConstraint
from .syntax import (
    Arith, AssertP, AssumeP, BOT, Case, Close, Cmp, Const, Fwd, Impossible,
    Lolli, One, Plus, Process, ProcDecl, Prop, RecvChan, RecvWitness,
    SendChan, SendLabel, SendWitness, SessionType, Signature, SourceError,
    Spawn, Tensor, TpAssert, TpAssume, TpExists, TpForall, TpName, TpUnknown,
    Unknown, VC, Var, Wait, With, fresh_name, subst_prop, subst_type,
)
from .typecheck import CheckError


@dataclass(frozen=True)
class TypeConstraint:
    """A subtyping constraint lhs <: rhs under index variables/constraints."""

    vc: VC
    lhs: SessionType
    rhs: SessionType


@dataclass
class Placeholders:
    """Bookkeeping for the unknowns introduced for undeclared processes.

    signature_unknowns lists, in definition order, the names that stage 1
    enumerates candidates for (argument channels first, then the offered
    channel, per process).  owner maps each such unknown to
    (process name, channel name).
    """

    signature_unknowns: list[str] = field(default_factory=list)
    owner: dict[str, tuple[str, str]] = field(default_factory=dict)


def introduce_placeholders(sig: Signature) -> Placeholders:
    """Add a placeholder declaration for every undeclared process definition.

    The declaration reuses the definition's index parameters with a trivial
    constraint; every channel type is a distinct structural unknown applied
    to those parameters.
    """
    info = Placeholders()
    for name, pdef in sig.defs.items():
        if name in sig.decls:
            continue
        args = tuple(Var(v) for v in pdef.params)
        used = []
        for i, c in enumerate(pdef.arg_chans):
            u = f"${name}.{c}"
            info.signature_unknowns.append(u)
            info.owner[u] = (name, c)
            used.append((c, TpUnknown(u, args)))
        u = f"${name}.{pdef.offered_chan}"
        info.signature_unknowns.append(u)
        info.owner[u] = (name, pdef.offered_chan)
        sig.decls[name] = ProcDecl(
            name=name,
            params=pdef.params,
            constraint=VC().ctx(),
            used=tuple(used),
            offered_chan=pdef.offered_chan,
            offered=TpUnknown(u, args),
        )
    return info


@dataclass
class _Gen:
    sig: Signature
    pos: tuple[int, int] | None
    types: list[TypeConstraint] = field(default_factory=list)
    ariths: list[ArithConstraint] = field(default_factory=list)

    def fresh(self) -> TpUnknown:
        return TpUnknown(fresh_name("%I"))

    def sub(self, vc: VC, lhs: SessionType, rhs: SessionType) -> None:
        self.types.append(TypeConstraint(vc, lhs, rhs))

    def arith(self, vc: VC, goal: Prop) -> None:
        from .syntax import Top
        if not isinstance(goal, Top):
            self.ariths.append(ArithConstraint(vc, goal))

    def err(self, msg: str):
        raise CheckError(msg, self.pos)


def _gen_process(
    g: _Gen,
    vc: VC,
    delta: dict[str, SessionType],
    body: Process,
    och: str,
    oty: SessionType,
) -> None:
    def lookup(c: str) -> SessionType:
        if c == och:
            g.err(f"channel {c} is offered here, not consumed")
        if c not in delta:
            g.err(f"channel {c} is not available")
        return delta[c]

    if isinstance(body, Impossible):
        g.arith(vc, BOT)
        return

    if isinstance(body, Close):
        if body.chan != och:
            g.err(f"close on consumed channel {body.chan}")
        if delta:
            g.err(f"close with unconsumed channels: {', '.join(sorted(delta))}")
        g.sub(vc, One(), oty)
        return

    if isinstance(body, Wait):
        t = lookup(body.chan)
        g.sub(vc, t, One())
        rest = dict(delta)
        del rest[body.chan]
        _gen_process(g, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, Fwd):
        if body.offered == och:
            cons = body.consumed
        elif body.consumed == och:
            cons = body.offered
        else:
            g.err("forward must involve the offered channel")
        if set(delta) != {cons}:
            g.err(f"forward must consume exactly the remaining channel, have {sorted(delta)}")
        g.sub(vc, delta[cons], oty)
        return

    if isinstance(body, SendLabel):
        cont = g.fresh()
        if body.chan == och:
            g.sub(vc, Plus(((body.label, cont),)), oty)
            _gen_process(g, vc, delta, body.cont, och, cont)
        else:
            t = lookup(body.chan)
            g.sub(vc, t, With(((body.label, cont),)))
            rest = dict(delta)
            rest[body.chan] = cont
            _gen_process(g, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, Case):
        labs = [l for l, _ in body.branches]
        if len(set(labs)) != len(labs):
            g.err(f"duplicate case branch on {body.chan}")
        conts = {l: g.fresh() for l in labs}
        shape = tuple((l, conts[l]) for l in labs)
        if body.chan == och:
            g.sub(vc, With(shape), oty)
            for l, arm in body.branches:
                if isinstance(arm, Impossible):
                    g.arith(vc, BOT)
                else:
                    _gen_process(g, vc, dict(delta), arm, och, conts[l])
        else:
            t = lookup(body.chan)
            g.sub(vc, t, Plus(shape))
            for l, arm in body.branches:
                if isinstance(arm, Impossible):
                    g.arith(vc, BOT)
                else:
                    rest = dict(delta)
                    rest[body.chan] = conts[l]
                    _gen_process(g, vc, rest, arm, och, oty)
        return

    if isinstance(body, SendChan):
        pty = lookup(body.payload)
        rest = dict(delta)
        del rest[body.payload]
        cont = g.fresh()
        if body.chan == och:
            g.sub(vc, Tensor(pty, cont), oty)
            _gen_process(g, vc, rest, body.cont, och, cont)
        else:
            t = rest[body.chan] if body.chan in rest else lookup(body.chan)
            g.sub(vc, t, Lolli(pty, cont))
            rest[body.chan] = cont
            _gen_process(g, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, RecvChan):
        if body.bind == och or body.bind in delta:
            g.err(f"received channel name {body.bind} is already in use")
        payload = g.fresh()
        cont = g.fresh()
        rest = dict(delta)
        if body.chan == och:
            g.sub(vc, Lolli(payload, cont), oty)
            rest[body.bind] = payload
            _gen_process(g, vc, rest, body.cont, och, cont)
        else:
            t = lookup(body.chan)
            g.sub(vc, t, Tensor(payload, cont))
            rest[body.bind] = payload
            rest[body.chan] = cont
            _gen_process(g, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, AssertP):
        cont = g.fresh()
        g.arith(vc, body.phi)
        if body.chan == och:
            g.sub(vc, TpAssert(body.phi, cont), oty)
            _gen_process(g, vc, delta, body.cont, och, cont)
        else:
            t = lookup(body.chan)
            g.sub(vc, t, TpAssume(body.phi, cont))
            rest = dict(delta)
            rest[body.chan] = cont
            _gen_process(g, vc, rest, body.cont, och, oty)
        return

    if isinstance(body, AssumeP):
        cont = g.fresh()
        if body.chan == och:
            g.sub(vc, TpAssume(body.phi, cont), oty)
            _gen_process(g, vc.push_con(body.phi), delta, body.cont, och, cont)
        else:
            t = lookup(body.chan)
            g.sub(vc, t, TpAssert(body.phi, cont))
            rest = dict(delta)
            rest[body.chan] = cont
            _gen_process(g, vc.push_con(body.phi), rest, body.cont, och, oty)
        return

    if isinstance(body, SendWitness):
        expr = body.expr
        if expr is None:
            expr = Unknown(fresh_name("$h"), tuple(Var(v) for v in vc.vars))
        g.arith(vc, Cmp(">=", expr, Const(0)))
        n = fresh_name("_w")
        cont = g.fresh()
        vcb = vc.push_var(n).push_con(Cmp("=", Var(n), expr))
        if body.chan == och:
            g.sub(vc, TpExists(n, cont), oty)
            _gen_process(g, vcb, delta, body.cont, och, cont)
        else:
            t = lookup(body.chan)
            g.sub(vc, t, TpForall(n, cont))
            rest = dict(delta)
            rest[body.chan] = cont
            _gen_process(g, vcb, rest, body.cont, och, oty)
        return

    if isinstance(body, RecvWitness):
        if body.bind in vc.vars:
            g.err(f"witness name {body.bind} shadows an index variable")
        cont = g.fresh()
        vcb = vc.push_var(body.bind)
        if body.chan == och:
            g.sub(vc, TpForall(body.bind, cont), oty)
            _gen_process(g, vcb, delta, body.cont, och, cont)
        else:
            t = lookup(body.chan)
            g.sub(vc, t, TpExists(body.bind, cont))
            rest = dict(delta)
            rest[body.chan] = cont
            _gen_process(g, vcb, rest, body.cont, och, oty)
        return

    if isinstance(body, Spawn):
        decl = g.sig.decls.get(body.proc)
        if decl is None:
            g.err(f"spawned process {body.proc} has no definition or declaration")
        index_args = body.index_args
        if len(index_args) > len(decl.params):
            g.err(f"{body.proc} takes {len(decl.params)} index arguments")
        if len(index_args) < len(decl.params):
            # implicit instantiation: missing index arguments become holes
            pad = tuple(Unknown(fresh_name("$h"), tuple(Var(v) for v in vc.vars))
                        for _ in range(len(decl.params) - len(index_args)))
            index_args = index_args + pad
            body = replace(body, index_args=index_args)
        if len(body.chan_args) != len(decl.used):
            g.err(f"{body.proc} consumes {len(decl.used)} channels")
        if len(set(body.chan_args)) != len(body.chan_args):
            g.err(f"spawn of {body.proc} uses a channel twice")
        for e in body.index_args:
            g.arith(vc, Cmp(">=", e, Const(0)))
        inst = dict(zip(decl.params, body.index_args))
        g.arith(vc, subst_prop(decl.constraint, inst))
        rest = dict(delta)
        for y, (_, bty) in zip(body.chan_args, decl.used):
            if y == och or y not in rest:
                g.err(f"channel {y} is not available for spawn of {body.proc}")
            g.sub(vc, rest.pop(y), subst_type(bty, inst))
        offered_inst = subst_type(decl.offered, inst)
        if body.cont is None:
            if body.bind != och:
                g.err(f"tail call must offer {och}, not {body.bind}")
            if rest:
                g.err(f"tail call with unconsumed channels: {', '.join(sorted(rest))}")
            g.sub(vc, offered_inst, oty)
            return
        if body.bind == och or body.bind in rest:
            g.err(f"spawned channel name {body.bind} is already in use")
        rest[body.bind] = offered_inst
        _gen_process(g, vc, rest, body.cont, och, oty)
        return

    g.err(f"cannot generate constraints for process form {type(body).__name__}")


def gen_constraints(sig: Signature) -> tuple[list[TypeConstraint], list[ArithConstraint]]:
    """Generate subtyping and arithmetic constraints for every definition.

    Placeholder declarations must already be in place (see
    introduce_placeholders); declared definitions contribute constraints
    over concrete types, which cost nothing extra and catch structural
    errors early.
    """
    g = _Gen(sig, None)
    for name, pdef in sig.defs.items():
        decl = sig.decls[name]
        g.pos = sig.positions.get(("proc", name))
        vc = VC(decl.params).push_con(decl.constraint)
        delta = {c: ty for c, (_, ty) in zip(pdef.arg_chans, decl.used)}
        _gen_process(g, vc, delta, pdef.body, pdef.offered_chan, decl.offered)
    return g.types, g.ariths
