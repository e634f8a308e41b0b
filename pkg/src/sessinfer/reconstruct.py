"""Reconstruction: inserting refinement actions into an unannotated body.

Once stage 1 has assigned a structural type (with index unknowns) to every
placeholder, each process body is rewritten so that it typechecks against
those types modulo arithmetic:

  - incoming refinements (an assumption or a witness to receive) are
    absorbed eagerly, on any channel whose current type literally exposes
    them, so their information is in scope as early as possible;
  - outgoing refinements (an assertion or a witness to send) are inserted
    lazily, when the channel is next engaged;
  - a witness the process must send but did not write becomes a hole: a
    fresh index unknown over the variables in scope;
  - case branches required by the type but absent from the source are
    filled with `impossible`.

Inserted actions are marked synthetic, so `erase` recovers the original
body exactly.  A source action the assigned type cannot be stepped to
raises ReconstructionMismatch, which sends stage 1 on to its next
candidate assignment.
"""

from __future__ import annotations

from dataclasses import replace

from .syntax import (
    Arith, AssertP, AssumeP, Case, Close, Fwd, Impossible, Lolli, One, Plus,
    Process, ProcDef, RecvChan, RecvWitness, SendChan, SendLabel, SendWitness,
    SessionType, Signature, Spawn, Tensor, TpAssert, TpAssume, TpExists,
    TpForall, TpName, TpUnknown, Unknown, Var, Wait, With, fresh_name,
    subst_type,
)

HOLE_PREFIX = "$h"


class ReconstructionMismatch(Exception):
    pass


def _incoming(t: SessionType, provider: bool) -> bool:
    if provider:
        return isinstance(t, (TpAssume, TpForall))
    return isinstance(t, (TpAssert, TpExists))


def _outgoing(t: SessionType, provider: bool) -> bool:
    if provider:
        return isinstance(t, (TpAssert, TpExists))
    return isinstance(t, (TpAssume, TpForall))


def _matches(body: Process, t: SessionType, provider: bool) -> bool:
    """Does the head action of `body` engage constructor `t` directly?"""
    if isinstance(body, AssertP):
        return isinstance(t, TpAssert if provider else TpAssume)
    if isinstance(body, AssumeP):
        return isinstance(t, TpAssume if provider else TpAssert)
    if isinstance(body, SendWitness):
        return isinstance(t, TpExists if provider else TpForall)
    if isinstance(body, RecvWitness):
        return isinstance(t, TpForall if provider else TpExists)
    if isinstance(body, SendLabel):
        return isinstance(t, Plus if provider else With)
    if isinstance(body, Case):
        return isinstance(t, With if provider else Plus)
    if isinstance(body, SendChan):
        return isinstance(t, Tensor if provider else Lolli)
    if isinstance(body, RecvChan):
        return isinstance(t, Lolli if provider else Tensor)
    if isinstance(body, (Close, Wait)):
        return isinstance(t, One)
    return False


def _subject(body: Process) -> str | None:
    if isinstance(body, (SendLabel, Case, SendChan, AssertP, AssumeP, SendWitness, Close, Wait)):
        return body.chan
    if isinstance(body, (RecvChan, RecvWitness)):
        return body.chan
    return None


class _Rec:
    def __init__(self, sig: Signature):
        self.sig = sig

    def mismatch(self, msg: str):
        raise ReconstructionMismatch(msg)

    def fresh_binder(self, want: str, scope: tuple[str, ...]) -> str:
        if want not in scope:
            return want
        return fresh_name(want + "_")

    def hole(self, scope: tuple[str, ...]) -> Arith:
        return Unknown(fresh_name(HOLE_PREFIX), tuple(Var(v) for v in scope))

    def rec(
        self,
        scope: tuple[str, ...],
        delta: dict[str, SessionType],
        body: Process,
        och: str,
        oty: SessionType,
    ) -> Process:
        sig = self.sig

        # Eager absorption of incoming refinements literally exposed on any
        # channel.  A matching explicit action at the head of the body is
        # consumed instead of duplicated.
        subj = _subject(body)
        for c in [och] + list(delta):
            t = oty if c == och else delta[c]
            if not _incoming(t, c == och):
                continue
            if c == subj and _matches(body, t, c == och):
                continue  # the source handles it itself, below
            if isinstance(t, (TpAssume, TpAssert)):
                if c == och:
                    cont = self.rec(scope, delta, body, och, t.cont)
                else:
                    cont = self.rec(scope, {**delta, c: t.cont}, body, och, oty)
                return AssumeP(c, t.phi, cont, synthetic=True)
            k = self.fresh_binder(t.var, scope)
            inner = subst_type(t.cont, {t.var: Var(k)})
            if c == och:
                cont = self.rec(scope + (k,), delta, body, och, inner)
            else:
                cont = self.rec(scope + (k,), {**delta, c: inner}, body, och, oty)
            return RecvWitness(k, c, cont, synthetic=True)

        if isinstance(body, Impossible):
            return body

        if isinstance(body, Fwd):
            # Align both endpoints: emit the outgoing refinements each side
            # still owes before the forward takes over.
            other = body.consumed if body.offered == och else body.offered
            if other not in delta:
                self.mismatch(f"channel {other} is not available")
            if isinstance(oty, (TpAssert, TpExists)):
                if isinstance(oty, TpAssert):
                    return AssertP(och, oty.phi,
                                   self.rec(scope, delta, body, och, oty.cont),
                                   synthetic=True)
                e = self.hole(scope)
                inner = subst_type(oty.cont, {oty.var: e})
                return SendWitness(och, e, self.rec(scope, delta, body, och, inner),
                                   synthetic=True)
            tc = delta[other]
            if isinstance(tc, (TpAssume, TpForall)):
                if isinstance(tc, TpAssume):
                    cont = self.rec(scope, {**delta, other: tc.cont}, body, och, oty)
                    return AssertP(other, tc.phi, cont, synthetic=True)
                e = self.hole(scope)
                inner = subst_type(tc.cont, {tc.var: e})
                cont = self.rec(scope, {**delta, other: inner}, body, och, oty)
                return SendWitness(other, e, cont, synthetic=True)
            return body

        if isinstance(body, Spawn):
            decl = sig.decls.get(body.proc)
            if decl is None:
                self.mismatch(f"spawned process {body.proc} has no declaration")
            # Settle outgoing refinements the spawn's channels still owe.
            if body.cont is None and isinstance(oty, (TpAssert, TpExists)):
                if isinstance(oty, TpAssert):
                    return AssertP(och, oty.phi,
                                   self.rec(scope, delta, body, och, oty.cont),
                                   synthetic=True)
                e = self.hole(scope)
                inner = subst_type(oty.cont, {oty.var: e})
                return SendWitness(och, e, self.rec(scope, delta, body, och, inner),
                                   synthetic=True)
            for y in body.chan_args:
                ty = delta.get(y)
                if isinstance(ty, (TpAssume, TpForall)):
                    if isinstance(ty, TpAssume):
                        cont = self.rec(scope, {**delta, y: ty.cont}, body, och, oty)
                        return AssertP(y, ty.phi, cont, synthetic=True)
                    e = self.hole(scope)
                    inner = subst_type(ty.cont, {ty.var: e})
                    cont = self.rec(scope, {**delta, y: inner}, body, och, oty)
                    return SendWitness(y, e, cont, synthetic=True)
            index_args = body.index_args
            if len(index_args) < len(decl.params):
                # implicit instantiation of invented parameters
                pad = tuple(self.hole(scope)
                            for _ in range(len(decl.params) - len(index_args)))
                index_args = index_args + pad
            inst = dict(zip(decl.params, index_args))
            rest = dict(delta)
            for y in body.chan_args:
                if y not in rest:
                    self.mismatch(f"channel {y} is not available for spawn of {body.proc}")
                del rest[y]
            if body.cont is None:
                return replace(body, index_args=index_args)
            rest[body.bind] = subst_type(decl.offered, inst)
            return replace(body, index_args=index_args,
                           cont=self.rec(scope, rest, body.cont, och, oty))

        c = _subject(body)
        if c is None:
            self.mismatch(f"cannot reconstruct process form {type(body).__name__}")
        provider = c == och
        if not provider and c not in delta:
            self.mismatch(f"channel {c} is not available")
        t = oty if provider else delta[c]

        def continue_at(t2: SessionType, scope2=None, delta2=None, body2=None) -> Process:
            s = scope if scope2 is None else scope2
            d = delta2
            b = body if body2 is None else body2
            if provider:
                return self.rec(s, delta if d is None else d, b, och, t2)
            nd = dict(delta) if d is None else d
            nd[c] = t2
            return self.rec(s, nd, b, och, oty)

        # Peel the subject channel's type until its constructor is engaged.
        if isinstance(t, TpName):
            return continue_at(sig.unfold(t))
        if isinstance(t, TpUnknown):
            self.mismatch(f"channel {c} still has an unassigned type")
        if not _matches(body, t, provider):
            if isinstance(t, (TpAssert, TpAssume)):
                out = _outgoing(t, provider)
                node = AssertP if out else AssumeP
                return node(c, t.phi, continue_at(t.cont), synthetic=True)
            if isinstance(t, (TpExists, TpForall)):
                if _outgoing(t, provider):
                    e = self.hole(scope)
                    inner = subst_type(t.cont, {t.var: e})
                    return SendWitness(c, e, continue_at(inner), synthetic=True)
                k = self.fresh_binder(t.var, scope)
                inner = subst_type(t.cont, {t.var: Var(k)})
                return RecvWitness(k, c, continue_at(inner, scope2=scope + (k,)),
                                   synthetic=True)
            from .pretty import pp_type
            self.mismatch(
                f"{type(body).__name__} on {c} does not match its type {pp_type(t)}"
            )

        # Explicit refinement actions in the source.
        if isinstance(body, (AssertP, AssumeP)):
            return replace(body, cont=continue_at(t.cont, body2=body.cont))
        if isinstance(body, SendWitness):
            e = body.expr if body.expr is not None else self.hole(scope)
            inner = subst_type(t.cont, {t.var: e})
            return SendWitness(c, e, continue_at(inner, body2=body.cont), body.synthetic)
        if isinstance(body, RecvWitness):
            if body.bind in scope:
                self.mismatch(f"witness name {body.bind} shadows an index variable")
            inner = subst_type(t.cont, {t.var: Var(body.bind)})
            return replace(body, cont=continue_at(inner, scope2=scope + (body.bind,),
                                                  body2=body.cont))

        # Structural actions.
        if isinstance(body, SendLabel):
            if body.label not in t.labels():
                self.mismatch(f"label {body.label} is not part of the type of {c}")
            return replace(body, cont=continue_at(t.branch(body.label), body2=body.cont))

        if isinstance(body, Case):
            have = dict(body.branches)
            extra = set(have) - set(t.labels())
            if extra:
                self.mismatch(f"case branch {sorted(extra)[0]} is not a label of {c}'s type")
            arms = []
            for lab, arm in body.branches:
                cont_ty = t.branch(lab)
                if isinstance(arm, Impossible):
                    arms.append((lab, arm))
                elif provider:
                    arms.append((lab, self.rec(scope, dict(delta), arm, och, cont_ty)))
                else:
                    arms.append((lab, self.rec(scope, {**delta, c: cont_ty}, arm, och, oty)))
            for lab in t.labels():
                if lab not in have:
                    arms.append((lab, Impossible(synthetic=True)))
            return Case(c, tuple(arms))

        if isinstance(body, SendChan):
            if body.payload not in delta:
                self.mismatch(f"channel {body.payload} is not available")
            rest = {k: v for k, v in delta.items() if k != body.payload}
            return replace(body, cont=continue_at(t.right, delta2=rest, body2=body.cont))

        if isinstance(body, RecvChan):
            if body.bind == och or body.bind in delta:
                self.mismatch(f"received channel name {body.bind} is already in use")
            rest = dict(delta)
            rest[body.bind] = t.left
            return replace(body, cont=continue_at(t.right, delta2=rest, body2=body.cont))

        if isinstance(body, Close):
            return body

        if isinstance(body, Wait):
            rest = {k: v for k, v in delta.items() if k != c}
            return replace(body, cont=self.rec(scope, rest, body.cont, och, oty))

        self.mismatch(f"cannot reconstruct process form {type(body).__name__}")


def reconstruct_def(sig: Signature, pdef: ProcDef) -> ProcDef:
    decl = sig.decls[pdef.name]
    delta = {c: ty for c, (_, ty) in zip(pdef.arg_chans, decl.used)}
    body = _Rec(sig).rec(decl.params, delta, pdef.body, pdef.offered_chan, decl.offered)
    return ProcDef(pdef.name, pdef.params, pdef.offered_chan, pdef.arg_chans, body)


def erase(p: Process) -> Process:
    """Remove everything reconstruction inserted, restoring the source body."""
    if isinstance(p, (AssertP, AssumeP, RecvWitness)):
        if p.synthetic:
            return erase(p.cont)
        return replace(p, cont=erase(p.cont))
    if isinstance(p, SendWitness):
        if p.synthetic:
            return erase(p.cont)
        e = p.expr
        if isinstance(e, Unknown) and e.name.startswith(HOLE_PREFIX):
            e = None  # a filled-in hole goes back to `{_}`
        return SendWitness(p.chan, e, erase(p.cont), p.synthetic)
    if isinstance(p, Case):
        arms = tuple(
            (l, erase(a)) for l, a in p.branches
            if not (isinstance(a, Impossible) and a.synthetic)
        )
        return Case(p.chan, arms)
    if isinstance(p, (SendLabel, SendChan, RecvChan, Wait)):
        return replace(p, cont=erase(p.cont))
    if isinstance(p, Spawn):
        args = list(p.index_args)
        while args and isinstance(args[-1], Unknown) and args[-1].name.startswith(HOLE_PREFIX):
            args.pop()
        p = replace(p, index_args=tuple(args))
        return p if p.cont is None else replace(p, cont=erase(p.cont))
    return p
