"""Well-formedness of signatures.

A type is valid under index variables V and constraints C when every index
expression is in scope, every type-name instance satisfies the definition's
parameter constraint, refinements extend C as they are passed, and
quantifiers extend V.  Type definitions must be contractive: a definition
body may not itself be a bare type-name instance.
"""

from __future__ import annotations

from .smt import entails
from .syntax import (
    BOT, Lolli, One, Plus, Prop, SessionType, Signature, SourceError, Tensor,
    TpAssert, TpAssume, TpExists, TpForall, TpName, TpUnknown, VC, With,
    arith_vars, fresh_name, prop_vars, subst_prop,
)


def check_type_valid(sig: Signature, vc: VC, t: SessionType, where: str,
                     pos: tuple[int, int] | None = None) -> None:
    if isinstance(t, (One, TpUnknown)):
        return
    if isinstance(t, TpName):
        d = sig.type_defs.get(t.name)
        if d is None:
            raise SourceError("valid", f"{where}: unknown type name {t.name}", pos)
        if len(d.params) != len(t.args):
            raise SourceError(
                "valid",
                f"{where}: {t.name} expects {len(d.params)} index arguments, got {len(t.args)}",
                pos,
            )
        scope = set(vc.vars)
        for a in t.args:
            bad = arith_vars(a) - scope
            if bad:
                raise SourceError(
                    "valid", f"{where}: index variable {sorted(bad)[0]} not in scope", pos
                )
        phi = subst_prop(d.constraint, dict(zip(d.params, t.args)))
        if entails(vc, phi) != "yes":
            from .pretty import pp_prop, pp_type
            raise SourceError(
                "valid",
                f"{where}: instance {pp_type(t)} does not satisfy constraint {pp_prop(phi)}",
                pos,
            )
        return
    if isinstance(t, (Plus, With)):
        if not t.branches:
            raise SourceError("valid", f"{where}: empty choice type", pos)
        for _, a in t.branches:
            check_type_valid(sig, vc, a, where, pos)
        return
    if isinstance(t, (Tensor, Lolli)):
        check_type_valid(sig, vc, t.left, where, pos)
        check_type_valid(sig, vc, t.right, where, pos)
        return
    if isinstance(t, (TpAssert, TpAssume)):
        bad = prop_vars(t.phi) - set(vc.vars)
        if bad:
            raise SourceError(
                "valid", f"{where}: index variable {sorted(bad)[0]} not in scope", pos
            )
        check_type_valid(sig, vc.push_con(t.phi), t.cont, where, pos)
        return
    if isinstance(t, (TpExists, TpForall)):
        check_type_valid(sig, vc.push_var(t.var), t.cont, where, pos)
        return
    raise SourceError("valid", f"{where}: not a type: {t!r}", pos)


def check_signature_valid(sig: Signature) -> None:
    """Check every type definition and process declaration in the signature."""
    for d in sig.type_defs.values():
        pos = sig.positions.get(("type", d.name))
        if isinstance(d.body, TpName):
            raise SourceError(
                "valid", f"type {d.name} is not contractive (its body is a type name)", pos
            )
        vc = VC(d.params).push_con(d.constraint)
        bad = prop_vars(d.constraint) - set(d.params)
        if bad:
            raise SourceError(
                "valid", f"type {d.name}: constraint variable {sorted(bad)[0]} not a parameter", pos
            )
        check_type_valid(sig, vc, d.body, f"type {d.name}", pos)
    for decl in sig.decls.values():
        pos = sig.positions.get(("decl", decl.name))
        bad = prop_vars(decl.constraint) - set(decl.params)
        if bad:
            raise SourceError(
                "valid", f"decl {decl.name}: constraint variable {sorted(bad)[0]} not a parameter",
                pos,
            )
        vc = VC(decl.params).push_con(decl.constraint)
        for _, ty in decl.used:
            check_type_valid(sig, vc, ty, f"decl {decl.name}", pos)
        check_type_valid(sig, vc, decl.offered, f"decl {decl.name}", pos)
    for pdef in sig.defs.values():
        pos = sig.positions.get(("proc", pdef.name))
        decl = sig.decls.get(pdef.name)
        if decl is not None:
            if decl.params != pdef.params:
                raise SourceError(
                    "valid",
                    f"proc {pdef.name}: index parameters {pdef.params} do not match "
                    f"its decl's {decl.params}",
                    pos,
                )
            if len(decl.used) != len(pdef.arg_chans):
                raise SourceError(
                    "valid",
                    f"proc {pdef.name}: {len(pdef.arg_chans)} channel arguments but the "
                    f"decl lists {len(decl.used)}",
                    pos,
                )
