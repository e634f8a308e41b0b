"""Pretty-printer producing canonical surface syntax.

Printing then reparsing is the identity on the abstract syntax; tests rely
on this round trip.
"""

from __future__ import annotations

from .syntax import (
    Add, And, Arith, AssertP, AssumeP, Bot, Case, Close, Cmp, Const, Fwd,
    Impossible, Implies, Lolli, Mul, Not, One, Or, Plus, Process, ProcDecl,
    ProcDef, Prop, RecvChan, RecvWitness, SendChan, SendLabel, SendWitness,
    SessionType, Signature, Spawn, Sub, Tensor, Top, TpAssert, TpAssume,
    TpExists, TpForall, TpName, TpUnknown, TypeDef, Unknown, Var, Wait, With,
)

# -- arithmetic ---------------------------------------------------------------


def _arith_prec(e: Arith) -> int:
    if isinstance(e, (Add, Sub)):
        return 1
    if isinstance(e, Mul):
        return 2
    return 3


def pp_arith(e: Arith, min_prec: int = 0) -> str:
    if isinstance(e, Const):
        s = str(e.value)
    elif isinstance(e, Var):
        s = e.name
    elif isinstance(e, Unknown):
        inner = ", ".join(pp_arith(a) for a in e.args)
        s = f"{e.name}({inner})"
    elif isinstance(e, Add):
        s = f"{pp_arith(e.left, 1)} + {pp_arith(e.right, 2)}"
    elif isinstance(e, Sub):
        s = f"{pp_arith(e.left, 1)} - {pp_arith(e.right, 2)}"
    else:
        s = f"{pp_arith(e.left, 2)} * {pp_arith(e.right, 3)}"
    if _arith_prec(e) < min_prec:
        return f"({s})"
    return s


# -- constraints ----------------------------------------------------------------


def _prop_prec(p: Prop) -> int:
    if isinstance(p, Implies):
        return 1
    if isinstance(p, Or):
        return 2
    if isinstance(p, And):
        return 3
    return 4


def pp_prop(p: Prop, min_prec: int = 0) -> str:
    if isinstance(p, Top):
        s = "true"
    elif isinstance(p, Bot):
        s = "false"
    elif isinstance(p, Cmp):
        s = f"{pp_arith(p.left)} {p.op} {pp_arith(p.right)}"
    elif isinstance(p, Not):
        s = f"~{pp_prop(p.body, 4)}"
    elif isinstance(p, And):
        s = f"{pp_prop(p.left, 3)} /\\ {pp_prop(p.right, 4)}"
    elif isinstance(p, Or):
        s = f"{pp_prop(p.left, 2)} \\/ {pp_prop(p.right, 3)}"
    else:
        s = f"{pp_prop(p.left, 2)} => {pp_prop(p.right, 1)}"
    if _prop_prec(p) < min_prec:
        return f"({s})"
    return s


# -- types ----------------------------------------------------------------------

_PREFIX = (TpAssert, TpAssume, TpExists, TpForall)


def _type_prec(t: SessionType) -> int:
    if isinstance(t, _PREFIX):
        return 0
    if isinstance(t, Lolli):
        return 1
    if isinstance(t, Tensor):
        return 2
    return 4


def pp_type(t: SessionType, min_prec: int = 0) -> str:
    if isinstance(t, One):
        s = "1"
    elif isinstance(t, TpName):
        s = t.name + "".join(f"[{pp_arith(a)}]" for a in t.args)
    elif isinstance(t, TpUnknown):
        s = t.name
    elif isinstance(t, (Plus, With)):
        mark = "+" if isinstance(t, Plus) else "&"
        inner = ", ".join(f"{l} : {pp_type(a)}" for l, a in t.branches)
        s = f"{mark}{{{inner}}}"
    elif isinstance(t, Tensor):
        # the right operand of * may be an unparenthesised prefix type
        r = pp_type(t.right) if isinstance(t.right, _PREFIX) else pp_type(t.right, 2)
        s = f"{pp_type(t.left, 4)} * {r}"
    elif isinstance(t, Lolli):
        s = f"{pp_type(t.left, 2)} -o {pp_type(t.right)}"
    elif isinstance(t, TpAssert):
        s = f"?{{{pp_prop(t.phi)}}}. {pp_type(t.cont)}"
    elif isinstance(t, TpAssume):
        s = f"!{{{pp_prop(t.phi)}}}. {pp_type(t.cont)}"
    elif isinstance(t, TpExists):
        s = f"?{t.var}. {pp_type(t.cont)}"
    else:
        s = f"!{t.var}. {pp_type(t.cont)}"
    if _type_prec(t) < min_prec:
        return f"({s})"
    return s


# -- processes -------------------------------------------------------------------


def pp_process(p: Process, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(p, SendLabel):
        return f"{p.chan}.{p.label}; {pp_process(p.cont, indent)}"
    if isinstance(p, Case):
        sep = "\n" + pad + "  "
        arms = (sep + "| ").join(
            f"{l} =>\n{pad}    {pp_process(b, indent + 2)}" for l, b in p.branches
        )
        return f"case {p.chan} ({sep}  {arms} )"
    if isinstance(p, SendChan):
        return f"send {p.chan} {p.payload}; {pp_process(p.cont, indent)}"
    if isinstance(p, RecvChan):
        return f"{p.bind} <- recv {p.chan}; {pp_process(p.cont, indent)}"
    if isinstance(p, Close):
        return f"close {p.chan}"
    if isinstance(p, Wait):
        return f"wait {p.chan}; {pp_process(p.cont, indent)}"
    if isinstance(p, Fwd):
        return f"{p.offered} <-> {p.consumed}"
    if isinstance(p, Spawn):
        idx = "".join(f"[{pp_arith(a)}]" for a in p.index_args)
        chans = "".join(f" {c}" for c in p.chan_args)
        head = f"{p.bind} <- {p.proc}{idx}{chans}"
        if p.cont is None:
            return head
        return f"{head};\n{pad}{pp_process(p.cont, indent)}"
    if isinstance(p, AssertP):
        return f"assert {p.chan} {{{pp_prop(p.phi)}}}; {pp_process(p.cont, indent)}"
    if isinstance(p, AssumeP):
        return f"assume {p.chan} {{{pp_prop(p.phi)}}}; {pp_process(p.cont, indent)}"
    if isinstance(p, SendWitness):
        e = "_" if p.expr is None else pp_arith(p.expr)
        return f"send {p.chan} {{{e}}}; {pp_process(p.cont, indent)}"
    if isinstance(p, RecvWitness):
        return f"{{{p.bind}}} <- recv {p.chan}; {pp_process(p.cont, indent)}"
    if isinstance(p, Impossible):
        return "impossible"
    raise TypeError(f"not a process: {p!r}")


# -- top level -------------------------------------------------------------------


def _pp_params(params: tuple[str, ...], constraint: Prop) -> str:
    if not params:
        return ""
    out = "".join(f"[{v}]" for v in params[:-1])
    last = params[-1]
    if isinstance(constraint, Top):
        return out + f"[{last}]"
    return out + f"[{last} | {pp_prop(constraint)}]"


def pp_type_def(d: TypeDef) -> str:
    return f"type {d.name}{_pp_params(d.params, d.constraint)} = {pp_type(d.body)}"


def pp_decl(d: ProcDecl) -> str:
    ctx = " ".join(f"({c} : {pp_type(t)})" for c, t in d.used) or "."
    return (
        f"decl {d.name}{_pp_params(d.params, d.constraint)} : "
        f"{ctx} |- ({d.offered_chan} : {pp_type(d.offered)})"
    )


def pp_def(d: ProcDef, decl_params: bool = True) -> str:
    params = "".join(f"[{v}]" for v in d.params)
    chans = "".join(f" {c}" for c in d.arg_chans)
    return (
        f"proc {d.offered_chan} <- {d.name}{params}{chans} =\n"
        f"  {pp_process(d.body, 1)}"
    )


def pp_signature(sig: Signature) -> str:
    chunks: list[str] = []
    for d in sig.type_defs.values():
        if d.name.startswith("%"):
            continue
        chunks.append(pp_type_def(d))
    for name, decl in sig.decls.items():
        chunks.append("")
        chunks.append(pp_decl(decl))
        if name in sig.defs:
            chunks.append(pp_def(sig.defs[name]))
    for name, pdef in sig.defs.items():
        if name in sig.decls:
            continue
        chunks.append("")
        chunks.append(pp_def(pdef))
    return "\n".join(chunks) + "\n"
