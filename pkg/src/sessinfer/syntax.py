"""Abstract syntax for index arithmetic, constraints, session types and processes.

The language has three layers:

  - arithmetic expressions over natural-number index variables,
  - constraints (propositions) over those expressions,
  - session types refined by constraints, and processes communicating on
    linearly-typed channels.

Everything is an immutable dataclass so values can be used as dict keys and
compared structurally in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

# ---------------------------------------------------------------------------
# Arithmetic expressions


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Add:
    left: "Arith"
    right: "Arith"


@dataclass(frozen=True)
class Sub:
    left: "Arith"
    right: "Arith"


@dataclass(frozen=True)
class Mul:
    left: "Arith"
    right: "Arith"


@dataclass(frozen=True)
class Unknown:
    """An index expression to be solved for, applied to argument expressions.

    Only appears during inference: each undeclared process gets one unknown
    per index position of its placeholder declaration, parameterised by the
    process's index variables.  A hole written `{_}` in a witness send also
    becomes an Unknown.
    """

    name: str
    args: tuple["Arith", ...]


Arith = Union[Const, Var, Add, Sub, Mul, Unknown]


def arith_vars(e: Arith) -> set[str]:
    if isinstance(e, Const):
        return set()
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unknown):
        out: set[str] = set()
        for a in e.args:
            out |= arith_vars(a)
        return out
    return arith_vars(e.left) | arith_vars(e.right)


def arith_unknowns(e: Arith) -> set[str]:
    if isinstance(e, Unknown):
        out = {e.name}
        for a in e.args:
            out |= arith_unknowns(a)
        return out
    if isinstance(e, (Add, Sub, Mul)):
        return arith_unknowns(e.left) | arith_unknowns(e.right)
    return set()


def subst_arith(e: Arith, sub: dict[str, Arith]) -> Arith:
    """Capture-free substitution of index variables in an arithmetic expression."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return sub.get(e.name, e)
    if isinstance(e, Add):
        return Add(subst_arith(e.left, sub), subst_arith(e.right, sub))
    if isinstance(e, Sub):
        return Sub(subst_arith(e.left, sub), subst_arith(e.right, sub))
    if isinstance(e, Mul):
        return Mul(subst_arith(e.left, sub), subst_arith(e.right, sub))
    return Unknown(e.name, tuple(subst_arith(a, sub) for a in e.args))


def eval_arith(e: Arith, env: dict[str, int]) -> int:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Add):
        return eval_arith(e.left, env) + eval_arith(e.right, env)
    if isinstance(e, Sub):
        return eval_arith(e.left, env) - eval_arith(e.right, env)
    if isinstance(e, Mul):
        return eval_arith(e.left, env) * eval_arith(e.right, env)
    raise ValueError(f"cannot evaluate unknown {e.name}")


# ---------------------------------------------------------------------------
# Constraints


@dataclass(frozen=True)
class Top:
    pass


@dataclass(frozen=True)
class Bot:
    pass


@dataclass(frozen=True)
class Cmp:
    """Comparison between arithmetic expressions; op is one of = > >= < <=."""

    op: str
    left: Arith
    right: Arith


@dataclass(frozen=True)
class Not:
    body: "Prop"


@dataclass(frozen=True)
class And:
    left: "Prop"
    right: "Prop"


@dataclass(frozen=True)
class Or:
    left: "Prop"
    right: "Prop"


@dataclass(frozen=True)
class Implies:
    left: "Prop"
    right: "Prop"


Prop = Union[Top, Bot, Cmp, Not, And, Or, Implies]

TOP = Top()
BOT = Bot()


def prop_vars(p: Prop) -> set[str]:
    if isinstance(p, (Top, Bot)):
        return set()
    if isinstance(p, Cmp):
        return arith_vars(p.left) | arith_vars(p.right)
    if isinstance(p, Not):
        return prop_vars(p.body)
    return prop_vars(p.left) | prop_vars(p.right)


def prop_unknowns(p: Prop) -> set[str]:
    if isinstance(p, (Top, Bot)):
        return set()
    if isinstance(p, Cmp):
        return arith_unknowns(p.left) | arith_unknowns(p.right)
    if isinstance(p, Not):
        return prop_unknowns(p.body)
    return prop_unknowns(p.left) | prop_unknowns(p.right)


def subst_prop(p: Prop, sub: dict[str, Arith]) -> Prop:
    if isinstance(p, (Top, Bot)):
        return p
    if isinstance(p, Cmp):
        return Cmp(p.op, subst_arith(p.left, sub), subst_arith(p.right, sub))
    if isinstance(p, Not):
        return Not(subst_prop(p.body, sub))
    if isinstance(p, And):
        return And(subst_prop(p.left, sub), subst_prop(p.right, sub))
    if isinstance(p, Or):
        return Or(subst_prop(p.left, sub), subst_prop(p.right, sub))
    return Implies(subst_prop(p.left, sub), subst_prop(p.right, sub))


def eval_prop(p: Prop, env: dict[str, int]) -> bool:
    if isinstance(p, Top):
        return True
    if isinstance(p, Bot):
        return False
    if isinstance(p, Cmp):
        a, b = eval_arith(p.left, env), eval_arith(p.right, env)
        return {"=": a == b, ">": a > b, ">=": a >= b, "<": a < b, "<=": a <= b}[p.op]
    if isinstance(p, Not):
        return not eval_prop(p.body, env)
    if isinstance(p, And):
        return eval_prop(p.left, env) and eval_prop(p.right, env)
    if isinstance(p, Or):
        return eval_prop(p.left, env) or eval_prop(p.right, env)
    return (not eval_prop(p.left, env)) or eval_prop(p.right, env)


def conj(props: "list[Prop] | tuple[Prop, ...]") -> Prop:
    """Right-nested conjunction of a list of constraints; empty list is Top."""
    out: Prop = TOP
    real = [p for p in props if not isinstance(p, Top)]
    if not real:
        return TOP
    out = real[-1]
    for p in reversed(real[:-1]):
        out = And(p, out)
    return out


# ---------------------------------------------------------------------------
# Session types


@dataclass(frozen=True)
class Plus:
    """Internal choice +{l1 : A1, ...}: the provider sends a label."""

    branches: tuple[tuple[str, "SessionType"], ...]

    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.branches)

    def branch(self, label: str) -> "SessionType":
        for l, a in self.branches:
            if l == label:
                return a
        raise KeyError(label)


@dataclass(frozen=True)
class With:
    """External choice &{l1 : A1, ...}: the provider receives a label."""

    branches: tuple[tuple[str, "SessionType"], ...]

    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.branches)

    def branch(self, label: str) -> "SessionType":
        for l, a in self.branches:
            if l == label:
                return a
        raise KeyError(label)


@dataclass(frozen=True)
class Tensor:
    """A * B: the provider sends a channel of type A, continues as B."""

    left: "SessionType"
    right: "SessionType"


@dataclass(frozen=True)
class Lolli:
    """A -o B: the provider receives a channel of type A, continues as B."""

    left: "SessionType"
    right: "SessionType"


@dataclass(frozen=True)
class One:
    pass


@dataclass(frozen=True)
class TpName:
    name: str
    args: tuple[Arith, ...] = ()


@dataclass(frozen=True)
class TpAssert:
    """?{phi}. A: the provider asserts phi (the client may assume it)."""

    phi: Prop
    cont: "SessionType"


@dataclass(frozen=True)
class TpAssume:
    """!{phi}. A: the provider assumes phi (the client must assert it)."""

    phi: Prop
    cont: "SessionType"


@dataclass(frozen=True)
class TpExists:
    """?n. A: the provider sends a natural-number witness for n."""

    var: str
    cont: "SessionType"


@dataclass(frozen=True)
class TpForall:
    """!n. A: the provider receives a natural-number witness for n."""

    var: str
    cont: "SessionType"


@dataclass(frozen=True)
class TpUnknown:
    """A structural unknown introduced during inference.

    Placeholder declaration types carry the declaration's index variables as
    args, so instantiating the declaration at a spawn site records the index
    substitution even before a structural candidate is assigned.
    """

    name: str
    args: tuple[Arith, ...] = ()


SessionType = Union[
    Plus, With, Tensor, Lolli, One, TpName, TpAssert, TpAssume, TpExists, TpForall, TpUnknown
]

ONE = One()


def type_vars(t: SessionType) -> set[str]:
    """Free index variables of a type (quantifiers bind)."""
    if isinstance(t, One):
        return set()
    if isinstance(t, (TpName, TpUnknown)):
        out: set[str] = set()
        for a in t.args:
            out |= arith_vars(a)
        return out
    if isinstance(t, (Plus, With)):
        out = set()
        for _, a in t.branches:
            out |= type_vars(a)
        return out
    if isinstance(t, (Tensor, Lolli)):
        return type_vars(t.left) | type_vars(t.right)
    if isinstance(t, (TpAssert, TpAssume)):
        return prop_vars(t.phi) | type_vars(t.cont)
    return type_vars(t.cont) - {t.var}


def type_unknowns(t: SessionType) -> set[str]:
    """Names of structural unknowns occurring in a type."""
    if isinstance(t, TpUnknown):
        return {t.name}
    if isinstance(t, (One, TpName)):
        return set()
    if isinstance(t, (Plus, With)):
        out: set[str] = set()
        for _, a in t.branches:
            out |= type_unknowns(a)
        return out
    if isinstance(t, (Tensor, Lolli)):
        return type_unknowns(t.left) | type_unknowns(t.right)
    return type_unknowns(t.cont)


_FRESH = [0]


def fresh_name(prefix: str) -> str:
    _FRESH[0] += 1
    return f"{prefix}{_FRESH[0]}"


def subst_type(t: SessionType, sub: dict[str, Arith]) -> SessionType:
    """Substitute arithmetic expressions for index variables in a type.

    Quantifiers are alpha-renamed when their bound variable would capture a
    variable free in the substitution's range.
    """
    if not sub:
        return t
    if isinstance(t, One):
        return t
    if isinstance(t, TpUnknown):
        return TpUnknown(t.name, tuple(subst_arith(a, sub) for a in t.args))
    if isinstance(t, TpName):
        return TpName(t.name, tuple(subst_arith(a, sub) for a in t.args))
    if isinstance(t, Plus):
        return Plus(tuple((l, subst_type(a, sub)) for l, a in t.branches))
    if isinstance(t, With):
        return With(tuple((l, subst_type(a, sub)) for l, a in t.branches))
    if isinstance(t, Tensor):
        return Tensor(subst_type(t.left, sub), subst_type(t.right, sub))
    if isinstance(t, Lolli):
        return Lolli(subst_type(t.left, sub), subst_type(t.right, sub))
    if isinstance(t, TpAssert):
        return TpAssert(subst_prop(t.phi, sub), subst_type(t.cont, sub))
    if isinstance(t, TpAssume):
        return TpAssume(subst_prop(t.phi, sub), subst_type(t.cont, sub))
    # quantifier
    inner = {k: v for k, v in sub.items() if k != t.var}
    captured = any(t.var in arith_vars(v) for v in inner.values())
    var = t.var
    cont = t.cont
    if captured:
        var = fresh_name(t.var + "_")
        cont = subst_type(cont, {t.var: Var(var)})
    cont = subst_type(cont, inner)
    return TpExists(var, cont) if isinstance(t, TpExists) else TpForall(var, cont)


# ---------------------------------------------------------------------------
# Processes


@dataclass(frozen=True)
class SendLabel:
    chan: str
    label: str
    cont: "Process"


@dataclass(frozen=True)
class Case:
    chan: str
    branches: tuple[tuple[str, "Process"], ...]


@dataclass(frozen=True)
class SendChan:
    chan: str
    payload: str
    cont: "Process"


@dataclass(frozen=True)
class RecvChan:
    bind: str
    chan: str
    cont: "Process"


@dataclass(frozen=True)
class Close:
    chan: str


@dataclass(frozen=True)
class Wait:
    chan: str
    cont: "Process"


@dataclass(frozen=True)
class Fwd:
    """offered <-> consumed forwarding."""

    offered: str
    consumed: str


@dataclass(frozen=True)
class Spawn:
    """bind <- proc[index_args] chan_args (; cont).

    A tail call (the spawn reuses the offered channel and has no
    continuation) is represented with cont = None.
    """

    bind: str
    proc: str
    index_args: tuple[Arith, ...]
    chan_args: tuple[str, ...]
    cont: Optional["Process"]


@dataclass(frozen=True)
class AssertP:
    chan: str
    phi: Prop
    cont: "Process"
    synthetic: bool = False  # inserted by reconstruction, removed by erasure


@dataclass(frozen=True)
class AssumeP:
    chan: str
    phi: Prop
    cont: "Process"
    synthetic: bool = False


@dataclass(frozen=True)
class SendWitness:
    chan: str
    expr: Optional[Arith]  # None is a hole `{_}` to be solved for
    cont: "Process"
    synthetic: bool = False


@dataclass(frozen=True)
class RecvWitness:
    bind: str
    chan: str
    cont: "Process"
    synthetic: bool = False


@dataclass(frozen=True)
class Impossible:
    synthetic: bool = False


Process = Union[
    SendLabel,
    Case,
    SendChan,
    RecvChan,
    Close,
    Wait,
    Fwd,
    Spawn,
    AssertP,
    AssumeP,
    SendWitness,
    RecvWitness,
    Impossible,
]


# ---------------------------------------------------------------------------
# Signatures


@dataclass(frozen=True)
class TypeDef:
    name: str
    params: tuple[str, ...]
    constraint: Prop
    body: SessionType


@dataclass(frozen=True)
class ProcDecl:
    name: str
    params: tuple[str, ...]
    constraint: Prop
    used: tuple[tuple[str, SessionType], ...]  # consumed channels, left to right
    offered_chan: str
    offered: SessionType


@dataclass(frozen=True)
class ProcDef:
    name: str
    params: tuple[str, ...]
    offered_chan: str
    arg_chans: tuple[str, ...]
    body: Process


@dataclass
class Signature:
    """A program: type definitions, process declarations, process definitions.

    Insertion order of type_defs is the declaration order used by inference.
    positions maps (kind, name) to (line, col) for diagnostics.
    """

    type_defs: dict[str, TypeDef] = field(default_factory=dict)
    decls: dict[str, ProcDecl] = field(default_factory=dict)
    defs: dict[str, ProcDef] = field(default_factory=dict)
    positions: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)

    def unfold(self, t: SessionType) -> SessionType:
        """One-step unfolding: expand a type-name application, else identity.

        Contractiveness of definitions guarantees one step reaches a
        structural constructor.
        """
        if isinstance(t, TpName):
            d = self.type_defs[t.name]
            if len(d.params) != len(t.args):
                raise KeyError(f"{t.name} expects {len(d.params)} indices")
            return subst_type(d.body, dict(zip(d.params, t.args)))
        return t

    def user_type_names(self) -> list[str]:
        """Type names eligible as inference candidates, in declaration order."""
        return [n for n in self.type_defs if not n.startswith("%")]


# ---------------------------------------------------------------------------
# Validation contexts


@dataclass(frozen=True)
class VC:
    """A pair of index variables in scope and constraints assumed on them."""

    vars: tuple[str, ...] = ()
    cons: tuple[Prop, ...] = ()

    def push_var(self, v: str) -> "VC":
        return VC(self.vars + (v,), self.cons)

    def push_con(self, p: Prop) -> "VC":
        if isinstance(p, Top):
            return self
        return VC(self.vars, self.cons + (p,))

    def ctx(self) -> Prop:
        return conj(list(self.cons))


class SourceError(Exception):
    """An error with a source position, formatted file:line:col style."""

    def __init__(self, code: str, msg: str, pos: tuple[int, int] | None = None):
        super().__init__(msg)
        self.code = code
        self.msg = msg
        self.pos = pos

    def render(self, filename: str = "<input>") -> str:
        line, col = self.pos if self.pos else (0, 0)
        return f"{filename}:{line}:{col}: error[{self.code}]: {self.msg}"
