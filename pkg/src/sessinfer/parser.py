"""Lexer and recursive-descent parser for the surface syntax.

Top level:

    type V[n][k | phi] = A
    decl f[n] : (x : A) (y : B) |- (z : C)
    proc z <- f[n] x y = P

Types:

    +{l : A, ...}   &{l : A, ...}   A * B   A -o B   1   V[e][e]
    ?{phi}. A   !{phi}. A   ?n. A   !n. A

Processes:

    x.k; P   case x (l => P | ...)   send x y; P   y <- recv x; P
    close x   wait x; P   x <-> y   x <- f[e] y1 y2; P (tail call omits ; P)
    assert x {phi}; P   assume x {phi}; P   send x {e}; P   {n} <- recv x; P
    impossible

Comments run from % to end of line.
"""

from __future__ import annotations

from dataclasses import dataclass

from .syntax import (
    Add, And, Arith, AssertP, AssumeP, BOT, Bot, Case, Close, Cmp, Const, Fwd,
    Impossible, Implies, Lolli, Mul, Not, ONE, Or, Plus, Process, ProcDecl,
    ProcDef, Prop, RecvChan, RecvWitness, SendChan, SendLabel, SendWitness,
    SessionType, Signature, SourceError, Spawn, Sub, Tensor, TOP, Top,
    TpAssert, TpAssume, TpExists, TpForall, TpName, TypeDef, Var, Wait, With,
)

KEYWORDS = {
    "type", "decl", "proc", "case", "close", "wait", "send", "recv",
    "assert", "assume", "impossible",
}

SYMBOLS = [
    "|-", "<->", "<-", "<=", "<", "=>", ">=", ">", "=", "-o", "-", "+", "*",
    "\\/", "/\\", "~", "(", ")", "{", "}", "[", "]", ",", ":", ";", ".", "|",
    "&", "_", "?", "!",
]


@dataclass(frozen=True)
class Token:
    kind: str  # 'ident', 'num', 'kw', or the symbol itself
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    line, col, i = 1, 1, 0
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "%":
            while i < n and src[i] != "\n":
                i += 1
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            toks.append(Token("num", src[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha():
            j = i
            while j < n and (src[j].isalnum() or src[j] in "_'"):
                j += 1
            text = src[i:j]
            toks.append(Token("kw" if text in KEYWORDS else "ident", text, line, col))
            col += j - i
            i = j
            continue
        for sym in SYMBOLS:
            if src.startswith(sym, i):
                toks.append(Token(sym, sym, line, col))
                col += len(sym)
                i += len(sym)
                break
        else:
            raise SourceError("parse", f"unexpected character {c!r}", (line, col))
    toks.append(Token("eof", "", line, col))
    return toks


class Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.pos = 0

    # -- token plumbing -----------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.peek()
        if not self.at(kind, text):
            want = text or kind
            raise SourceError("parse", f"expected {want!r}, found {t.text or t.kind!r}",
                              (t.line, t.col))
        return self.next()

    def err(self, msg: str) -> SourceError:
        t = self.peek()
        return SourceError("parse", msg, (t.line, t.col))

    # -- arithmetic ---------------------------------------------------------

    def parse_arith(self) -> Arith:
        e = self.parse_term()
        while self.at("+") or self.at("-"):
            op = self.next().kind
            rhs = self.parse_term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def parse_term(self) -> Arith:
        e = self.parse_factor()
        while self.at("*"):
            self.next()
            e = Mul(e, self.parse_factor())
        return e

    def parse_factor(self) -> Arith:
        if self.at("num"):
            return Const(int(self.next().text))
        if self.at("ident"):
            return Var(self.next().text)
        if self.at("("):
            self.next()
            e = self.parse_arith()
            self.expect(")")
            return e
        raise self.err("expected an arithmetic expression")

    # -- constraints --------------------------------------------------------

    def parse_prop(self) -> Prop:
        p = self.parse_prop_or()
        if self.at("=>"):
            self.next()
            return Implies(p, self.parse_prop())
        return p

    def parse_prop_or(self) -> Prop:
        p = self.parse_prop_and()
        while self.at("\\/"):
            self.next()
            p = Or(p, self.parse_prop_and())
        return p

    def parse_prop_and(self) -> Prop:
        p = self.parse_prop_atom()
        while self.at("/\\"):
            self.next()
            p = And(p, self.parse_prop_atom())
        return p

    def parse_prop_atom(self) -> Prop:
        if self.at("~"):
            self.next()
            return Not(self.parse_prop_atom())
        if self.at("ident", "true"):
            self.next()
            return TOP
        if self.at("ident", "false"):
            self.next()
            return BOT
        if self.at("("):
            # either a parenthesised constraint or an arithmetic grouping:
            # scan ahead for a comparison before the matching close paren.
            save = self.pos
            try:
                self.next()
                p = self.parse_prop()
                self.expect(")")
                return p
            except SourceError:
                self.pos = save
        left = self.parse_arith()
        t = self.peek()
        if t.kind not in ("=", ">", ">=", "<", "<="):
            raise self.err("expected a comparison operator")
        self.next()
        right = self.parse_arith()
        return Cmp(t.kind, left, right)

    # -- types --------------------------------------------------------------

    def parse_type(self) -> SessionType:
        # refinement and quantifier prefixes consume a whole type
        if self._at_prefix():
            return self.parse_prefix()
        return self.parse_lolli()

    def _at_prefix(self) -> bool:
        return self.peek().kind in ("?", "!")

    def parse_prefix(self) -> SessionType:
        mark = self.next()  # '?' or '!'
        if self.at("{"):
            self.next()
            phi = self.parse_prop()
            self.expect("}")
            self.expect(".")
            cont = self.parse_type()
            return TpAssert(phi, cont) if mark.text == "?" else TpAssume(phi, cont)
        v = self.expect("ident").text
        self.expect(".")
        cont = self.parse_type()
        return TpExists(v, cont) if mark.text == "?" else TpForall(v, cont)

    def parse_lolli(self) -> SessionType:
        lhs = self.parse_tensor()
        if self.at("-o"):
            self.next()
            return Lolli(lhs, self.parse_type())
        return lhs

    def parse_tensor(self) -> SessionType:
        lhs = self.parse_type_atom()
        if self.at("*"):
            self.next()
            rhs = self.parse_prefix() if self._at_prefix() else self.parse_tensor()
            return Tensor(lhs, rhs)
        return lhs

    def parse_type_atom(self) -> SessionType:
        if self._at_prefix():
            return self.parse_prefix()
        if self.at("num"):
            t = self.next()
            if t.text != "1":
                raise SourceError("parse", "the only numeric type is 1", (t.line, t.col))
            return ONE
        if self.at("+") or self.at("&"):
            mark = self.next().kind
            self.expect("{")
            branches = []
            while True:
                lab = self.expect("ident").text
                self.expect(":")
                branches.append((lab, self.parse_type()))
                if self.at(","):
                    self.next()
                    continue
                break
            self.expect("}")
            labs = [l for l, _ in branches]
            if len(set(labs)) != len(labs):
                raise self.err("duplicate branch label")
            return Plus(tuple(branches)) if mark == "+" else With(tuple(branches))
        if self.at("("):
            self.next()
            ty = self.parse_type()
            self.expect(")")
            return ty
        if self.at("ident"):
            name = self.next().text
            args = []
            while self.at("["):
                self.next()
                args.append(self.parse_arith())
                self.expect("]")
            return TpName(name, tuple(args))
        raise self.err("expected a type")

    # -- processes ----------------------------------------------------------

    def parse_process(self) -> Process:
        t = self.peek()
        if t.kind == "kw":
            return self.parse_keyword_stmt()
        if self.at("{"):
            self.next()
            v = self.expect("ident").text
            self.expect("}")
            self.expect("<-")
            self.expect("kw", "recv")
            ch = self.expect("ident").text
            self.expect(";")
            return RecvWitness(v, ch, self.parse_process())
        if self.at("ident"):
            name = self.next().text
            if self.at("."):
                self.next()
                lab = self.expect("ident").text
                self.expect(";")
                return SendLabel(name, lab, self.parse_process())
            if self.at("<->"):
                self.next()
                other = self.expect("ident").text
                return Fwd(name, other)
            if self.at("<-"):
                self.next()
                if self.at("kw", "recv"):
                    self.next()
                    ch = self.expect("ident").text
                    self.expect(";")
                    return RecvChan(name, ch, self.parse_process())
                return self.parse_spawn(name)
        raise self.err("expected a process")

    def parse_spawn(self, bind: str) -> Process:
        f = self.expect("ident").text
        index_args = []
        while self.at("["):
            self.next()
            index_args.append(self.parse_arith())
            self.expect("]")
        chans = []
        while self.at("ident"):
            chans.append(self.next().text)
        cont = None
        if self.at(";"):
            self.next()
            cont = self.parse_process()
        return Spawn(bind, f, tuple(index_args), tuple(chans), cont)

    def parse_keyword_stmt(self) -> Process:
        kw = self.next().text
        if kw == "close":
            return Close(self.expect("ident").text)
        if kw == "wait":
            ch = self.expect("ident").text
            self.expect(";")
            return Wait(ch, self.parse_process())
        if kw == "impossible":
            return Impossible()
        if kw == "case":
            ch = self.expect("ident").text
            self.expect("(")
            branches = []
            while True:
                lab = self.expect("ident").text
                self.expect("=>")
                branches.append((lab, self.parse_process()))
                if self.at("|"):
                    self.next()
                    continue
                break
            self.expect(")")
            labs = [l for l, _ in branches]
            if len(set(labs)) != len(labs):
                raise self.err("duplicate case label")
            return Case(ch, tuple(branches))
        if kw == "send":
            ch = self.expect("ident").text
            if self.at("{"):
                self.next()
                if self.at("_"):
                    self.next()
                    expr = None
                else:
                    expr = self.parse_arith()
                self.expect("}")
                self.expect(";")
                return SendWitness(ch, expr, self.parse_process())
            payload = self.expect("ident").text
            self.expect(";")
            return SendChan(ch, payload, self.parse_process())
        if kw in ("assert", "assume"):
            ch = self.expect("ident").text
            self.expect("{")
            phi = self.parse_prop()
            self.expect("}")
            self.expect(";")
            cont = self.parse_process()
            return AssertP(ch, phi, cont) if kw == "assert" else AssumeP(ch, phi, cont)
        raise self.err(f"unexpected keyword {kw!r}")

    # -- top level ----------------------------------------------------------

    def parse_params(self) -> tuple[tuple[str, ...], Prop]:
        """Index parameter brackets [n][k | phi]; the constraint goes last."""
        params: list[str] = []
        phi: Prop = TOP
        while self.at("["):
            self.next()
            params.append(self.expect("ident").text)
            if self.at("|"):
                self.next()
                phi = self.parse_prop()
                self.expect("]")
                if self.at("["):
                    raise self.err("the parameter constraint must come last")
                break
            self.expect("]")
        if len(set(params)) != len(params):
            raise self.err("duplicate index parameter")
        return tuple(params), phi

    def parse_signature(self) -> Signature:
        sig = Signature()
        while not self.at("eof"):
            t = self.peek()
            pos = (t.line, t.col)
            if self.at("kw", "type"):
                self.next()
                name = self.expect("ident").text
                params, phi = self.parse_params()
                self.expect("=")
                body = self.parse_type()
                if name in sig.type_defs:
                    raise SourceError("parse", f"duplicate type {name}", pos)
                sig.type_defs[name] = TypeDef(name, params, phi, body)
                sig.positions[("type", name)] = pos
            elif self.at("kw", "decl"):
                self.next()
                name = self.expect("ident").text
                params, phi = self.parse_params()
                self.expect(":")
                used = []
                if self.at("."):
                    self.next()
                else:
                    while self.at("("):
                        self.next()
                        ch = self.expect("ident").text
                        self.expect(":")
                        used.append((ch, self.parse_type()))
                        self.expect(")")
                self.expect("|-")
                self.expect("(")
                och = self.expect("ident").text
                self.expect(":")
                oty = self.parse_type()
                self.expect(")")
                if name in sig.decls:
                    raise SourceError("parse", f"duplicate decl {name}", pos)
                chans = [ch for ch, _ in used] + [och]
                if len(set(chans)) != len(chans):
                    raise SourceError("parse", f"duplicate channel name in decl {name}", pos)
                sig.decls[name] = ProcDecl(name, params, phi, tuple(used), och, oty)
                sig.positions[("decl", name)] = pos
            elif self.at("kw", "proc"):
                self.next()
                och = self.expect("ident").text
                self.expect("<-")
                name = self.expect("ident").text
                params, phi = self.parse_params()
                if not isinstance(phi, Top):
                    raise SourceError("parse", "proc definitions take constraints from their decl", pos)
                args = []
                while self.at("ident"):
                    args.append(self.next().text)
                self.expect("=")
                body = self.parse_process()
                if name in sig.defs:
                    raise SourceError("parse", f"duplicate proc {name}", pos)
                chans = args + [och]
                if len(set(chans)) != len(chans):
                    raise SourceError("parse", f"duplicate channel name in proc {name}", pos)
                sig.defs[name] = ProcDef(name, params, och, tuple(args), body)
                sig.positions[("proc", name)] = pos
            else:
                raise SourceError("parse", "expected 'type', 'decl' or 'proc'", pos)
        return sig


def parse_signature(src: str) -> Signature:
    return Parser(src).parse_signature()


def parse_type(src: str) -> SessionType:
    p = Parser(src)
    t = p.parse_type()
    p.expect("eof")
    return t


def parse_process(src: str) -> Process:
    p = Parser(src)
    body = p.parse_process()
    p.expect("eof")
    return body


def parse_prop(src: str) -> Prop:
    p = Parser(src)
    phi = p.parse_prop()
    p.expect("eof")
    return phi


def parse_arith(src: str) -> Arith:
    p = Parser(src)
    e = p.parse_arith()
    p.expect("eof")
    return e
