"""Concrete syntax for OCTM programs.

Layout-insensitive: ``do`` blocks and ``case`` alternatives use braces and
semicolons. A program is a sequence of ``def`` declarations followed by
the main expression::

    def up c = do { n <- readVar c; writeVar c (n + 1) };
    do { c <- newVar 0; up c; readVar c }

Declarations become nested ``LetRec`` binders around the main expression.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from octm.terms import (
    FALSE, TRUE, UNIT, Abort, App, Atomic, Bind, Branch, Case, Con, Fork, Int,
    Isolated, Lam, LetRec, Lit, Loc, NewNonce, NewVar, NonceLit, PrimOp,
    RETURN_FN, ReadVar, Retry, Return, Term, TidLit, Var, WriteVar, PCon,
    PLit, PVar,
    PWILD, Pattern,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # ident, con, int, sym, kw, runtime, eof
    text: str
    line: int
    col: int


KEYWORDS = {
    "do", "case", "of", "let", "rec", "in", "def", "if", "then", "else",
    "return", "newVar", "readVar", "writeVar", "fork", "atomic", "isolated",
    "abort", "retry", "newNonce", "True", "False",
}

BUILTIN_ARITY = {
    "return": 1, "newVar": 1, "readVar": 1, "writeVar": 2, "fork": 1,
    "atomic": 2, "isolated": 1, "abort": 1,
}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>--[^\n]*)
  | (?P<runtime>@\d+|\#nonce\(\d+,\d+\)|\#tid\(\d+\))
  | (?P<int>\d+)
  | (?P<ident>[a-z_][A-Za-z0-9_']*)
  | (?P<con>[A-Z][A-Za-z0-9_']*)
  | (?P<sym>>>=|>>|->|<-|==|[\\(){}\[\];,+\-*<=])
""", re.VERBOSE)


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        pos = m.end()
        if kind == "nl":
            line += 1
            line_start = pos
            continue
        if kind in ("ws", "comment"):
            continue
        if kind in ("ident", "con") and text in KEYWORDS:
            kind = "kw"
        tokens.append(Token(kind, text, line, col))
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class Parser:
    def __init__(self, source: str, runtime: bool = False,
                 free: frozenset[str] = frozenset()):
        self.toks = tokenize(source)
        self.i = 0
        self.runtime = runtime
        self.scope: list[str] = list(free)
        self._fresh = 0

    # -- token helpers --
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("sym", "kw")

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.error(f"expected identifier, found {self.tok.text!r}")
        return self.advance().text

    def fresh(self) -> str:
        self._fresh += 1
        return f"_a{self._fresh}"

    # -- scoping --
    def bound(self, names, fn):
        names = [n for n in names if n != "_"]
        self.scope.extend(names)
        try:
            return fn()
        finally:
            del self.scope[len(self.scope) - len(names):]

    # -- grammar --
    def program(self) -> Term:
        defs = []
        while self.at("def"):
            self.advance()
            name = self.ident()
            params = []
            while self.tok.kind == "ident":
                params.append(self.ident())
            self.expect("=")
            self.scope.append(name)
            body = self.bound(params, self.expr)
            for p in reversed(params):
                body = Lam(p, body)
            self.expect(";")
            defs.append((name, body))
        if self.tok.kind == "eof":
            self.error("program has no main expression")
        main = self.expr()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        del self.scope[len(self.scope) - len(defs):]
        for name, body in reversed(defs):
            main = LetRec(name, body, main)
        return main

    def expr(self) -> Term:
        left = self.cmp()
        while self.at(">>=") or self.at(">>"):
            op = self.advance().text
            right = self.cmp()
            left = Bind(left, right) if op == ">>=" else Bind(left, Lam("_", right))
        return left

    def cmp(self) -> Term:
        left = self.arith()
        if self.at("==") or self.at("<"):
            op = self.advance().text
            left = PrimOp(op, left, self.arith())
        return left

    def arith(self) -> Term:
        left = self.app()
        while self.at("+") or self.at("-") or self.at("*"):
            op = self.advance().text
            left = PrimOp(op, left, self.app())
        return left

    def starts_atom(self) -> bool:
        t = self.tok
        if t.kind in ("ident", "con", "int", "runtime"):
            return True
        if t.kind == "kw":
            return t.text not in ("of", "in", "then", "else", "def", "rec")
        return t.text in ("(", "\\")

    def app(self) -> Term:
        t = self.tok
        if t.kind == "kw" and t.text in BUILTIN_ARITY:
            self.advance()
            tag = ""
            if t.text == "newVar" and self.at("["):
                self.advance()
                tag = self.ident()
                self.expect("]")
            args = []
            while len(args) < BUILTIN_ARITY[t.text] and self.starts_atom():
                args.append(self.atom())
            head = self.builtin(t.text, args, tag)
        elif t.kind == "con":
            self.advance()
            args = []
            while self.starts_atom():
                args.append(self.atom())
            return Con(t.text, tuple(args))
        else:
            head = self.atom()
        while self.starts_atom():
            head = App(head, self.atom())
        return head

    def builtin(self, name: str, args: list[Term], tag: str = "") -> Term:
        arity = BUILTIN_ARITY[name]
        if name == "return" and not args:
            return RETURN_FN
        params = [self.fresh() for _ in range(arity - len(args))]
        full = args + [Var(p) for p in params]
        if name == "return":
            term = Return(full[0])
        elif name == "newVar":
            term = NewVar(full[0], tag)
        elif name == "readVar":
            term = ReadVar(full[0])
        elif name == "writeVar":
            term = WriteVar(full[0], full[1])
        elif name == "fork":
            term = Fork(full[0])
        elif name == "atomic":
            term = Atomic(full[0], full[1])
        elif name == "isolated":
            term = Isolated(full[0])
        else:
            term = Abort(full[0])
        for p in reversed(params):
            term = Lam(p, term)
        return term

    def atom(self) -> Term:
        t = self.tok
        if t.kind == "int":
            self.advance()
            return Int(int(t.text))
        if t.kind == "runtime":
            if not self.runtime:
                self.error("runtime value in source text", t)
            self.advance()
            return _runtime_leaf(t.text)
        if t.kind == "ident":
            self.advance()
            if t.text not in self.scope:
                self.error(f"unbound variable {t.text!r}", t)
            return Var(t.text)
        if t.kind == "con":
            self.advance()
            return Con(t.text, ())
        if t.text == "True":
            self.advance()
            return TRUE
        if t.text == "False":
            self.advance()
            return FALSE
        if t.text == "retry":
            self.advance()
            return Retry
        if t.text == "newNonce":
            self.advance()
            return NewNonce
        if t.kind == "kw" and t.text in BUILTIN_ARITY:
            return self.app()
        if t.text == "(":
            return self.paren()
        if t.text == "\\":
            return self.lambda_()
        if t.text == "do":
            return self.do_block()
        if t.text == "case":
            return self.case()
        if t.text == "let":
            return self.let()
        if t.text == "if":
            return self.if_()
        self.error(f"unexpected {t.text or 'end of input'!r}")

    def paren(self) -> Term:
        self.expect("(")
        if self.at(")"):
            self.advance()
            return UNIT
        if self.at("-") and self.toks[self.i + 1].kind == "int":
            self.advance()
            n = int(self.advance().text)
            self.expect(")")
            return Int(-n)
        inner = self.expr()
        if self.at(","):
            self.advance()
            second = self.expr()
            self.expect(")")
            return Con("Pair", (inner, second))
        self.expect(")")
        return inner

    def lambda_(self) -> Term:
        self.expect("\\")
        params = [self.ident()]
        while self.tok.kind == "ident":
            params.append(self.ident())
        self.expect("->")
        body = self.bound(params, self.expr)
        for p in reversed(params):
            body = Lam(p, body)
        return body

    def do_block(self) -> Term:
        start = self.expect("do")
        self.expect("{")
        stmts: list[tuple[str | None, Term]] = []

        def parse_stmts():
            if self.at("}"):
                return
            if self.tok.kind == "ident" and self.toks[self.i + 1].text == "<-":
                name = self.advance().text
                self.advance()
                rhs = self.expr()
                stmts.append((name, rhs))
                if self.at(";"):
                    self.advance()
                self.bound([name], parse_stmts)
                return
            stmts.append((None, self.expr()))
            if self.at(";"):
                self.advance()
                parse_stmts()

        parse_stmts()
        self.expect("}")
        if not stmts:
            self.error("empty do block", start)
        if stmts[-1][0] is not None:
            self.error("last statement of a do block must be an expression", start)
        term = stmts[-1][1]
        for name, rhs in reversed(stmts[:-1]):
            term = Bind(rhs, Lam(name or "_", term))
        return term

    def pattern(self) -> Pattern:
        t = self.tok
        if t.kind == "con":
            self.advance()
            vars_ = []
            while self.tok.kind == "ident":
                vars_.append(self.ident())
            return PCon(t.text, *vars_)
        if t.kind == "ident":
            self.advance()
            return PWILD if t.text == "_" else PVar(t.text)
        if t.kind == "int":
            self.advance()
            return PLit(Int(int(t.text)))
        if t.text in ("True", "False"):
            self.advance()
            return PLit(TRUE if t.text == "True" else FALSE)
        if t.text == "(":
            self.advance()
            if self.at(")"):
                self.advance()
                return PLit(UNIT)
            a = self.ident()
            self.expect(",")
            b = self.ident()
            self.expect(")")
            return PCon("Pair", a, b)
        self.error(f"bad pattern {t.text!r}")

    def case(self) -> Term:
        self.expect("case")
        scrut = self.expr()
        self.expect("of")
        self.expect("{")
        branches = []
        while True:
            pat = self.pattern()
            self.expect("->")
            body = self.bound(list(pat.bound()), self.expr)
            branches.append(Branch(pat, body))
            if self.at(";"):
                self.advance()
                if self.at("}"):
                    break
                continue
            break
        self.expect("}")
        return Case(scrut, tuple(branches))

    def let(self) -> Term:
        self.expect("let")
        rec = False
        if self.at("rec"):
            self.advance()
            rec = True
        name = self.ident()
        params = []
        while self.tok.kind == "ident":
            params.append(self.ident())
        self.expect("=")
        if rec:
            bound = self.bound([name] + params, self.expr)
        else:
            bound = self.bound(params, self.expr)
        for p in reversed(params):
            bound = Lam(p, bound)
        self.expect("in")
        body = self.bound([name], self.expr)
        if rec:
            return LetRec(name, bound, body)
        return App(Lam(name, body), bound)

    def if_(self) -> Term:
        self.expect("if")
        cond = self.expr()
        self.expect("then")
        yes = self.expr()
        self.expect("else")
        no = self.expr()
        return Case(cond, (Branch(PLit(TRUE), yes), Branch(PLit(FALSE), no)))


def _runtime_leaf(text: str) -> Term:
    if text.startswith("@"):
        return Loc(int(text[1:]))
    nums = [int(x) for x in re.findall(r"\d+", text)]
    if text.startswith("#nonce"):
        return NonceLit(nums[0], nums[1])
    return TidLit(nums[0])


def parse_program(source: str, *, runtime: bool = False,
                  free: frozenset[str] | set[str] = frozenset()) -> Term:
    """Parse and desugar a program. ``free`` names may occur unbound."""
    return Parser(source, runtime=runtime, free=frozenset(free)).program()


def parse_term(source: str, *, runtime: bool = False,
               free: frozenset[str] | set[str] = frozenset()) -> Term:
    p = Parser(source, runtime=runtime, free=frozenset(free))
    term = p.expr()
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r}")
    return term
