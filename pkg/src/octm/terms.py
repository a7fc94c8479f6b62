"""OCTM term language: AST nodes, free variables and substitution.

Terms are immutable. Several derived facts (free variables, a printed
skeleton used for fingerprinting) are cached on the node the first time
they are asked for, so shared subterms are only analysed once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator


class Term:
    """Base class of every OCTM term."""

    def children(self) -> tuple["Term", ...]:
        return ()

    def binders(self) -> tuple[str, ...]:
        return ()

    @cached_property
    def fv(self) -> frozenset[str]:
        out: set[str] = set()
        for child in self.children():
            out |= child.fv
        return frozenset(out)

    @cached_property
    def skeleton(self) -> tuple[str, tuple]:
        # lazy import: printer depends on this module
        from octm.printer import skeleton

        return skeleton(self)

    @cached_property
    def shape(self) -> tuple[bytes, tuple]:
        from octm.printer import shape

        return shape(self)


# -- literals -------------------------------------------------------------

@dataclass(frozen=True)
class Nonce:
    tid: int
    count: int


@dataclass(frozen=True)
class Lit(Term):
    """Literal value. ``kind`` is one of int, bool, unit, nonce, tid."""

    kind: str
    value: object = None

    @cached_property
    def fv(self) -> frozenset[str]:
        return frozenset()


def Int(n: int) -> Lit:
    return Lit("int", n)


def Bool(b: bool) -> Lit:
    return Lit("bool", bool(b))


UNIT = Lit("unit", None)
TRUE = Lit("bool", True)
FALSE = Lit("bool", False)


def TidLit(tid: int) -> Lit:
    return Lit("tid", tid)


def NonceLit(tid: int, count: int) -> Lit:
    return Lit("nonce", Nonce(tid, count))


# -- core ---------------------------------------------------------------

@dataclass(frozen=True)
class Var(Term):
    name: str

    @cached_property
    def fv(self) -> frozenset[str]:
        return frozenset((self.name,))


@dataclass(frozen=True)
class Loc(Term):
    id: int

    @cached_property
    def fv(self) -> frozenset[str]:
        return frozenset()


@dataclass(frozen=True)
class Lam(Term):
    param: str
    body: Term

    def children(self):
        return (self.body,)

    @cached_property
    def fv(self) -> frozenset[str]:
        return self.body.fv - {self.param}


@dataclass(frozen=True)
class App(Term):
    fn: Term
    arg: Term

    def children(self):
        return (self.fn, self.arg)


@dataclass(frozen=True)
class Con(Term):
    tag: str
    args: tuple[Term, ...] = ()

    def children(self):
        return self.args


@dataclass(frozen=True)
class PrimOp(Term):
    """Binary primitive: ``==``, ``+``, ``-``, ``*``, ``<``."""

    op: str
    left: Term
    right: Term

    def children(self):
        return (self.left, self.right)


def PrimEq(left: Term, right: Term) -> PrimOp:
    return PrimOp("==", left, right)


@dataclass(frozen=True)
class Pattern:
    """Case pattern.

    kind is ``con`` (tag + variable names), ``lit`` (literal), ``var``
    (binds the scrutinee) or ``wild``.
    """

    kind: str
    tag: str = ""
    vars: tuple[str, ...] = ()
    lit: Lit | None = None

    def bound(self) -> tuple[str, ...]:
        if self.kind == "con":
            return tuple(v for v in self.vars if v != "_")
        if self.kind == "var":
            return (self.vars[0],)
        return ()


def PCon(tag: str, *vars: str) -> Pattern:
    return Pattern("con", tag, tuple(vars))


def PLit(lit: Lit) -> Pattern:
    return Pattern("lit", lit=lit)


def PVar(name: str) -> Pattern:
    return Pattern("var", vars=(name,))


PWILD = Pattern("wild")


@dataclass(frozen=True)
class Branch:
    pattern: Pattern
    body: Term


@dataclass(frozen=True)
class Case(Term):
    scrutinee: Term
    branches: tuple[Branch, ...]

    def children(self):
        return (self.scrutinee,) + tuple(b.body for b in self.branches)

    @cached_property
    def fv(self) -> frozenset[str]:
        out = set(self.scrutinee.fv)
        for b in self.branches:
            out |= b.body.fv - set(b.pattern.bound())
        return frozenset(out)


@dataclass(frozen=True)
class LetRec(Term):
    """``let rec name = bound in body``; name scopes over both."""

    name: str
    bound: Term
    body: Term

    def children(self):
        return (self.bound, self.body)

    @cached_property
    def fv(self) -> frozenset[str]:
        return (self.bound.fv | self.body.fv) - {self.name}


# -- monadic constructors (values to the pure evaluator) ------------------

@dataclass(frozen=True)
class Return(Term):
    value: Term

    def children(self):
        return (self.value,)


@dataclass(frozen=True)
class Bind(Term):
    left: Term
    right: Term

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class NewVar(Term):
    init: Term
    tag: str = ""

    def children(self):
        return (self.init,)


@dataclass(frozen=True)
class ReadVar(Term):
    ref: Term

    def children(self):
        return (self.ref,)


@dataclass(frozen=True)
class WriteVar(Term):
    ref: Term
    value: Term

    def children(self):
        return (self.ref, self.value)


@dataclass(frozen=True)
class Fork(Term):
    body: Term

    def children(self):
        return (self.body,)


@dataclass(frozen=True)
class Atomic(Term):
    body: Term
    compensation: Term

    def children(self):
        return (self.body, self.compensation)


@dataclass(frozen=True)
class Isolated(Term):
    body: Term

    def children(self):
        return (self.body,)


@dataclass(frozen=True)
class Abort(Term):
    value: Term

    def children(self):
        return (self.value,)


@dataclass(frozen=True)
class _Retry(Term):
    @cached_property
    def fv(self) -> frozenset[str]:
        return frozenset()


@dataclass(frozen=True)
class _NewNonce(Term):
    @cached_property
    def fv(self) -> frozenset[str]:
        return frozenset()


Retry = _Retry()
NewNonce = _NewNonce()

MONADIC = (Return, Bind, NewVar, ReadVar, WriteVar, Fork, Atomic, Isolated,
           Abort, _Retry, _NewNonce)

# ``return`` used as a function, e.g. the default compensation of a fork.
RETURN_FN = Lam("x", Return(Var("x")))


def seq(first: Term, then: Term) -> Bind:
    """``first >> then``."""
    return Bind(first, Lam("_", then))


def lam(params: str, body: Term) -> Term:
    for p in reversed(params.split()):
        body = Lam(p, body)
    return body


def apply(fn: Term, *args: Term) -> Term:
    for a in args:
        fn = App(fn, a)
    return fn


def is_value(t: Term) -> bool:
    if isinstance(t, (Lam, Loc, Lit) + MONADIC):
        return True
    if isinstance(t, Con):
        return all(is_value(a) for a in t.args)
    return False


# -- substitution -----------------------------------------------------------

def _fresh(name: str, avoid: frozenset[str] | set[str]) -> str:
    cand = name + "'"
    while cand in avoid:
        cand += "'"
    return cand


def rebuild(t: Term, kids: list[Term]) -> Term:
    """Return a copy of ``t`` with its children replaced (same arity)."""
    if isinstance(t, Lam):
        return Lam(t.param, kids[0])
    if isinstance(t, App):
        return App(kids[0], kids[1])
    if isinstance(t, Con):
        return Con(t.tag, tuple(kids))
    if isinstance(t, PrimOp):
        return PrimOp(t.op, kids[0], kids[1])
    if isinstance(t, Case):
        return Case(kids[0], tuple(Branch(b.pattern, k)
                                   for b, k in zip(t.branches, kids[1:])))
    if isinstance(t, LetRec):
        return LetRec(t.name, kids[0], kids[1])
    if isinstance(t, Return):
        return Return(kids[0])
    if isinstance(t, Bind):
        return Bind(kids[0], kids[1])
    if isinstance(t, NewVar):
        return NewVar(kids[0], t.tag)
    if isinstance(t, ReadVar):
        return ReadVar(kids[0])
    if isinstance(t, WriteVar):
        return WriteVar(kids[0], kids[1])
    if isinstance(t, Fork):
        return Fork(kids[0])
    if isinstance(t, Atomic):
        return Atomic(kids[0], kids[1])
    if isinstance(t, Isolated):
        return Isolated(kids[0])
    if isinstance(t, Abort):
        return Abort(kids[0])
    return t


def substitute(body: Term, var: str, value: Term) -> Term:
    """Capture-avoiding ``body[value/var]``."""
    if var not in body.fv:
        return body
    if isinstance(body, Var):
        return value
    vfv = value.fv
    if isinstance(body, Lam):
        if body.param == var:
            return body
        if body.param in vfv:
            new = _fresh(body.param, vfv | body.body.fv | {var})
            inner = substitute(body.body, body.param, Var(new))
            return Lam(new, substitute(inner, var, value))
        return Lam(body.param, substitute(body.body, var, value))
    if isinstance(body, LetRec):
        if body.name == var:
            return body
        name, bound, rest = body.name, body.bound, body.body
        if name in vfv:
            new = _fresh(name, vfv | bound.fv | rest.fv | {var})
            bound = substitute(bound, name, Var(new))
            rest = substitute(rest, name, Var(new))
            name = new
        return LetRec(name, substitute(bound, var, value),
                      substitute(rest, var, value))
    if isinstance(body, Case):
        branches = []
        for b in body.branches:
            bound_vars = b.pattern.bound()
            if var in bound_vars:
                branches.append(b)
                continue
            pat, bbody = b.pattern, b.body
            clash = [v for v in bound_vars if v in vfv]
            if clash:
                avoid = set(vfv | bbody.fv | {var})
                renames = {}
                for v in clash:
                    nv = _fresh(v, avoid)
                    avoid.add(nv)
                    renames[v] = nv
                    bbody = substitute(bbody, v, Var(nv))
                pat = Pattern(pat.kind, pat.tag,
                              tuple(renames.get(v, v) for v in pat.vars), pat.lit)
            branches.append(Branch(pat, substitute(bbody, var, value)))
        return Case(substitute(body.scrutinee, var, value), tuple(branches))
    return rebuild(body, [substitute(k, var, value) for k in body.children()])


def subterms(t: Term) -> Iterator[Term]:
    stack = [t]
    while stack:
        cur = stack.pop()
        yield cur
        stack.extend(cur.children())


def map_leaves(t: Term, fn) -> Term:
    """Rebuild ``t`` applying ``fn`` to every Loc and Lit leaf.

    ``fn`` returns the replacement leaf (or the same object).
    """
    if isinstance(t, (Loc, Lit)):
        return fn(t)
    kids = t.children()
    if not kids:
        return t
    new = [map_leaves(k, fn) for k in kids]
    if all(a is b for a, b in zip(new, kids)):
        return t
    return rebuild(t, new)
