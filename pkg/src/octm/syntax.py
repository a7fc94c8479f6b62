"""Pure evaluation and evaluation contexts.

``pure_eval`` is the deterministic evaluator behind the Eval rule: call by
value, left to right. Monadic constructors are values and are never
reduced here; the step engine interprets them.

An evaluation context is the spine of left-nested binds, stored as a
tuple of right operands, innermost first. ``()`` is the hole.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

from octm.parser import ParseError, parse_program, parse_term
from octm.terms import (
    MONADIC, App, Bind, Case, Con, Lam, LetRec, Lit, Loc, PrimOp, Term, Var,
    Bool, Int, is_value, substitute,
)

__all__ = [
    "ParseError", "parse_program", "parse_term", "substitute", "Stuck",
    "FuelExhausted", "pure_eval", "decompose", "recompose", "EvalContext",
    "HOLE", "match_pattern",
]

DEFAULT_FUEL = 100_000

EvalContext = tuple  # right operands of enclosing binds, innermost first
HOLE: EvalContext = ()


@dataclass(frozen=True)
class Stuck:
    """Result of evaluating a term that is neither a value nor reducible."""

    reason: str
    term: Term | None = None


class FuelExhausted(RuntimeError):
    pass


class _Fuel:
    def __init__(self, n: int):
        self.left = n

    def tick(self):
        self.left -= 1
        if self.left < 0:
            raise FuelExhausted("pure evaluation ran out of fuel")


class _StuckSignal(Exception):
    def __init__(self, stuck: Stuck):
        self.stuck = stuck


def match_pattern(pattern, value: Term) -> dict[str, Term] | None:
    """Bindings if ``value`` matches ``pattern``, else None."""
    if pattern.kind == "wild":
        return {}
    if pattern.kind == "var":
        return {pattern.vars[0]: value}
    if pattern.kind == "lit":
        return {} if value == pattern.lit else None
    if isinstance(value, Con) and value.tag == pattern.tag \
            and len(value.args) == len(pattern.vars):
        return {v: a for v, a in zip(pattern.vars, value.args) if v != "_"}
    return None


def _arith(op: str, a: Term, b: Term) -> Term:
    if op == "==":
        return Bool(a == b)
    if not (isinstance(a, Lit) and isinstance(b, Lit)
            and a.kind == "int" and b.kind == "int"):
        raise _StuckSignal(Stuck(f"operator {op} on non-integers", PrimOp(op, a, b)))
    x, y = a.value, b.value
    if op == "+":
        return Int(x + y)
    if op == "-":
        return Int(x - y)
    if op == "*":
        return Int(x * y)
    return Bool(x < y)


def _eval(t: Term, fuel: _Fuel) -> Term:
    # loop for tail positions so long recursions do not grow the stack
    while True:
        fuel.tick()
        if isinstance(t, (Lam, Loc, Lit) + MONADIC):
            return t
        if isinstance(t, Var):
            raise _StuckSignal(Stuck(f"free variable {t.name}", t))
        if isinstance(t, Con):
            if is_value(t):
                return t
            return Con(t.tag, tuple(_eval(a, fuel) for a in t.args))
        if isinstance(t, PrimOp):
            return _arith(t.op, _eval(t.left, fuel), _eval(t.right, fuel))
        if isinstance(t, App):
            fn = _eval(t.fn, fuel)
            arg = _eval(t.arg, fuel)
            if not isinstance(fn, Lam):
                raise _StuckSignal(Stuck("application of a non-function", App(fn, arg)))
            t = substitute(fn.body, fn.param, arg)
            continue
        if isinstance(t, Case):
            scrut = _eval(t.scrutinee, fuel)
            for br in t.branches:
                binds = match_pattern(br.pattern, scrut)
                if binds is not None:
                    body = br.body
                    for name, val in binds.items():
                        body = substitute(body, name, val)
                    t = body
                    break
            else:
                raise _StuckSignal(Stuck("no matching case branch", scrut))
            continue
        if isinstance(t, LetRec):
            fix = LetRec(t.name, t.bound, Var(t.name))
            if t.body == Var(t.name):
                t = substitute(t.bound, t.name, fix)
            else:
                t = substitute(t.body, t.name, fix)
            continue
        raise TypeError(f"unknown term {t!r}")


def pure_eval(m: Term, fuel: int = DEFAULT_FUEL) -> Term | Stuck:
    """Evaluate ``m`` to a value, or return Stuck.

    Raises FuelExhausted when more than ``fuel`` evaluation steps are
    needed, which usually means the term diverges.
    """
    limit = sys.getrecursionlimit()
    if limit < 20_000:
        sys.setrecursionlimit(20_000)
    try:
        return _eval(m, _Fuel(fuel))
    except _StuckSignal as sig:
        return sig.stuck


def decompose(m: Term) -> tuple[EvalContext, Term]:
    frames = []
    while isinstance(m, Bind):
        frames.append(m.right)
        m = m.left
    return tuple(reversed(frames)), m


def recompose(ctx: EvalContext, redex: Term) -> Term:
    for right in ctx:
        redex = Bind(redex, right)
    return redex
