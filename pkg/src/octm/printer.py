"""Printing OCTM terms.

``show`` emits fully parenthesised text accepted by ``parse_program``
(runtime-only leaves such as locations use ``@n`` / ``#nonce(t,c)`` /
``#tid(n)``, accepted when parsing with ``runtime=True``).

``skeleton`` renders a term with every location, nonce and thread-id leaf
replaced by a placeholder and returns the displaced ids separately. It is
the building block of state fingerprints and canonical renaming.
"""
from __future__ import annotations

import hashlib

from octm.terms import (
    Abort, App, Atomic, Bind, Case, Con, Fork, Isolated, Lam, LetRec, Lit, Loc,
    NewVar, PrimOp, ReadVar, Return, Term, Var, WriteVar, _NewNonce, _Retry,
    Pattern,
)


def _lit_text(lit: Lit) -> str:
    if lit.kind == "int":
        return str(lit.value) if lit.value >= 0 else f"(-{-lit.value})"
    if lit.kind == "bool":
        return "True" if lit.value else "False"
    if lit.kind == "unit":
        return "()"
    if lit.kind == "nonce":
        return f"#nonce({lit.value.tid},{lit.value.count})"
    if lit.kind == "tid":
        return f"#tid({lit.value})"
    raise ValueError(lit.kind)


def _pattern_text(p: Pattern) -> str:
    if p.kind == "wild":
        return "_"
    if p.kind == "var":
        return p.vars[0]
    if p.kind == "lit":
        return _lit_text(p.lit)
    if p.tag == "Pair" and len(p.vars) == 2:
        return f"({p.vars[0]}, {p.vars[1]})"
    return " ".join((p.tag,) + p.vars)


def _render(t: Term, sub, leaf) -> str:
    """Render one node given a renderer ``sub`` for its children."""
    if isinstance(t, (Loc, Lit)):
        return leaf(t)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Lam):
        return f"(\\{t.param} -> {sub(t.body)})"
    if isinstance(t, App):
        return f"({sub(t.fn)} {sub(t.arg)})"
    if isinstance(t, Con):
        if not t.args:
            return t.tag
        if t.tag == "Pair" and len(t.args) == 2:
            return f"({sub(t.args[0])}, {sub(t.args[1])})"
        return "(" + " ".join([t.tag] + [sub(a) for a in t.args]) + ")"
    if isinstance(t, PrimOp):
        return f"({sub(t.left)} {t.op} {sub(t.right)})"
    if isinstance(t, Case):
        alts = "; ".join(f"{_pattern_text(b.pattern)} -> {sub(b.body)}"
                         for b in t.branches)
        return f"(case {sub(t.scrutinee)} of {{ {alts} }})"
    if isinstance(t, LetRec):
        return f"(let rec {t.name} = {sub(t.bound)} in {sub(t.body)})"
    if isinstance(t, Return):
        return f"(return {sub(t.value)})"
    if isinstance(t, Bind):
        return f"({sub(t.left)} >>= {sub(t.right)})"
    if isinstance(t, NewVar):
        kw = f"newVar[{t.tag}]" if t.tag else "newVar"
        return f"({kw} {sub(t.init)})"
    if isinstance(t, ReadVar):
        return f"(readVar {sub(t.ref)})"
    if isinstance(t, WriteVar):
        return f"(writeVar {sub(t.ref)} {sub(t.value)})"
    if isinstance(t, Fork):
        return f"(fork {sub(t.body)})"
    if isinstance(t, Atomic):
        return f"(atomic {sub(t.body)} {sub(t.compensation)})"
    if isinstance(t, Isolated):
        return f"(isolated {sub(t.body)})"
    if isinstance(t, Abort):
        return f"(abort {sub(t.value)})"
    if isinstance(t, _Retry):
        return "retry"
    if isinstance(t, _NewNonce):
        return "newNonce"
    raise TypeError(f"unknown term {t!r}")


def _exact_leaf(t) -> str:
    if isinstance(t, Loc):
        return f"@{t.id}"
    return _lit_text(t)


def show(t: Term) -> str:
    """Parseable text for ``t``."""
    return _render(t, show, _exact_leaf)


def show_with(t: Term, leaf) -> str:
    return _render(t, lambda c: show_with(c, leaf), leaf)


_PLACEHOLDER = {"loc": "@?", "nonce": "#n?", "tid": "#t?"}


def leaf_id(t) -> tuple[str, object] | None:
    if isinstance(t, Loc):
        return ("loc", t.id)
    if isinstance(t, Lit) and t.kind == "nonce":
        return ("nonce", (t.value.tid, t.value.count))
    if isinstance(t, Lit) and t.kind == "tid":
        return ("tid", t.value)
    return None


def skeleton(t: Term) -> tuple[str, tuple]:
    ids: list = []

    def sub(child: Term) -> str:
        text, child_ids = child.skeleton
        ids.extend(child_ids)
        return text

    def leaf(x) -> str:
        key = leaf_id(x)
        if key is None:
            return _lit_text(x)
        ids.append(key)
        return _PLACEHOLDER[key[0]]

    text = _render(t, sub, leaf)
    return text, tuple(ids)


def shape(t: Term) -> tuple[bytes, tuple]:
    """Digest of ``skeleton(t)`` built from the cached child digests.

    Cheaper than the skeleton text for deep terms: each node hashes its
    own header plus fixed-size child digests.
    """
    ids: list = []
    digests: list = []

    def sub(child: Term) -> str:
        d, child_ids = child.shape
        digests.append(d)
        ids.extend(child_ids)
        return "\x00"

    def leaf(x) -> str:
        key = leaf_id(x)
        if key is None:
            return _lit_text(x)
        ids.append(key)
        return _PLACEHOLDER[key[0]]

    header = _render(t, sub, leaf)
    h = hashlib.blake2b(header.encode(), digest_size=16)
    for d in digests:
        h.update(d)
    return h.digest(), tuple(ids)
