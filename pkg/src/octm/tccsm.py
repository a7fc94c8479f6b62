"""TCCS^m: CCS with open transactions.

Processes are immutable dataclasses. Actions are strings: ``a`` (input),
``~a`` (output, written ``'a`` in source text) and ``tau``. Transaction
names are strings.

Labels produced by ``lts_steps``:

* ``Act(alpha, sigma)``: a CCS action with a renaming of tx names;
* ``TxAct(k, alpha, sigma)``: an action performed inside transaction k;
* ``Beta(kind, k)``: kind is ``new``, ``co`` or ``ab``.

A renaming ``sigma`` is a frozenset of ``(src, dst)`` pairs; ``src`` is
None for the empty-transaction case of the joining rule.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union


# -- syntax ------------------------------------------------------------------------

class Proc:
    pass


@dataclass(frozen=True)
class Sum(Proc):
    branches: tuple = ()  # of (action, Proc)


NIL = Sum(())


@dataclass(frozen=True)
class Par(Proc):
    procs: tuple = ()


@dataclass(frozen=True)
class Restrict(Proc):
    proc: Proc
    names: frozenset


@dataclass(frozen=True)
class PVar(Proc):
    name: str


@dataclass(frozen=True)
class Rec(Proc):
    name: str
    body: Proc


@dataclass(frozen=True)
class Inactive(Proc):
    body: Proc
    comp: Proc


@dataclass(frozen=True)
class Active(Proc):
    k: str
    body: Proc
    comp: Proc


@dataclass(frozen=True)
class Co(Proc):
    cont: Proc


TAU = "tau"


def complement(alpha: str) -> str:
    if alpha == TAU:
        return TAU
    return alpha[1:] if alpha.startswith("~") else "~" + alpha


def channel(alpha: str) -> str | None:
    if alpha == TAU:
        return None
    return alpha.lstrip("~")


def prefix(alpha: str, p: Proc) -> Sum:
    return Sum(((alpha, p),))


def par(*procs: Proc) -> Proc:
    """Flattened parallel composition."""
    flat = []
    for p in procs:
        if isinstance(p, Par):
            flat.extend(p.procs)
        else:
            flat.append(p)
    if len(flat) == 1:
        return flat[0]
    return Par(tuple(flat))


def components(p: Proc) -> tuple:
    return p.procs if isinstance(p, Par) else (p,)


# -- labels ------------------------------------------------------------------------

@dataclass(frozen=True)
class Act:
    alpha: str
    sigma: frozenset = frozenset()

    def __str__(self):
        return f"{self.alpha}{_sigma_text(self.sigma)}"


@dataclass(frozen=True)
class TxAct:
    k: str
    alpha: str
    sigma: frozenset = frozenset()

    def __str__(self):
        return f"{self.k}({self.alpha}){_sigma_text(self.sigma)}"


@dataclass(frozen=True)
class Beta:
    kind: str  # new, co, ab
    k: str

    def __str__(self):
        return f"{self.kind} {self.k}"


TccsLabel = Union[Act, TxAct, Beta]
EPS: frozenset = frozenset()


def _sigma_text(sigma) -> str:
    if not sigma:
        return ""
    parts = sorted(f"{'e' if a is None else a}->{b}" for a, b in sigma)
    return " [" + ", ".join(parts) + "]"


# -- printing ----------------------------------------------------------------------

def show_proc(p: Proc) -> str:
    if isinstance(p, Sum):
        if not p.branches:
            return "0"
        parts = [f"{_act_text(a)}.{_guarded(q)}" for a, q in p.branches]
        return " + ".join(parts)
    if isinstance(p, Par):
        if not p.procs:
            return "0"
        return " | ".join(_atomish(q) for q in p.procs)
    if isinstance(p, Restrict):
        return f"{_atomish(p.proc)} \\ {{{', '.join(sorted(p.names))}}}"
    if isinstance(p, PVar):
        return p.name
    if isinstance(p, Rec):
        return f"(rec {p.name}. {show_proc(p.body)})"
    if isinstance(p, Inactive):
        return f"[[ {show_proc(p.body)} , {show_proc(p.comp)} ]]"
    if isinstance(p, Active):
        return f"[[ {show_proc(p.body)} >{p.k}> {show_proc(p.comp)} ]]"
    if isinstance(p, Co):
        return f"co.{_guarded(p.cont)}"
    raise TypeError(p)


def _act_text(a: str) -> str:
    return "'" + a[1:] if a.startswith("~") else a


def _guarded(p: Proc) -> str:
    if isinstance(p, (PVar, Inactive, Active, Co)) or p == NIL:
        return show_proc(p)
    if isinstance(p, Sum) and len(p.branches) == 1:
        return show_proc(p)
    return f"({show_proc(p)})"


def _atomish(p: Proc) -> str:
    if isinstance(p, (Par, Restrict)) or (isinstance(p, Sum) and len(p.branches) > 1):
        return f"({show_proc(p)})"
    return show_proc(p)


# -- parsing -----------------------------------------------------------------------

class TccsParseError(ValueError):
    pass


_TOK = re.compile(r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<active>>[A-Za-z0-9_]+>)
  | (?P<sym>\[\[|\]\]|[.+|\\{},()0'])
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)


def _tokens(src: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(src):
        m = _TOK.match(src, pos)
        if m is None:
            raise TccsParseError(f"unexpected character {src[pos]!r} at offset {pos}")
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(("eof", "", pos))
    return out


class _TccsParser:
    def __init__(self, src: str):
        self.toks = _tokens(src)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def at(self, text):
        return self.tok[1] == text and self.tok[0] in ("sym", "name")

    def expect(self, text):
        if not self.at(text):
            raise TccsParseError(f"expected {text!r} at offset {self.tok[2]}, "
                                 f"found {self.tok[1] or 'end of input'!r}")
        self.i += 1

    def proc(self) -> Proc:
        items = [self.sum()]
        while self.at("|"):
            self.i += 1
            items.append(self.sum())
        return par(*items) if len(items) > 1 else items[0]

    def sum(self) -> Proc:
        first = self.post()
        if not self.at("+"):
            return first
        branches = list(self._branches(first))
        while self.at("+"):
            self.i += 1
            branches.extend(self._branches(self.post()))
        return Sum(tuple(branches))

    def _branches(self, p):
        if not isinstance(p, Sum):
            raise TccsParseError(f"operand of + must be a prefixed process: {show_proc(p)}")
        return p.branches

    def post(self) -> Proc:
        p = self.prefix()
        while self.at("\\"):
            self.i += 1
            self.expect("{")
            names = []
            while not self.at("}"):
                kind, text, _ = self.tok
                if kind != "name":
                    raise TccsParseError(f"expected channel name, found {text!r}")
                names.append(text)
                self.i += 1
                if self.at(","):
                    self.i += 1
            self.expect("}")
            p = Restrict(p, frozenset(names))
        return p

    def prefix(self) -> Proc:
        kind, text, pos = self.tok
        if text == "0" and kind == "sym":
            self.i += 1
            return NIL
        if text == "(":
            self.i += 1
            p = self.proc()
            self.expect(")")
            return p
        if text == "[[":
            self.i += 1
            body = self.proc()
            if self.tok[0] == "active":
                k = self.tok[1][1:-1]
                self.i += 1
                comp = self.proc()
                self.expect("]]")
                return Active(k, body, comp)
            self.expect(",")
            comp = self.proc()
            self.expect("]]")
            return Inactive(body, comp)
        if text == "'":
            self.i += 1
            name = self.tok[1]
            if self.tok[0] != "name":
                raise TccsParseError(f"expected channel after ' at offset {pos}")
            self.i += 1
            self.expect(".")
            return prefix("~" + name, self.prefix())
        if kind == "name":
            self.i += 1
            if text == "rec":
                var = self.tok[1]
                self.i += 1
                self.expect(".")
                return Rec(var, self.proc())
            if text == "co":
                self.expect(".")
                return Co(self.prefix())
            if text[0].isupper():
                return PVar(text)
            self.expect(".")
            return prefix(text, self.prefix())
        raise TccsParseError(f"unexpected {text or 'end of input'!r} at offset {pos}")


def parse_tccs(src: str) -> Proc:
    p = _TccsParser(src)
    out = p.proc()
    if p.tok[0] != "eof":
        raise TccsParseError(f"unexpected {p.tok[1]!r} at offset {p.tok[2]}")
    return out


# -- typing ------------------------------------------------------------------------

class TccsTypeError(ValueError):
    pass


ALL_TYPES = frozenset("tcp")


def _close(types: set) -> frozenset:
    return ALL_TYPES if "p" in types else frozenset(types)


def derivable_types(p: Proc, env: dict | None = None) -> frozenset:
    """Every type derivable for ``p`` under ``env`` (X -> type)."""
    env = env or {}
    if isinstance(p, Co):
        return frozenset("c") if "p" in derivable_types(p.cont, env) else frozenset()
    if isinstance(p, Restrict):
        return derivable_types(p.proc, env)
    if isinstance(p, PVar):
        if p.name not in env:
            return frozenset()
        return _close({env[p.name]})
    if isinstance(p, Rec):
        out = set()
        for ty in "pc":
            if ty in derivable_types(p.body, {**env, p.name: ty}):
                out.add(ty)
        return _close(out)
    if isinstance(p, Par):
        out = set(ALL_TYPES)
        for q in p.procs:
            out &= derivable_types(q, env)
        return _close(out)
    if isinstance(p, Sum):
        kids = [derivable_types(q, env) for _, q in p.branches]
        out = set()
        if all("p" in k for k in kids):
            out.add("p")
        if all("c" in k for k in kids):
            out.add("c")
        return _close(out)
    if isinstance(p, (Active, Inactive)):
        ok = "c" in derivable_types(p.body, env) and "p" in derivable_types(p.comp, env)
        if not ok:
            return frozenset()
        return frozenset("t") if isinstance(p, Active) else ALL_TYPES
    raise TypeError(p)


def _diagnose(p: Proc, env: dict, in_tx: bool, top: bool) -> str | None:
    if isinstance(p, PVar) and p.name not in env:
        return f"unbound process variable {p.name}"
    if isinstance(p, Co) and not in_tx:
        return "co outside transaction"
    if isinstance(p, Active) and not top:
        return "active tx not top-level"
    if isinstance(p, Rec):
        return _diagnose(p.body, {**env, p.name: "p"}, in_tx, False)
    if isinstance(p, Par):
        for q in p.procs:
            r = _diagnose(q, env, in_tx, top)
            if r:
                return r
        return None
    if isinstance(p, Restrict):
        return _diagnose(p.proc, env, in_tx, top)
    if isinstance(p, Sum):
        for _, q in p.branches:
            r = _diagnose(q, env, in_tx, False)
            if r:
                return r
        return None
    if isinstance(p, (Active, Inactive)):
        return (_diagnose(p.body, env, True, False)
                or _diagnose(p.comp, env, False, False))
    if isinstance(p, Co):
        return _diagnose(p.cont, env, in_tx, False)
    return None


def typecheck(p: Proc, env: dict | None = None) -> str:
    """The most permissive type of ``p``: ``p``, else ``c``, else ``t``."""
    env = env or {}
    types = derivable_types(p, env)
    for ty in "pct":
        if ty in types:
            return ty
    reason = _diagnose(p, env, False, True) or "ill-typed term"
    raise TccsTypeError(f"{reason}: {show_proc(p)}")


def well_formed(p: Proc) -> bool:
    return "t" in derivable_types(p, {})


def check_well_formed(p: Proc) -> None:
    if not well_formed(p):
        reason = _diagnose(p, {}, False, True) or "not typable at t"
        raise TccsTypeError(f"{reason}: {show_proc(p)}")


# -- names and substitution --------------------------------------------------------------

def tn(x) -> frozenset | str:
    """Transaction names of a process, or the name of a beta label."""
    if isinstance(x, Beta):
        return x.k
    if isinstance(x, Active):
        return frozenset((x.k,))
    if isinstance(x, Par):
        out = frozenset()
        for q in x.procs:
            out |= tn(q)
        return out
    if isinstance(x, Restrict):
        # extended through restriction so broadcasts see restricted txs
        return tn(x.proc)
    return frozenset()


def all_tx_names(p: Proc) -> set[str]:
    out = set()
    for q in subprocs(p):
        if isinstance(q, Active):
            out.add(q.k)
    return out


def subprocs(p: Proc) -> Iterator[Proc]:
    yield p
    if isinstance(p, Sum):
        for _, q in p.branches:
            yield from subprocs(q)
    elif isinstance(p, Par):
        for q in p.procs:
            yield from subprocs(q)
    elif isinstance(p, (Restrict,)):
        yield from subprocs(p.proc)
    elif isinstance(p, Rec):
        yield from subprocs(p.body)
    elif isinstance(p, (Inactive, Active)):
        yield from subprocs(p.body)
        yield from subprocs(p.comp)
    elif isinstance(p, Co):
        yield from subprocs(p.cont)


def rename(p: Proc, sigma) -> Proc:
    """Apply a tx-name renaming (pairs with a None source are ignored)."""
    mapping = {a: b for a, b in sigma if a is not None}
    if not mapping:
        return p
    return _rename(p, mapping)


def _rename(p, m):
    if isinstance(p, Active):
        return Active(m.get(p.k, p.k), _rename(p.body, m), _rename(p.comp, m))
    if isinstance(p, Par):
        return Par(tuple(_rename(q, m) for q in p.procs))
    if isinstance(p, Restrict):
        return Restrict(_rename(p.proc, m), p.names)
    return p  # active transactions only occur at top level


def subst_var(p: Proc, name: str, value: Proc) -> Proc:
    if isinstance(p, PVar):
        return value if p.name == name else p
    if isinstance(p, Sum):
        return Sum(tuple((a, subst_var(q, name, value)) for a, q in p.branches))
    if isinstance(p, Par):
        return Par(tuple(subst_var(q, name, value) for q in p.procs))
    if isinstance(p, Restrict):
        return Restrict(subst_var(p.proc, name, value), p.names)
    if isinstance(p, Rec):
        return p if p.name == name else Rec(p.name, subst_var(p.body, name, value))
    if isinstance(p, Inactive):
        return Inactive(subst_var(p.body, name, value), subst_var(p.comp, name, value))
    if isinstance(p, Active):
        return Active(p.k, subst_var(p.body, name, value), subst_var(p.comp, name, value))
    if isinstance(p, Co):
        return Co(subst_var(p.cont, name, value))
    raise TypeError(p)


def psi(p: Proc, sigma: dict | None = None) -> Proc:
    """Strip commit prefixes from the body of a committing transaction."""
    sigma = sigma or {}
    if isinstance(p, Co):
        return p.cont
    if isinstance(p, Restrict):
        return Restrict(psi(p.proc, sigma), p.names)
    if isinstance(p, Sum) and p.branches:
        return Sum(tuple((a, psi(q, sigma)) for a, q in p.branches))
    if isinstance(p, Par):
        return Par(tuple(psi(q, sigma) for q in p.procs))
    if isinstance(p, Rec):
        return Rec(p.name, psi(p.body, {**sigma, p.name: p}))
    out = p
    for name, value in sigma.items():
        out = subst_var(out, name, value)
    return out


def free_channels(p: Proc) -> set[str]:
    if isinstance(p, Sum):
        out = set()
        for a, q in p.branches:
            if a != TAU:
                out.add(channel(a))
            out |= free_channels(q)
        return out
    if isinstance(p, Par):
        out = set()
        for q in p.procs:
            out |= free_channels(q)
        return out
    if isinstance(p, Restrict):
        return free_channels(p.proc) - p.names
    if isinstance(p, Rec):
        return free_channels(p.body)
    if isinstance(p, (Inactive, Active)):
        return free_channels(p.body) | free_channels(p.comp)
    if isinstance(p, Co):
        return free_channels(p.cont)
    return set()


# -- labelled transitions ------------------------------------------------------------------

def fresh_name(p: Proc) -> str:
    used = all_tx_names(p)
    i = 0
    while f"k{i}" in used:
        i += 1
    return f"k{i}"


def lts_steps(p: Proc, fresh: str | None = None) -> list[tuple[TccsLabel, Proc]]:
    """All transitions of ``p``.

    A single fresh name is used for every rule that needs one within a
    top-level step, so both sides of a fusion agree on it.
    """
    fresh = fresh or fresh_name(p)
    return _steps(p, fresh)


def _steps(p: Proc, k: str) -> list:
    out = []
    if isinstance(p, Sum):
        for alpha, q in p.branches:
            out.append((Act(alpha), q))
            if alpha != TAU:
                joined = Active(k, par(q, Co(NIL)), p)
                out.append((TxAct(k, alpha, frozenset({(None, k)})), joined))
        return out
    if isinstance(p, Rec):
        return [(Act(TAU), subst_var(p.body, p.name, p))]
    if isinstance(p, Restrict):
        for lab, q in _steps(p.proc, k):
            if isinstance(lab, (Act, TxAct)) and channel(lab.alpha) in p.names:
                continue
            out.append((lab, Restrict(q, p.names)))
        return out
    if isinstance(p, Inactive):
        return [(Beta("new", k), Active(k, p.body, p.comp))]
    if isinstance(p, Active):
        for lab, q in _steps(p.body, k):
            if isinstance(lab, Act) and not lab.sigma:
                if lab.alpha == TAU:
                    out.append((lab, Active(p.k, q, p.comp)))
                elif p.k != k:
                    out.append((TxAct(k, lab.alpha, frozenset({(p.k, k)})),
                                Active(k, q, p.comp)))
        out.append((Beta("ab", p.k), p.comp))
        if any(isinstance(c, Co) for c in components(p.body)):
            out.append((Beta("co", p.k), psi(p.body)))
        return out
    if isinstance(p, Par):
        return _par_steps(p, k)
    return out  # PVar, Co


def _par_steps(p: Par, k: str) -> list:
    procs = p.procs
    n = len(procs)
    local = [_steps(q, k) for q in procs]
    names = [tn(q) for q in procs]
    out = []

    def rebuild(i, new_i, sigma, j=None, new_j=None):
        parts = []
        for x, q in enumerate(procs):
            if x == i:
                parts.append(new_i)
            elif x == j:
                parts.append(new_j)
            else:
                parts.append(rename(q, sigma))
        return par(*parts)

    # interleaving
    for i in range(n):
        others = frozenset().union(*(names[x] for x in range(n) if x != i))
        for lab, q in local[i]:
            if isinstance(lab, Beta):
                continue
            img = {b for _, b in lab.sigma}
            if img & others:
                continue
            out.append((lab, rebuild(i, q, lab.sigma)))
    # synchronisation
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for li, qi in local[i]:
                for lj, qj in local[j]:
                    if li.__class__ is not lj.__class__ or isinstance(li, Beta):
                        continue
                    if li.alpha == TAU or lj.alpha != complement(li.alpha):
                        continue
                    if isinstance(li, Act):
                        if i < j and not li.sigma and not lj.sigma:
                            out.append((Act(TAU), rebuild(i, qi, EPS, j, qj)))
                        continue
                    if i > j or li.k != lj.k:
                        continue
                    (src_i, _), = li.sigma
                    (src_j, _), = lj.sigma
                    if src_i is None and src_j is None:
                        continue  # fusion needs at least one transaction
                    sigma = li.sigma | lj.sigma
                    new_i = rename(qi, lj.sigma)
                    new_j = rename(qj, li.sigma)
                    out.append((TxAct(li.k, TAU, sigma),
                                rebuild(i, new_i, sigma, j, new_j)))
    # broadcasts
    betas = {}
    for i in range(n):
        for lab, q in local[i]:
            if isinstance(lab, Beta):
                betas.setdefault(lab, {}).setdefault(i, []).append(q)
    for lab, movers in betas.items():
        if lab.kind == "new":
            for i, qs in movers.items():
                others = frozenset().union(*(names[x] for x in range(n) if x != i))
                if lab.k in others:
                    continue
                for q in qs:
                    out.append((lab, rebuild(i, q, EPS)))
            continue
        involved = [x for x in range(n) if lab.k in names[x]]
        if not all(x in movers for x in involved):
            continue
        combos = [[]]
        for x in involved:
            combos = [c + [(x, q)] for c in combos for q in movers[x]]
        for combo in combos:
            chosen = dict(combo)
            parts = [chosen.get(x, procs[x]) for x in range(n)]
            out.append((lab, par(*parts)))
    return out


def is_reduction(label: TccsLabel) -> str | None:
    """Kind of reduction a label stands for, or None."""
    if isinstance(label, Act) and label.alpha == TAU:
        return "tau"
    if isinstance(label, TxAct) and label.alpha == TAU:
        return "ktau"
    if isinstance(label, Beta):
        return label.kind
    return None


def tccs_reduce(p: Proc) -> list[tuple[str, TccsLabel, Proc]]:
    out = []
    for lab, q in lts_steps(p):
        kind = is_reduction(lab)
        if kind:
            out.append((kind, lab, q))
    return out


# -- canonical form ------------------------------------------------------------------------

def canonical_tccs(p: Proc) -> Proc:
    """Rename transaction names to k0, k1, ... in order of occurrence."""
    order = []
    for q in subprocs(p):
        if isinstance(q, Active) and q.k not in order:
            order.append(q.k)
    mapping = {k: f"#{i}" for i, k in enumerate(order)}
    tmp = _rename(p, mapping)
    return _rename(tmp, {f"#{i}": f"k{i}" for i in range(len(order))})
