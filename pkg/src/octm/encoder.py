"""Translation of TCCS^m processes into OCTM machine states.

Channels are shared variables holding a ``ChState`` (``M0``, ``M1 n``,
``M2 n m``, ``M3 n``). A synchronisation is a four-step nonce handshake
in which every step is an ``isolated`` block. A choice is a race of one
thread per branch for a boolean lock.

``rho`` encodes a process as an OCTM term. Free channels are free
variables named ``ch_<name>``; ``eta`` allocates one heap cell per free
channel and substitutes it in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from octm.parser import parse_program
from octm.state import MachineState, Plain, Primary, Secondary
from octm.syntax import pure_eval
from octm.tccsm import (
    NIL, TAU, Active, Co, Inactive, Par, Proc, PVar, Rec, Restrict, Sum,
    channel, check_well_formed, components, derivable_types, free_channels,
)
from octm.terms import (
    RETURN_FN, TRUE, UNIT, Abort, App, Atomic, Bind, Con, Fork, Lam, LetRec,
    Loc, NewVar, Return, Term, Var, apply, seq, substitute,
)

M0 = Con("M0", ())

PROTOCOL_SOURCE = r"""
-- The lock l of a choice is consulted first by every branch. The first
-- isolated block of each party reports whether this branch won; the
-- continuation runs outside isolated, since it may fork threads.

def chooseThis l = writeVar l False;

def eqOrRetry x y = if x == y then return () else retry;

def bang x = fork x >> bang x;

def tau l p = do {
  won <- isolated (do {
    b <- readVar l;
    if b then chooseThis l >> return True else return False });
  if won then p else return ()
};

def recv c l p = do {
  nq <- newNonce;
  won <- isolated (do {
    b <- readVar l;
    if b then do {
      chooseThis l;
      v <- readVar c;
      case v of { M1 nx -> writeVar c (M2 nx nq) >> return True; _ -> retry }
    } else return False });
  if won then do {
    isolated (do {
      v <- readVar c;
      case v of { M3 ny -> eqOrRetry ny nq >> writeVar c M0; _ -> retry } });
    p
  } else return ()
};

def send c l p = do {
  np <- newNonce;
  won <- isolated (do {
    b <- readVar l;
    if b then do {
      chooseThis l;
      v <- readVar c;
      case v of { M0 -> writeVar c (M1 np) >> return True; _ -> retry }
    } else return False });
  if won then do {
    isolated (do {
      v <- readVar c;
      case v of { M2 nx ny -> eqOrRetry nx np >> writeVar c (M3 ny); _ -> retry } });
    p
  } else return ()
};
"""

PROTOCOL_NAMES = ("chooseThis", "eqOrRetry", "bang", "tau", "recv", "send")


@lru_cache(maxsize=None)
def protocol_terms() -> dict[str, Term]:
    """The closed library terms, keyed by name."""
    out = {}
    for name in PROTOCOL_NAMES:
        prog = parse_program(PROTOCOL_SOURCE + name)
        out[name] = pure_eval(prog)
    return out


def lib(name: str) -> Term:
    return protocol_terms()[name]


def psi_term(co: Term) -> Term:
    """``do { l <- newVar True; recv co l (return ()) }``."""
    return Bind(NewVar(TRUE), Lam(LOCK, apply(lib("recv"), co, Var(LOCK), Return(UNIT))))


def drainer(co: Term) -> Term:
    """``bang psi``: keeps receiving stray commit signals forever."""
    return App(lib("bang"), psi_term(co))


def chan_var(a: str) -> str:
    return f"ch_{a}"


def proc_var(x: str) -> str:
    return f"proc_{x}"


class EncodeError(ValueError):
    pass


# Binder names are fixed rather than fresh: every binder is only referred
# to by the code it directly scopes over, so shadowing is harmless, and
# the machine and ``eta`` then build syntactically identical terms.
LOCK, COVAR = "l", "co"


def rho(p: Proc, co: Term | None = None) -> Term:
    """Term encoding of a process without active transactions.

    ``co`` is the commit channel of the innermost enclosing transaction.
    """
    if isinstance(p, Sum):
        if not p.branches:
            return pure_eval(App(RETURN_FN, UNIT))
        l = LOCK
        forks = [Fork(xi(alpha, Var(l), q, co)) for alpha, q in p.branches]
        body = forks[-1]
        for f in reversed(forks[:-1]):
            body = seq(f, body)
        return Bind(NewVar(TRUE), Lam(l, body))
    if isinstance(p, Par):
        if not p.procs:
            return pure_eval(App(RETURN_FN, UNIT))
        forks = [Fork(rho(q, co)) for q in p.procs]
        body = forks[-1]
        for f in reversed(forks[:-1]):
            body = seq(f, body)
        return body
    if isinstance(p, Restrict):
        body = rho(p.proc, co)
        for a in sorted(p.names, reverse=True):
            body = Bind(NewVar(M0), Lam(chan_var(a), body))
        return body
    if isinstance(p, PVar):
        return Var(proc_var(p.name))
    if isinstance(p, Rec):
        name = proc_var(p.name)
        return LetRec(name, rho(p.body, co), Var(name))
    if isinstance(p, Co):
        if co is None:
            raise EncodeError("co outside transaction")
        return Bind(NewVar(TRUE), Lam(LOCK, apply(lib("send"), co, Var(LOCK),
                                                     rho(p.cont, co))))
    if isinstance(p, Inactive):
        c = Var(COVAR)
        # each body component runs in its own thread, as in sigma_enc; run
        # inline, a lone co.P would block the primary before psi starts
        body = rho(p.body if isinstance(p.body, Par) else Par((p.body,)), c)
        inner = seq(body, seq(Fork(Abort(UNIT)), psi_term(c)))
        txn = Bind(Atomic(inner, Lam("_", rho(p.comp))), Lam("_", drainer(c)))
        return Bind(NewVar(M0, "co"), Lam(COVAR, txn))
    if isinstance(p, Active):
        raise EncodeError("active transactions are encoded by sigma_enc only")
    raise EncodeError(f"cannot encode {p!r}")


def xi(alpha: str, l: Term, p: Proc, co) -> Term:
    """One branch of a choice guarded by lock ``l``."""
    cont = rho(p, co)
    if alpha == TAU:
        return apply(lib("tau"), l, cont)
    c = Var(chan_var(channel(alpha)))
    if alpha.startswith("~"):
        return apply(lib("send"), c, l, cont)
    return apply(lib("recv"), c, l, cont)


# -- state encoding ---------------------------------------------------------------------

@dataclass
class _Builder:
    heap: dict = field(default_factory=dict)
    threads: list = field(default_factory=list)  # (kind, term, comp, cont, tx)
    co_locs: set = field(default_factory=set)
    next_loc: int = 0
    tx_ids: dict = field(default_factory=dict)

    def alloc(self, value: Term, co: bool = False) -> int:
        r = self.next_loc
        self.next_loc += 1
        self.heap[r] = value
        if co:
            self.co_locs.add(r)
        return r

    def tx(self, name: str) -> int:
        if name not in self.tx_ids:
            self.tx_ids[name] = len(self.tx_ids)
        return self.tx_ids[name]


def _subst_threads(threads, start: int, var: str, value: Term):
    for i in range(start, len(threads)):
        kind, term, comp, cont, tx = threads[i]
        threads[i] = (kind, substitute(term, var, value),
                      comp if comp is None else substitute(comp, var, value),
                      cont if cont is None else substitute(cont, var, value), tx)


def _sigma(p: Proc, b: _Builder, tx: int | None, co: Term | None):
    """Add the threads of ``p`` to the builder (as participants of ``tx``)."""
    for comp in components(p):
        if isinstance(comp, Par) or comp == NIL:  # empty product or sum: no thread
            continue
        if isinstance(comp, Restrict):
            start = len(b.threads)
            _sigma(comp.proc, b, tx, co)
            for a in sorted(comp.names):
                r = b.alloc(M0)
                _subst_threads(b.threads, start, chan_var(a), Loc(r))
            continue
        if isinstance(comp, Active):
            if tx is not None:
                raise EncodeError("active transaction below top level")
            k = b.tx(comp.k)
            r_l = b.alloc(TRUE)
            r_co = b.alloc(M0, co=True)
            co_loc = Loc(r_co)
            s_co = pure_eval(apply(lib("recv"), co_loc, Loc(r_l), Return(UNIT)))
            b.threads.append(("primary", s_co, Lam("_", rho(comp.comp)),
                              Lam("_", drainer(co_loc)), k))
            b.threads.append(("secondary", Abort(UNIT), RETURN_FN, None, k))
            _sigma(comp.body, b, k, co_loc)
            continue
        term = rho(comp, co)
        if tx is None:
            b.threads.append(("plain", term, None, None, None))
        else:
            b.threads.append(("secondary", term, RETURN_FN, None, tx))


def sigma_enc(p: Proc, heap: dict | None = None) -> MachineState:
    """State encoding of a well-formed process; free channels stay free variables."""
    check_well_formed(p)
    b = _Builder()
    for r, v in sorted((heap or {}).items()):
        b.heap[r] = v
        b.next_loc = max(b.next_loc, r + 1)
    _sigma(p, b, None, None)
    return _build(b)


def _build(b: _Builder) -> MachineState:
    threads = {}
    for tid, (kind, term, comp, cont, tx) in enumerate(b.threads):
        if kind == "plain":
            threads[tid] = Plain(term, tid)
        elif kind == "primary":
            threads[tid] = Primary(term, comp, cont, tid, tx)
        else:
            threads[tid] = Secondary(term, comp, tid, tx)
    return MachineState(heap=dict(b.heap), threads=threads, next_loc=b.next_loc,
                        next_tid=len(threads), next_tx=len(b.tx_ids),
                        co_locs=frozenset(b.co_locs))


def eta(p: Proc) -> MachineState:
    """The machine state encoding ``p``: one heap cell per free channel."""
    check_well_formed(p)
    b = _Builder()
    _sigma(p, b, None, None)
    for a in sorted(free_channels(p)):
        r = b.alloc(M0)
        _subst_threads(b.threads, 0, chan_var(a), Loc(r))
    return _build(b)


def emit_term(p: Proc) -> Term:
    """One OCTM program that sets up ``eta(p)`` by itself.

    Only available when ``p`` has no active transactions.
    """
    check_well_formed(p)
    if "p" not in derivable_types(p):
        raise EncodeError("emit-term needs a process without active transactions")
    body = rho(p)
    for a in sorted(free_channels(p), reverse=True):
        body = Bind(NewVar(M0), Lam(chan_var(a), body))
    return body
