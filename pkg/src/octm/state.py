"""Machine states: heap, working memory and thread family.

States are immutable. Every operation returns a new state and leaves the
argument untouched; the dictionaries inside a state are never mutated
after construction.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Union

from octm.printer import leaf_id, show
from octm.terms import Loc, Lit, NonceLit, Term, TidLit, map_leaves


# -- threads -----------------------------------------------------------------

@dataclass(frozen=True)
class Plain:
    term: Term
    tid: int

    tx = None


@dataclass(frozen=True)
class Primary:
    """A thread that started transaction ``tx`` and votes on its commit."""

    term: Term
    compensation: Term
    continuation: Term
    tid: int
    tx: int


@dataclass(frozen=True)
class Secondary:
    term: Term
    compensation: Term
    tid: int
    tx: int


Thread = Union[Plain, Primary, Secondary]


def with_term(th: Thread, term: Term) -> Thread:
    return replace(th, term=term)


def thread_terms(th: Thread) -> tuple[Term, ...]:
    if isinstance(th, Primary):
        return (th.term, th.compensation, th.continuation)
    if isinstance(th, Secondary):
        return (th.term, th.compensation)
    return (th.term,)


# -- labels ------------------------------------------------------------------

@dataclass(frozen=True)
class Internal:
    def __str__(self):
        return "internal"


@dataclass(frozen=True)
class NewTx:
    tx: int

    def __str__(self):
        return f"new {self.tx}"


@dataclass(frozen=True)
class CommitTx:
    tx: int

    def __str__(self):
        return f"co {self.tx}"


@dataclass(frozen=True)
class AbortTx:
    tx: int
    value: Term

    def __str__(self):
        return f"ab {self.tx} {show(self.value)}"


StepLabel = Union[Internal, NewTx, CommitTx, AbortTx]
INTERNAL = Internal()


# -- state -------------------------------------------------------------------

@dataclass(frozen=True)
class MachineState:
    heap: dict = field(default_factory=dict)       # loc -> Term
    working: dict = field(default_factory=dict)    # loc -> (Term, tx)
    threads: dict = field(default_factory=dict)    # tid -> Thread
    next_loc: int = 0
    next_tid: int = 0
    next_tx: int = 0
    nonces: dict = field(default_factory=dict)     # tid -> nonces issued
    co_locs: frozenset = frozenset()

    def __hash__(self):
        return hash(self.fingerprint)

    def __eq__(self, other):
        return isinstance(other, MachineState) and self.fingerprint == other.fingerprint

    @property
    def fingerprint(self) -> str:
        fp = self.__dict__.get("_fp")
        if fp is None:
            fp = _digest(self, _exact_id).hex()
            object.__setattr__(self, "_fp", fp)
        return fp

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        threads = []
        for tid in sorted(self.threads):
            th = self.threads[tid]
            rec = {"tid": tid, "kind": type(th).__name__.lower(), "term": show(th.term)}
            if not isinstance(th, Plain):
                rec["tx"] = th.tx
                rec["compensation"] = show(th.compensation)
            if isinstance(th, Primary):
                rec["continuation"] = show(th.continuation)
            threads.append(rec)
        return {
            "heap": {str(r): show(m) for r, m in sorted(self.heap.items())},
            "working": {str(r): [show(m), k]
                        for r, (m, k) in sorted(self.working.items())},
            "threads": threads,
            "next": [self.next_loc, self.next_tid, self.next_tx],
            "nonces": {str(t): n for t, n in sorted(self.nonces.items())},
            "co_locs": sorted(self.co_locs),
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "MachineState":
        from octm.parser import parse_term

        def p(text):
            return parse_term(text, runtime=True)

        threads = {}
        for rec in d["threads"]:
            term = p(rec["term"])
            if rec["kind"] == "plain":
                th = Plain(term, rec["tid"])
            elif rec["kind"] == "primary":
                th = Primary(term, p(rec["compensation"]), p(rec["continuation"]),
                             rec["tid"], rec["tx"])
            else:
                th = Secondary(term, p(rec["compensation"]), rec["tid"], rec["tx"])
            threads[th.tid] = th
        nl, nt, nx = d["next"]
        return cls(
            heap={int(r): p(m) for r, m in d["heap"].items()},
            working={int(r): (p(m), k) for r, (m, k) in d["working"].items()},
            threads=threads, next_loc=nl, next_tid=nt, next_tx=nx,
            nonces={int(t): n for t, n in d.get("nonces", {}).items()},
            co_locs=frozenset(d.get("co_locs", ())),
        )


def _exact_id(kind, old):
    return old


def _digest(s: MachineState, ident, threads=None, counters=True) -> bytes:
    """Hash of a state with every id passed through ``ident``.

    Terms contribute their cached shape digest plus their id list, so the
    cost is proportional to the number of threads and cells, not to the
    size of the terms.
    """
    h = hashlib.blake2b(digest_size=16)

    def term(t: Term):
        d, ids = t.shape
        h.update(d)
        h.update(repr([_map_leaf_id(ident, k) for k in ids]).encode())

    threads = list(s.threads.values()) if threads is None else threads
    for th in sorted(threads, key=lambda th: ident("tid", th.tid)):
        tx = None if th.tx is None else ident("tx", th.tx)
        h.update(repr((type(th).__name__, ident("tid", th.tid), tx)).encode())
        for t in thread_terms(th):
            term(t)
    h.update(b"|heap")
    heap = sorted((ident("loc", r), m) for r, m in s.heap.items()
                  if ident("loc", r) is not None)
    for r, m in heap:
        h.update(repr(r).encode())
        term(m)
    h.update(b"|working")
    work = sorted((ident("loc", r), m, ident("tx", k)) for r, (m, k) in s.working.items()
                  if ident("loc", r) is not None)
    for r, m, k in work:
        h.update(repr((r, k)).encode())
        term(m)
    co = sorted(ident("loc", r) for r in s.co_locs if ident("loc", r) is not None)
    h.update(repr(co).encode())
    if counters:
        h.update(repr((s.next_loc, s.next_tid, s.next_tx,
                       sorted(s.nonces.items()))).encode())
    return h.digest()


def _map_leaf_id(ident, key):
    kind, old = key
    if kind == "nonce":
        return ("nonce", ident("tid", old[0]), ident("nonce", old))
    return (kind, ident(kind, old))


def initial_state(term: Term) -> MachineState:
    """A machine running ``term`` as its single plain thread."""
    return MachineState(threads={0: Plain(term, 0)}, next_tid=1)


# -- memory operations ---------------------------------------------------------

def heap_update(s: MachineState, r: int, m: Term) -> MachineState:
    heap = dict(s.heap)
    heap[r] = m
    return replace(s, heap=heap)


def working_update(s: MachineState, r: int, m: Term, k: int) -> MachineState:
    working = dict(s.working)
    working[r] = (m, k)
    return replace(s, working=working)


def clean_delta(k: int, delta: dict) -> dict:
    return {r: (m, j) for r, (m, j) in delta.items() if j != k}


def commit_heap(k: int, theta: dict, delta: dict) -> dict:
    out = dict(theta)
    for r, (m, j) in delta.items():
        if j == k:
            out[r] = m
    return out


def clean(s: MachineState, k: int) -> MachineState:
    return replace(s, working=clean_delta(k, s.working))


def commit_mem(s: MachineState, k: int) -> MachineState:
    return replace(s, heap=commit_heap(k, s.heap, s.working),
                   working=clean_delta(k, s.working))


def rename_tx(s: MachineState, k: int, j: int) -> MachineState:
    """Fuse transaction ``k`` into ``j``: memory claims and participants."""
    working = {r: (m, j if x == k else x) for r, (m, x) in s.working.items()}
    threads = {t: (replace(th, tx=j) if th.tx == k else th)
               for t, th in s.threads.items()}
    return replace(s, working=working, threads=threads)


def names(s: MachineState) -> tuple[frozenset, frozenset]:
    tids = frozenset(s.threads)
    txs = frozenset(th.tx for th in s.threads.values() if th.tx is not None)
    return tids, txs


def participants(s: MachineState, k: int) -> list[Thread]:
    return [th for th in s.threads.values() if th.tx == k]


# -- canonical renaming -------------------------------------------------------

def _thread_sort_key(th: Thread):
    parts = tuple(t.shape[0] for t in thread_terms(th))
    return (type(th).__name__, parts)


REFINE_ROUNDS = 3


def _refined_keys(s: MachineState, threads) -> dict:
    """Id-free sort keys for threads, refined by their surroundings.

    Threads with equal terms are told apart by the keys of their
    transaction partners and of the memory cells they mention, which
    makes the canonical numbering stable on symmetric states.
    """
    key = {th.tid: repr(_thread_sort_key(th)) for th in threads}
    refs = {th.tid: [old for t in thread_terms(th) for kind, old in t.shape[1]
                     if kind == "loc"] for th in threads}
    users: dict = {}
    for tid, locs in refs.items():
        for r in locs:
            users.setdefault(r, set()).add(tid)
    groups: dict = {}
    for th in threads:
        if th.tx is not None:
            groups.setdefault(th.tx, []).append(th.tid)
    for _ in range(REFINE_ROUNDS):
        loc_key = {}
        for r, tids in users.items():
            cell = (s.heap[r].shape[0] if r in s.heap else b"",
                    s.working[r][0].shape[0] if r in s.working else b"",
                    r in s.working, r in s.co_locs,
                    tuple(sorted(key[t] for t in tids)))
            loc_key[r] = hashlib.blake2b(repr(cell).encode(), digest_size=8).hexdigest()
        new = {}
        for th in threads:
            partners = tuple(sorted(key[t] for t in groups.get(th.tx, ())))
            cells = tuple(loc_key[r] for r in refs[th.tid])
            raw = repr((key[th.tid], partners, cells)).encode()
            new[th.tid] = hashlib.blake2b(raw, digest_size=12).hexdigest()
        key = new
    return key


def canonical_order(s: MachineState, threads=None) -> dict:
    """Assign canonical numbers to every id occurring in the state.

    Threads are visited sorted by their id-free skeletons, then locations
    reachable from them, then the rest of memory. Returns a dict mapping
    ("loc"|"nonce"|"tid"|"tx", old) to a new number.
    """
    threads = list(s.threads.values()) if threads is None else threads
    mapping: dict = {}
    counters = {"loc": 0, "nonce": 0, "tid": 0, "tx": 0}
    pending: list[int] = []

    def see(kind, old):
        key = (kind, old)
        if key not in mapping:
            mapping[key] = counters[kind]
            counters[kind] += 1
            if kind == "loc":
                pending.append(old)
        if kind == "nonce":
            see("tid", old[0])

    def visit(term: Term):
        for kind, old in term.shape[1]:
            see(kind, old)

    refined = _refined_keys(s, threads)
    for th in sorted(threads, key=lambda th: (_thread_sort_key(th), refined[th.tid])):
        see("tid", th.tid)
        if th.tx is not None:
            see("tx", th.tx)
        for t in thread_terms(th):
            visit(t)
    _drain_locs(s, pending, see, visit)
    rest = sorted((r for r in set(s.heap) | set(s.working) if ("loc", r) not in mapping),
                  key=lambda r: _loc_sort_key(s, r))
    for r in rest:
        see("loc", r)
        _drain_locs(s, pending, see, visit)
    return mapping


def _loc_sort_key(s, r):
    heap = s.heap[r].shape[0] if r in s.heap else b""
    work = s.working[r][0].shape[0] if r in s.working else b""
    return (heap, work)


def _drain_locs(s, pending, see, visit):
    while pending:
        r = pending.pop(0)
        if r in s.heap:
            visit(s.heap[r])
        if r in s.working:
            m, k = s.working[r]
            see("tx", k)
            visit(m)


def rename_ids(s: MachineState, mapping: dict, threads=None) -> MachineState:
    """Apply a canonical id mapping to a state (dropping unmapped threads)."""

    def leaf(x):
        key = leaf_id(x)
        if key is None:
            return x
        kind, old = key
        if kind == "loc":
            return Loc(mapping[("loc", old)])
        if kind == "tid":
            return TidLit(mapping[("tid", old)])
        return NonceLit(mapping[("tid", old[0])], mapping[("nonce", old)])

    def term(t):
        return map_leaves(t, leaf)

    threads = list(s.threads.values()) if threads is None else threads
    new_threads = {}
    for th in threads:
        tid = mapping[("tid", th.tid)]
        if isinstance(th, Plain):
            nt = Plain(term(th.term), tid)
        elif isinstance(th, Primary):
            nt = Primary(term(th.term), term(th.compensation), term(th.continuation),
                         tid, mapping[("tx", th.tx)])
        else:
            nt = Secondary(term(th.term), term(th.compensation), tid,
                           mapping[("tx", th.tx)])
        new_threads[tid] = nt
    heap = {mapping[("loc", r)]: term(m) for r, m in s.heap.items() if ("loc", r) in mapping}
    working = {mapping[("loc", r)]: (term(m), mapping[("tx", k)])
               for r, (m, k) in s.working.items() if ("loc", r) in mapping}
    co = frozenset(mapping[("loc", r)] for r in s.co_locs if ("loc", r) in mapping)
    return MachineState(heap=heap, working=working, threads=new_threads,
                        co_locs=co)


def canonical_key(s: MachineState) -> str:
    """Fingerprint of ``s`` up to renaming of locations, threads, txs, nonces.

    Fresh-id counters are not part of the key: ids only matter through
    equality, so renamed states have isomorphic futures.
    """
    key = s.__dict__.get("_ckey")
    if key is None:
        mapping = canonical_order(s)
        key = _digest(s, lambda kind, old: mapping.get((kind, old)),
                      counters=False).hex()
        object.__setattr__(s, "_ckey", key)
    return key
