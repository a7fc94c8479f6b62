"""Bounded check that the encoding is adequate.

Machine states are compared with encodings of processes up to ``cong_t``:
finished threads, commit drainers and receivers idling on commit channels
are ignored, unreachable memory is collected, and a cell claimed by a
transaction whose own threads are its only users is shown as plain
memory. Both sides are first *settled*, i.e. every pending thread-local
administrative step (evaluation, bind, fork, allocation, nonce) is taken.

``check_forward`` asks, for every reachable process P and reduction
P -> Q, whether the encoding of P reaches a state matching the encoding
of Q (without observable steps for tau, with exactly one transaction step
of the same kind for new/co/ab).

``check_backward`` asks the converse for every single machine step from
the encoding of a reachable process P: some continuation must reach a
match of P itself (the step was administrative) or of a tau-successor, or
pass one beta step of the right kind and reach a match of a beta-successor.

``check_star`` is stricter. It computes the largest relation R between
processes and machine states reachable from the root such that every
internal step from a related state leads to a pair related to P or a
tau-successor, every beta step to a pair related to a beta-successor of
the same kind, and every related state can still reach a match.

``check_protocol`` explores the encoding exhaustively and checks that
channel cells only move along M0 -> M1 -> M2 -> M3 -> M0 and that choice
locks are taken at most once.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache

from octm.encoder import M0, drainer, eta, psi_term
from octm.explorer import default_max_states
from octm.semantics import Step, Terminal, classify, enabled_steps, thread_steps
from octm.state import (
    AbortTx, CommitTx, Internal, MachineState, NewTx, Plain, Secondary,
    canonical_key, thread_terms,
)
from octm.syntax import FuelExhausted, decompose
from octm.tccsm import Proc, canonical_tccs, show_proc, tccs_reduce
from octm.terms import (
    RETURN_FN, Abort, Atomic, Fork, Isolated, Loc, ReadVar, Return, WriteVar,
    _Retry,
)

ADMIN_RULES = frozenset({"TermP", "TermT", "ForkP", "ForkT", "NewP", "NewT",
                         "NonceP", "NonceT"})
SETTLE_FUEL = 10_000


# -- reference shapes of protocol threads ----------------------------------------------

def _locs(t) -> set:
    return {old for kind, old in t.shape[1] if kind == "loc"}


@lru_cache(maxsize=None)
def _reference_shapes():
    """Shapes of an idle commit receiver and of every state of a drainer."""
    co = Loc(0)
    base = dict(heap={0: M0}, next_loc=1, next_tid=1, co_locs=frozenset({0}))
    s = MachineState(threads={0: Plain(psi_term(co), 0)}, **base)
    s = settle(s, skip_drainers=False)
    psi = s.threads[0].term.shape[0]
    shapes, heads = set(), set()
    cur = MachineState(threads={0: Plain(drainer(co), 0)}, **base)
    for _ in range(50):
        th = cur.threads[0]
        if th.term.shape[0] in shapes:
            break
        shapes.add(th.term.shape[0])
        if isinstance(decompose(th.term)[1], Fork):
            heads.add(th.term.shape[0])
        cur = [st for st in thread_steps(cur, th).steps][0].target
    return psi, frozenset(shapes), frozenset(heads)


def _on_commit_channel(s: MachineState, th) -> bool:
    return bool(_locs(th.term) & s.co_locs)


def is_waiting_receiver(s: MachineState, th) -> bool:
    """An idle ``psi`` thread: a receiver on a commit channel not yet engaged.

    Ordinary receivers have the same shape, so the channel must be a
    commit channel.
    """
    return (isinstance(th, Plain) and th.term.shape[0] == _reference_shapes()[0]
            and _on_commit_channel(s, th))


def is_drainer(s: MachineState, th) -> bool:
    return (isinstance(th, Plain) and th.term.shape[0] in _reference_shapes()[1]
            and _on_commit_channel(s, th))


def _is_drainer_head(th) -> bool:
    return isinstance(th, Plain) and th.term.shape[0] in _reference_shapes()[2]


# -- normalisation ---------------------------------------------------------------------

_NON_ADMIN = (Isolated, ReadVar, WriteVar, Atomic, Abort, _Retry)


def _admin_step(s: MachineState, th) -> Step | None:
    ctx, redex = decompose(th.term)
    if isinstance(redex, _NON_ADMIN) or (isinstance(redex, Return) and not ctx):
        return None
    for st in thread_steps(s, th).steps:
        if st.rule in ADMIN_RULES:
            return st
    return None


def settle(s: MachineState, skip_drainers: bool = True,
           fuel: int = SETTLE_FUEL) -> MachineState:
    """Take thread-local administrative steps until none is left.

    Drainers are not advanced: they would fork receivers forever.
    """
    cur = s
    for _ in range(fuel):
        for tid in sorted(cur.threads):
            th = cur.threads[tid]
            if skip_drainers and _is_drainer_head(th):
                continue
            st = _admin_step(cur, th)
            if st is not None:
                cur = st.target
                break
        else:
            return cur
    raise FuelExhausted(f"settling did not finish within {fuel} steps")


def _terminated(th) -> bool:
    ctx, redex = decompose(th.term)
    if ctx:
        return False
    if isinstance(th, Plain):
        return isinstance(redex, (Return, Abort))
    return (isinstance(th, Secondary) and isinstance(redex, Return)
            and th.compensation == RETURN_FN)


def _collect(s: MachineState, threads) -> tuple[dict, dict]:
    """Heap and working memory restricted to cells reachable from ``threads``."""
    seen, todo = set(), []
    for th in threads:
        for t in thread_terms(th):
            todo.extend(_locs(t))
    while todo:
        r = todo.pop()
        if r in seen:
            continue
        seen.add(r)
        if r in s.heap:
            todo.extend(_locs(s.heap[r]))
        if r in s.working:
            todo.extend(_locs(s.working[r][0]))
    heap = {r: m for r, m in s.heap.items() if r in seen}
    working = {r: v for r, v in s.working.items() if r in seen}
    return heap, working


def trim(s: MachineState) -> MachineState:
    """Drop finished plain threads and unreachable memory."""
    threads = {t: th for t, th in s.threads.items()
               if not (isinstance(th, Plain) and _terminated(th))}
    heap, working = _collect(s, threads.values())
    return replace(s, threads=threads, heap=heap, working=working,
                   co_locs=frozenset(r for r in s.co_locs if r in heap or r in working))


def normalise(s: MachineState) -> MachineState:
    return trim(settle(s))


def _blocked_on_commit_channel(s: MachineState, th) -> bool:
    if not isinstance(th, Plain):
        return False
    if not any(r in s.co_locs for t in thread_terms(th) for r in _locs(t)):
        return False
    return not thread_steps(s, th).steps


def cong_t(s: MachineState) -> MachineState:
    """Representative of the class of ``s`` under the matching equivalence.

    ``s`` is expected to be settled.
    """
    threads = [th for th in s.threads.values()
               if not (_terminated(th) or is_waiting_receiver(s, th) or is_drainer(s, th)
                       or _blocked_on_commit_channel(s, th))]
    heap, working = _collect(s, threads)
    heap, working = dict(heap), dict(working)
    users: dict = {}
    for th in threads:
        for t in thread_terms(th):
            for r in _locs(t):
                users.setdefault(r, set()).add(th.tx)
    for r, (m, k) in list(working.items()):
        if users.get(r, set()) <= {k} and heap.get(r, m) == m:
            heap[r] = m
            del working[r]
    tids = {th.tid: th for th in threads}
    return MachineState(heap=heap, working=working, threads=tids,
                        co_locs=frozenset(r for r in s.co_locs
                                          if r in heap or r in working))


def match_key(s: MachineState) -> str:
    """Key of a settled state up to ``cong_t`` and renaming."""
    key = s.__dict__.get("_mkey")
    if key is None:
        key = canonical_key(cong_t(s))
        object.__setattr__(s, "_mkey", key)
    return key


def matches(s: MachineState, p: Proc) -> bool:
    return match_key(normalise(s)) == match_key(normalise(eta(p)))


# -- machine graph over normalised states ---------------------------------------------------

def label_kind(label) -> str:
    if isinstance(label, Internal):
        return "internal"
    if isinstance(label, NewTx):
        return "new"
    if isinstance(label, CommitTx):
        return "co"
    if isinstance(label, AbortTx):
        return "ab"
    raise TypeError(label)


def _drainer_is_redundant(s: MachineState, th) -> bool:
    """A drainer need not fork while an idle receiver already serves its channel."""
    mine = _locs(th.term) & s.co_locs
    return any(is_waiting_receiver(s, o) and mine <= _locs(o.term)
               for o in s.threads.values())


class MachineGraph:
    """Successors of normalised states, memoised on canonical keys."""

    def __init__(self):
        self.succ: dict[str, list[tuple[str, str, Step]]] = {}
        self.nodes: dict[str, MachineState] = {}

    def add(self, s: MachineState) -> str:
        key = canonical_key(s)
        self.nodes.setdefault(key, s)
        return key

    def successors(self, key: str) -> list[tuple[str, str, Step]]:
        out = self.succ.get(key)
        if out is None:
            s = self.nodes[key]
            out = []
            seen = set()
            for st in enabled_steps(s):
                if st.tid is not None and _is_drainer_head(s.threads[st.tid]) \
                        and _drainer_is_redundant(s, s.threads[st.tid]):
                    continue
                nkey = self.add(normalise(st.target))
                kind = label_kind(st.label)
                if (kind, nkey) in seen:
                    continue
                seen.add((kind, nkey))
                out.append((kind, nkey, st))
            self.succ[key] = out
        return out

    def match_key(self, key: str) -> str:
        return match_key(self.nodes[key])


# -- verdicts ----------------------------------------------------------------------------

@dataclass
class SimConfig:
    forward_depth: int = 400
    backward_depth: int = 40
    max_states: int = field(default_factory=default_max_states)
    max_processes: int = 500


@dataclass
class SimFailure:
    direction: str  # forward or backward
    process: str
    reduction: str
    detail: str
    trace: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"direction": self.direction, "process": self.process,
                "reduction": self.reduction, "detail": self.detail,
                "trace": self.trace}


@dataclass
class SimVerdict:
    process: str
    forward_ok: bool
    backward_ok: bool
    processes: int = 0
    machine_states: int = 0
    forward_checked: int = 0
    bounded: bool = False
    failures: list[SimFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.forward_ok and self.backward_ok

    def to_dict(self) -> dict:
        return {"process": self.process, "ok": self.ok,
                "forward_ok": self.forward_ok, "backward_ok": self.backward_ok,
                "processes": self.processes, "machine_states": self.machine_states,
                "forward_checked": self.forward_checked, "bounded": self.bounded,
                "failures": [f.to_dict() for f in self.failures]}


# -- process side -------------------------------------------------------------------------

def tccs_graph(p: Proc, limit: int = 500):
    """Reachable processes (canonical) with their reductions."""
    root = canonical_tccs(p)
    order = [root]
    succ: dict = {}
    queue = deque([root])
    truncated = False
    while queue:
        cur = queue.popleft()
        out = []
        for kind, label, q in tccs_reduce(cur):
            q = canonical_tccs(q)
            out.append((kind, str(label), q))
            if q not in succ and q not in queue and q not in order:
                if len(order) >= limit:
                    truncated = True
                    continue
                order.append(q)
                queue.append(q)
        succ[cur] = out
    return order, succ, truncated


class _EtaKeys(dict):
    """Match keys of process encodings, computed on demand."""

    def __missing__(self, q):
        self[q] = key = match_key(normalise(eta(q)))
        return key


def _beta_kind(kind: str) -> str:
    return "internal" if kind in ("tau", "ktau") else kind


# -- forward -------------------------------------------------------------------------------

def _search(graph: MachineGraph, start: str, target: str, kind: str, depth: int):
    """Path from ``start`` to a node matching ``target``.

    Internal steps are free; when ``kind`` is not internal exactly one step
    of that kind must be taken. Returns (found, bounded, trace).
    """
    need_beta = kind != "internal"
    first = (start, False)
    parent = {first: None}
    queue = deque([(first, 0)])
    bounded = False
    while queue:
        node, d = queue.popleft()
        key, used = node
        if used == need_beta and graph.match_key(key) == target:
            trace = []
            while parent[node] is not None:
                node, rule = parent[node]
                trace.append(rule)
            return True, bounded, trace[::-1]
        if d >= depth:
            bounded = True
            continue
        for k, nkey, st in graph.successors(key):
            if k == "internal":
                nxt = (nkey, used)
            elif k == kind and not used:
                nxt = (nkey, True)
            else:
                continue
            if nxt not in parent:
                if len(parent) >= graph_limit(graph):
                    bounded = True
                    continue
                parent[nxt] = (node, f"{st.rule}:{st.label}")
                queue.append((nxt, d + 1))
    return False, bounded, []


def graph_limit(graph: MachineGraph) -> int:
    return getattr(graph, "limit", 200_000)


def check_forward(p: Proc, config: SimConfig | None = None,
                  graph: MachineGraph | None = None) -> SimVerdict:
    config = config or SimConfig()
    graph = graph or MachineGraph()
    graph.limit = config.max_states
    order, succ, truncated = tccs_graph(p, config.max_processes)
    verdict = SimVerdict(show_proc(p), True, True, processes=len(order),
                         bounded=truncated)
    for q in order:
        start = graph.add(normalise(eta(q)))
        for kind, label, r in succ[q]:
            target = match_key(normalise(eta(r)))
            found, bounded, trace = _search(graph, start, target, _beta_kind(kind),
                                            config.forward_depth)
            verdict.forward_checked += 1
            if not found:
                verdict.forward_ok = False
                verdict.bounded |= bounded
                verdict.failures.append(SimFailure(
                    "forward", show_proc(q), f"{label} -> {show_proc(r)}",
                    "no matching machine run" + (" within bounds" if bounded else "")))
    verdict.machine_states = len(graph.nodes)
    return verdict


# -- backward ------------------------------------------------------------------------------

def _explore(graph: MachineGraph, root: str, depth: int, limit: int):
    dist = {root: 0}
    order = [root]
    frontier = set()
    queue = deque([root])
    while queue:
        key = queue.popleft()
        if dist[key] >= depth:
            frontier.add(key)
            continue
        for _, nkey, _ in graph.successors(key):
            if nkey not in dist:
                if len(dist) >= limit:
                    frontier.add(key)
                    continue
                dist[nkey] = dist[key] + 1
                order.append(nkey)
                queue.append(nkey)
    return order, dist, frontier


def _closure(seeds: set, preds_internal: dict) -> set:
    out = set(seeds)
    todo = list(seeds)
    while todo:
        n = todo.pop()
        for m in preds_internal.get(n, ()):
            if m not in out:
                out.add(m)
                todo.append(m)
    return out


def check_backward(p: Proc, config: SimConfig | None = None,
                   graph: MachineGraph | None = None) -> SimVerdict:
    """Every machine step from the encoding of a reachable process is accounted for.

    A step is accounted for when some continuation (at most
    ``backward_depth`` further steps) reaches a match of the process itself
    (the step was administrative), of a tau-successor, or, through one beta
    step of the right kind, of a beta-successor. A beta step must be
    followed by a match of a beta-successor of the same kind.
    """
    config = config or SimConfig()
    graph = graph or MachineGraph()
    graph.limit = config.max_states
    order, succ, truncated = tccs_graph(p, config.max_processes)
    verdict = SimVerdict(show_proc(p), True, True, processes=len(order),
                         bounded=truncated)
    depth = config.backward_depth
    keys = _EtaKeys()
    same: dict = {}
    for q in order:
        same.setdefault(keys[q], []).append(q)
    for q in order:
        start = graph.add(normalise(eta(q)))
        here = graph.match_key(start)
        # processes with the same encoding (e.g. a recursion and its
        # unfolding) are the same machine state: pool their reductions
        moves = [m for q2 in same[keys[q]] for m in succ[q2]]
        internal = [here] + [keys[r] for k, _, r in moves if k in ("tau", "ktau")]
        beta = [(k, keys[r]) for k, _, r in moves if k in ("new", "co", "ab")]
        for kind, nkey, st in graph.successors(start):
            if kind == "internal":
                goals = [("internal", t) for t in internal] + beta
            else:
                goals = [("internal", t) for k, t in beta if k == kind]
            bounded = False
            for mode, target in goals:
                found, b, _ = _search(graph, nkey, target, mode, depth)
                bounded |= b
                if found:
                    break
            else:
                verdict.backward_ok = False
                verdict.bounded |= bounded
                verdict.failures.append(SimFailure(
                    "backward", show_proc(q), f"{st.rule}:{st.label}",
                    "step cannot be continued to a matching state"
                    + (" within bounds" if bounded else ""), [f"{st.rule}:{st.label}"]))
    verdict.machine_states = len(graph.nodes)
    return verdict


def check_star(p: Proc, config: SimConfig | None = None,
               graph: MachineGraph | None = None) -> SimVerdict:
    """Largest-relation check over every machine state reachable from the root.

    Stricter than ``check_backward``: states reached after several steps
    must also stay related to some reachable process.
    """
    config = config or SimConfig()
    graph = graph or MachineGraph()
    order_p, succ_p, truncated = tccs_graph(p, config.max_processes)
    root = graph.add(normalise(eta(p)))
    nodes, dist, frontier = _explore(graph, root, config.backward_depth,
                                     config.max_states)
    node_set = set(nodes)
    edges = {n: ([] if n in frontier else
                 [(k, m) for k, m, _ in graph.successors(n) if m in node_set])
             for n in nodes}
    preds_internal: dict = {}
    for n, out in edges.items():
        for k, m in out:
            if k == "internal":
                preds_internal.setdefault(m, set()).add(n)
    by_key: dict = {}
    for n in nodes:
        by_key.setdefault(graph.match_key(n), set()).add(n)

    pidx = {q: i for i, q in enumerate(order_p)}
    pre_int = []
    for q in order_p:
        seeds = by_key.get(match_key(normalise(eta(q))), set()) | frontier
        pre_int.append(_closure(seeds, preds_internal))
    cand: list[set] = []
    for i, q in enumerate(order_p):
        c = set(pre_int[i])
        for kind, _, r in succ_p[q]:
            if kind in ("new", "co", "ab") and r in pidx:
                j = pidx[r]
                seeds = {n for n in nodes for k, m in edges[n]
                         if k == kind and m in pre_int[j]}
                c |= _closure(seeds, preds_internal)
        cand.append(c)

    keys = _EtaKeys()
    same: dict = {}
    for i, q in enumerate(order_p):
        same.setdefault(keys[q], []).append(i)

    def options(i: int, kind: str) -> list[int]:
        group = same[keys[order_p[i]]]
        moves = [m for j in group for m in succ_p[order_p[j]]]
        if kind == "internal":
            return group + [pidx[r] for k, _, r in moves
                            if k in ("tau", "ktau") and r in pidx]
        return [pidx[r] for k, _, r in moves if k == kind and r in pidx]

    good = [set(c) for c in cand]
    changed = True
    while changed:
        changed = False
        for i in range(len(order_p)):
            for n in list(good[i]):
                if n in frontier:
                    continue
                for kind, m in edges[n]:
                    if not any(m in good[j] for j in options(i, kind)):
                        good[i].discard(n)
                        changed = True
                        break

    verdict = SimVerdict(show_proc(p), True, True, processes=len(order_p),
                         machine_states=len(nodes),
                         bounded=truncated or bool(frontier))
    if root not in good[0]:
        verdict.backward_ok = False
        verdict.failures.append(_explain(graph, order_p, good, cand, edges, options,
                                         root))
    return verdict


def _explain(graph, order_p, good, cand, edges, options, root) -> SimFailure:
    """Follow the first unsupported step from the initial pair."""
    i, n = 0, root
    trace: list[str] = []
    seen = set()
    while (i, n) not in seen:
        seen.add((i, n))
        if n not in cand[i]:
            return SimFailure("backward", show_proc(order_p[i]), "",
                              "machine state cannot reach a matching state", trace)
        for kind, m in edges[n]:
            opts = options(i, kind)
            if any(m in good[j] for j in opts):
                continue
            rule = next((f"{st.rule}:{st.label}" for k, mk, st in graph.successors(n)
                         if mk == m and k == kind), kind)
            trace.append(rule)
            nxt = next((j for j in opts if m in cand[j]), None)
            if nxt is None:
                return SimFailure("backward", show_proc(order_p[i]), kind,
                                  "machine step leads to a state matching no "
                                  "allowed process", trace)
            i, n = nxt, m
            break
        else:
            break
    return SimFailure("backward", show_proc(order_p[i]), "",
                      "no simulation relation contains the initial pair", trace)


def check(p: Proc, config: SimConfig | None = None, strict: bool = False) -> SimVerdict:
    """Forward and backward checks sharing one machine graph.

    With ``strict`` the backward half is ``check_star``.
    """
    config = config or SimConfig()
    graph = MachineGraph()
    fwd = check_forward(p, config, graph)
    bwd = (check_star if strict else check_backward)(p, config, graph)
    fwd.backward_ok = bwd.backward_ok
    fwd.bounded |= bwd.bounded
    fwd.machine_states = len(graph.nodes)
    fwd.failures += bwd.failures
    return fwd


# -- protocol invariant ------------------------------------------------------------------

CYCLE = {"M0": "M1", "M1": "M2", "M2": "M3", "M3": "M0"}


@dataclass
class ProtocolReport:
    states: int = 0
    edges: int = 0
    terminal: int = 0
    truncated: bool = False
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.truncated and self.terminal > 0


def _cell_kind(v) -> str | None:
    if getattr(v, "tag", None) in CYCLE:
        return "channel"
    if getattr(v, "kind", None) == "bool":
        return "lock"
    return None


def _visible(s: MachineState) -> dict:
    return {r: v for r, v in s.heap.items() if r not in s.working}


def check_protocol(s: MachineState, max_states: int | None = None) -> ProtocolReport:
    """Channel-cycle and single-winner checks over every explored edge.

    Terminal states must leave every channel at ``M0`` and every lock
    taken (``False``), so each choice has exactly one winner.
    """
    limit = max_states or default_max_states()
    report = ProtocolReport()
    seen = {canonical_key(s)}
    queue = deque([s])
    while queue:
        cur = queue.popleft()
        report.states += 1
        outcome = classify(cur)
        if isinstance(outcome, Terminal) and not outcome.aborted:
            report.terminal += 1
            for r, v in _visible(cur).items():
                kind = _cell_kind(v)
                if kind == "channel" and v.tag != "M0":
                    report.violations.append(f"terminal channel cell {r} holds {v.tag}")
                if kind == "lock" and v.value:
                    report.violations.append(f"terminal choice lock {r} never taken")
        before = _visible(cur)
        for step in enabled_steps(cur):
            report.edges += 1
            after = _visible(step.target)
            for r, old in before.items():
                new = after.get(r, old)
                if new == old:
                    continue
                kind = _cell_kind(old)
                if kind == "channel" and getattr(new, "tag", None) != CYCLE[old.tag]:
                    report.violations.append(
                        f"{step.rule}: channel cell {r} moved {old.tag} -> {new}")
                if kind == "lock" and not (old.value and getattr(new, "value", None) is False):
                    report.violations.append(f"{step.rule}: lock {r} re-taken")
            key = canonical_key(step.target)
            if key in seen:
                continue
            if len(seen) >= limit:
                report.truncated = True
                continue
            seen.add(key)
            queue.append(step.target)
    return report
