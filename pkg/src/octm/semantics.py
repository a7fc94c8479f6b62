"""The OCTM step relation.

``enabled_steps`` lists every transition of a state. Thread-local steps
come from the redex of each thread; commit and abort are single
family-wide steps of a whole transaction. Each step carries the names of
all rules used to derive it (``subrules``), which the test suite uses as
a rule-coverage ledger.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from octm.state import (
    INTERNAL, AbortTx, CommitTx, MachineState, NewTx, Plain, Primary,
    Secondary, StepLabel, Thread, commit_mem, clean, participants, rename_tx,
)
from octm.syntax import FuelExhausted, Stuck, decompose, pure_eval, recompose
from octm.terms import (
    RETURN_FN, UNIT, Abort, App, Atomic, Bind, Fork, Isolated, Lam, Loc,
    NewVar, NonceLit, ReadVar, Return, Term, TidLit, Var, WriteVar, _NewNonce,
    _Retry, is_value,
)

RULES = (
    "Eval", "BindReturn", "BindRetry", "BindAbort", "TermP", "TermT",
    "ForkP", "ForkT", "NewP", "NewT", "ReadP", "ReadT", "ReadJoin",
    "ReadMerge", "WriteP", "WriteT", "WriteJoin", "WriteMerge", "Atomic",
    "IsolatedP", "IsolatedT", "RaiseAbort1", "RaiseAbort2", "SigAbort1",
    "SigAbort2", "AbBroadcast", "Commit1", "Commit2", "CoBroadcast",
    "TrIgnore",
)

ISOLATED_FUEL = 5_000


@dataclass(frozen=True)
class Step:
    rule: str
    tid: int | None
    label: StepLabel
    target: MachineState
    subrules: tuple[str, ...]
    source: str  # fingerprint of the state the step was computed for
    detail: str = ""

    @property
    def is_beta(self) -> bool:
        return self.label is not INTERNAL


@dataclass(frozen=True)
class NotEnabled:
    reason: str


class StaleStep(ValueError):
    pass


@dataclass(frozen=True)
class Terminal:
    aborted: bool = False


@dataclass(frozen=True)
class StuckState:
    diagnostic: str


@dataclass(frozen=True)
class Live:
    pass


# -- helpers -------------------------------------------------------------------

def _suffix(th: Thread) -> str:
    return "P" if isinstance(th, Plain) else "T"


def _eval_operand(t: Term):
    """Pure-evaluate an operand; returns a value or a Stuck."""
    try:
        return pure_eval(t)
    except FuelExhausted as exc:
        return Stuck(str(exc))


def _put(s: MachineState, th: Thread) -> MachineState:
    threads = dict(s.threads)
    threads[th.tid] = th
    return replace(s, threads=threads)


class _Local:
    """Outcome of examining one thread: steps found, or why it is blocked."""

    def __init__(self):
        self.steps: list[Step] = []
        self.blocked: str | None = None
        self.retry = False


def thread_steps(s: MachineState, th: Thread, allow_isolated=True) -> _Local:
    out = _Local()
    ctx, redex = decompose(th.term)
    sfx = _suffix(th)
    in_tx = not isinstance(th, Plain)
    fp = s.fingerprint

    def emit(rule, target, subrules, label=INTERNAL, detail=""):
        out.steps.append(Step(rule, th.tid, label, target, tuple(subrules), fp, detail))

    def set_term(term, state=s, thread=th):
        return _put(state, replace(thread, term=term))

    if not is_value(redex):
        v = _eval_operand(redex)
        if isinstance(v, Stuck):
            out.blocked = f"thread {th.tid}: {v.reason}"
            return out
        emit("Term" + sfx, set_term(recompose(ctx, v)), ("Term" + sfx, "Eval"))
        return out

    if ctx and isinstance(redex, (Return, _Retry, Abort)):
        right, rest = ctx[0], ctx[1:]
        if isinstance(redex, Return):
            new, sub = recompose(rest, App(right, redex.value)), "BindReturn"
        elif isinstance(redex, _Retry):
            new, sub = recompose(rest, redex), "BindRetry"
        else:
            new, sub = recompose(rest, redex), "BindAbort"
        emit("Term" + sfx, set_term(new), ("Term" + sfx, sub))
        return out

    if isinstance(redex, Return):
        return out  # finished, or waiting for commit
    if isinstance(redex, _Retry):
        out.blocked = f"thread {th.tid}: retry"
        out.retry = True
        return out
    if isinstance(redex, Abort):
        if not in_tx:
            out.blocked = f"thread {th.tid}: abort outside transaction"
        return out  # transactional aborts are global steps

    if isinstance(redex, Fork):
        child = s.next_tid
        s2 = replace(s, next_tid=child + 1)
        s2 = set_term(recompose(ctx, Return(TidLit(child))), s2)
        threads = dict(s2.threads)
        if in_tx:
            threads[child] = Secondary(redex.body, RETURN_FN, child, th.tx)
        else:
            threads[child] = Plain(redex.body, child)
        emit("Fork" + sfx, replace(s2, threads=threads), ("Fork" + sfx,))
        return out

    if isinstance(redex, NewVar):
        v = _eval_operand(redex.init)
        if isinstance(v, Stuck):
            out.blocked = f"thread {th.tid}: {v.reason}"
            return out
        r = s.next_loc
        co = s.co_locs | {r} if redex.tag == "co" else s.co_locs
        s2 = replace(s, next_loc=r + 1, co_locs=co)
        if in_tx:
            working = dict(s2.working)
            working[r] = (v, th.tx)
            s2 = replace(s2, working=working)
        else:
            heap = dict(s2.heap)
            heap[r] = v
            s2 = replace(s2, heap=heap)
        emit("New" + sfx, set_term(recompose(ctx, Return(Loc(r))), s2), ("New" + sfx,))
        return out

    if isinstance(redex, _NewNonce):
        count = s.nonces.get(th.tid, 0)
        nonces = dict(s.nonces)
        nonces[th.tid] = count + 1
        s2 = replace(s, nonces=nonces)
        value = NonceLit(th.tid, count)
        emit("Nonce" + sfx, set_term(recompose(ctx, Return(value)), s2), ("Nonce" + sfx,))
        return out

    if isinstance(redex, (ReadVar, WriteVar)):
        _memory_step(s, th, ctx, redex, out, emit, set_term)
        return out

    if isinstance(redex, Atomic):
        if in_tx:
            out.blocked = f"thread {th.tid}: nested atomic has no rule"
            return out
        k = s.next_tx
        if not ctx:
            cont = RETURN_FN
        elif len(ctx) == 1:
            cont = ctx[0]
        else:
            cont = Lam("x", recompose(ctx[1:], App(ctx[0], Var("x"))))
        prim = Primary(redex.body, redex.compensation, cont, th.tid, k)
        s2 = _put(replace(s, next_tx=k + 1), prim)
        emit("Atomic", s2, ("Atomic",), NewTx(k))
        return out

    if isinstance(redex, Isolated):
        if not allow_isolated:
            out.blocked = "nested isolated"
            return out
        res = isolated_step(s, th.tid)
        if isinstance(res, NotEnabled):
            out.blocked = f"thread {th.tid}: isolated not enabled ({res.reason})"
            out.retry = res.reason == "retry"
            return out
        target, rule, subrules = res
        emit(rule, target, subrules)
        return out

    out.blocked = f"thread {th.tid}: non-monadic value in monadic position"
    return out


def _memory_step(s, th, ctx, redex, out, emit, set_term):
    in_tx = not isinstance(th, Plain)
    sfx = _suffix(th)
    ref = _eval_operand(redex.ref)
    if not isinstance(ref, Loc):
        reason = ref.reason if isinstance(ref, Stuck) else "not a location"
        out.blocked = f"thread {th.tid}: bad reference ({reason})"
        return
    r = ref.id
    write = isinstance(redex, WriteVar)
    if write:
        value = _eval_operand(redex.value)
        if isinstance(value, Stuck):
            out.blocked = f"thread {th.tid}: {value.reason}"
            return
        result = Return(UNIT)
    kind = "Write" if write else "Read"

    if r in s.working:
        current, j = s.working[r]
        if not write:
            result = Return(current)
        if not in_tx:
            # the thread joins j; the whole term becomes its compensation
            s2 = s
            if write:
                working = dict(s.working)
                working[r] = (value, j)
                s2 = replace(s, working=working)
            joined = Secondary(recompose(ctx, result), Lam("_", th.term), th.tid, j)
            emit(kind + "Join", _put(s2, joined), (kind + "Join",), detail=f"tx {j}")
            return
        k = th.tx
        s2 = rename_tx(s, k, j) if k != j else s
        if write:
            working = dict(s2.working)
            working[r] = (value, j)
            s2 = replace(s2, working=working)
        moved = replace(s2.threads[th.tid], term=recompose(ctx, result))
        detail = "self" if k == j else f"{k}->{j}"
        emit(kind + "Merge", _put(s2, moved), (kind + "Merge",), detail=detail)
        return

    if r not in s.heap:
        out.blocked = f"thread {th.tid}: dangling location {r}"
        return
    if not write:
        result = Return(s.heap[r])
    if in_tx:
        working = dict(s.working)
        working[r] = (value if write else s.heap[r], th.tx)
        s2 = replace(s, working=working)
    elif write:
        heap = dict(s.heap)
        heap[r] = value
        s2 = replace(s, heap=heap)
    else:
        s2 = s
    emit(kind + sfx, set_term(recompose(ctx, result), s2), (kind + sfx,))


# -- isolated ---------------------------------------------------------------------

def isolated_step(s: MachineState, tid: int):
    """Run the body of thread ``tid``'s ``isolated`` redex to completion.

    Returns ``(target, rule, subrules)`` or NotEnabled. The body runs as
    a single thread on the full memory; forks, transactions and nested
    isolated blocks are not allowed. A plain thread whose body touches a
    claimed location joins that transaction and the body is re-run as a
    participant from the original memory.
    """
    th = s.threads[tid]
    ctx, redex = decompose(th.term)
    assert isinstance(redex, Isolated)
    res = _isolated_run(s, th, ctx, redex.body)
    if isinstance(res, tuple) and res[0] == "join":
        _, j, join_rule = res
        joined = Secondary(th.term, Lam("_", th.term), tid, j)
        res = _isolated_run(s, joined, ctx, redex.body)
        if isinstance(res, NotEnabled):
            return res
        target, subrules = res
        return target, "IsolatedP", ("IsolatedP", join_rule, "IsolatedT") + subrules
    if isinstance(res, NotEnabled):
        return res
    target, subrules = res
    rule = "Isolated" + _suffix(th)
    return target, rule, (rule,) + subrules


def _isolated_run(s: MachineState, th: Thread, ctx, body: Term):
    in_tx = not isinstance(th, Plain)
    if in_tx:
        sub = Secondary(body, RETURN_FN, th.tid, th.tx)
    else:
        sub = Plain(body, th.tid)
    cur = replace(s, threads={th.tid: sub})
    renames = []
    used: list[str] = []
    for _ in range(ISOLATED_FUEL):
        sub = cur.threads[th.tid]
        sctx, sredex = decompose(sub.term)
        if not sctx and (isinstance(sredex, Return)
                         or (in_tx and isinstance(sredex, Abort))):
            break
        if not sctx and isinstance(sredex, _Retry):
            return NotEnabled("retry")
        if isinstance(sredex, (Fork, Atomic, Isolated)) and is_value(sredex):
            return NotEnabled(f"{type(sredex).__name__.lower()} inside isolated")
        local = thread_steps(cur, sub, allow_isolated=False)
        if not local.steps:
            return NotEnabled(local.blocked or "blocked")
        (step,) = local.steps
        if step.rule in ("ReadJoin", "WriteJoin"):
            return ("join", cur.working[_loc_of(sredex)][1], step.rule)
        if step.rule in ("ReadMerge", "WriteMerge") and step.detail != "self":
            k, j = (int(x) for x in step.detail.split("->"))
            renames.append((k, j))
        used.extend(r for r in step.subrules if r not in used)
        cur = step.target
    else:
        return NotEnabled("fuel exhausted inside isolated (possible divergence)")

    final_sub = cur.threads[th.tid]
    threads = dict(s.threads)
    threads[th.tid] = th
    for k, j in renames:
        threads = {t: (replace(x, tx=j) if x.tx == k else x) for t, x in threads.items()}
    new_th = threads[th.tid]
    new_th = replace(new_th, term=recompose(ctx, final_sub.term))
    if in_tx:
        new_th = replace(new_th, tx=final_sub.tx)
    threads[th.tid] = new_th
    return replace(cur, threads=threads), tuple(used)


def _loc_of(redex) -> int:
    return _eval_operand(redex.ref).id


# -- transaction-wide steps ----------------------------------------------------------

def _commit_steps(s: MachineState, k: int) -> list[Step]:
    parts = participants(s, k)
    prims = [th for th in parts if isinstance(th, Primary)]
    if not prims or not all(isinstance(th.term, Return) for th in prims):
        return []
    threads = dict(s.threads)
    subrules = ["Commit1"]
    for th in parts:
        if isinstance(th, Primary):
            threads[th.tid] = Plain(Bind(th.term, th.continuation), th.tid)
        else:
            threads[th.tid] = Plain(th.term, th.tid)
            if "Commit2" not in subrules:
                subrules.append("Commit2")
    if len(parts) > 1:
        subrules.append("CoBroadcast")
    if len(parts) < len(s.threads):
        subrules.append("TrIgnore")
    target = replace(commit_mem(s, k), threads=threads)
    return [Step("CommitTx", None, CommitTx(k), target, tuple(subrules), s.fingerprint)]


def _abort_steps(s: MachineState, k: int) -> list[Step]:
    parts = participants(s, k)
    steps = []
    seen = set()
    for raiser in parts:
        if not isinstance(raiser.term, Abort):
            continue
        value = raiser.term.value
        threads = dict(s.threads)
        subrules = ["RaiseAbort1" if isinstance(raiser, Primary) else "RaiseAbort2"]
        for th in parts:
            comp = App(th.compensation, value)
            if isinstance(th, Primary):
                threads[th.tid] = Plain(Bind(comp, th.continuation), th.tid)
            else:
                threads[th.tid] = Plain(comp, th.tid)
            if th is not raiser:
                sig = "SigAbort1" if isinstance(th, Primary) else "SigAbort2"
                if sig not in subrules:
                    subrules.append(sig)
        if len(parts) > 1:
            subrules.append("AbBroadcast")
        if len(parts) < len(s.threads):
            subrules.append("TrIgnore")
        target = replace(clean(s, k), threads=threads)
        if target.fingerprint in seen:
            continue
        seen.add(target.fingerprint)
        steps.append(Step("AbortTx", raiser.tid, AbortTx(k, value), target,
                          tuple(subrules), s.fingerprint))
    return steps


# -- public interface ------------------------------------------------------------------

def analyse(s: MachineState) -> tuple[list[Step], list[str], bool]:
    """All enabled steps, blocking diagnostics, and whether retry is involved."""
    steps: list[Step] = []
    blocked: list[str] = []
    retry = False
    for tid in sorted(s.threads):
        local = thread_steps(s, s.threads[tid])
        steps.extend(local.steps)
        if local.blocked:
            blocked.append(local.blocked)
        retry = retry or local.retry
    txs = sorted({th.tx for th in s.threads.values() if th.tx is not None})
    for k in txs:
        steps.extend(_commit_steps(s, k))
        steps.extend(_abort_steps(s, k))
    return steps, blocked, retry


def enabled_steps(s: MachineState) -> list[Step]:
    cached = s.__dict__.get("_steps")
    if cached is None:
        cached = analyse(s)
        object.__setattr__(s, "_steps", cached)
    return cached[0]


def apply_step(s: MachineState, step: Step) -> MachineState:
    if step.source != s.fingerprint:
        raise StaleStep(f"step {step.rule} was computed for state {step.source}, "
                        f"not {s.fingerprint}")
    return step.target


def classify(s: MachineState):
    if all(isinstance(th, Plain) and isinstance(th.term, (Return, Abort))
           for th in s.threads.values()):
        aborted = any(isinstance(th.term, Abort) for th in s.threads.values())
        return Terminal(aborted)
    steps = enabled_steps(s)
    if steps:
        return Live()
    _, blocked, retry = s.__dict__["_steps"]
    if retry:
        return StuckState("retry-deadlock")
    return StuckState("; ".join(blocked) or "no rule applies")
