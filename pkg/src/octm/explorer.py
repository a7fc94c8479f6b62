"""Schedule search over the step relation.

Two modes: a seeded random walk that backtracks out of retry dead ends,
and a breadth-first exhaustive search memoised on states up to renaming
of ids. Both record traces as lists of ``TraceRecord``; a trace replays
from its initial state to the same fingerprints.
"""
from __future__ import annotations

import json
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from octm.semantics import (
    Live, Step, StuckState, Terminal, classify, enabled_steps,
)
from octm.state import MachineState, canonical_key

DEFAULT_MAX_STEPS = 400
DEFAULT_MAX_STATES = 200_000


def default_max_states() -> int:
    return int(os.environ.get("OCTM_MAX_STATES", DEFAULT_MAX_STATES))


@dataclass
class ExploreConfig:
    mode: str = "exhaustive"
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    max_states: int = field(default_factory=default_max_states)
    fairness: bool = False
    restarts: int = 100

    def __post_init__(self):
        if self.mode not in ("random", "exhaustive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.max_states < 1:
            raise ValueError("max_states must be at least 1")


@dataclass(frozen=True)
class TraceRecord:
    index: int
    rule: str
    thread: int | None
    label: str
    subrules: tuple[str, ...]
    before: str
    after: str

    @classmethod
    def of(cls, index: int, step: Step) -> "TraceRecord":
        return cls(index, step.rule, step.tid, str(step.label), step.subrules,
                   step.source, step.target.fingerprint)

    def to_json(self) -> str:
        return json.dumps({
            "index": self.index, "rule": self.rule, "thread": self.thread,
            "label": self.label, "subrules": list(self.subrules),
            "before": self.before, "after": self.after,
        }, sort_keys=True)


@dataclass
class Trace:
    records: list[TraceRecord]
    final: MachineState
    status: str  # terminal, terminal-abort, stuck, budget
    diagnostic: str = ""
    restarts: int = 0

    def lines(self) -> list[str]:
        return [r.to_json() for r in self.records]

    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def rules(self) -> set[str]:
        out = set()
        for r in self.records:
            out.update(r.subrules)
        return out


def _status(state: MachineState):
    c = classify(state)
    if isinstance(c, Terminal):
        return ("terminal-abort" if c.aborted else "terminal"), ""
    if isinstance(c, StuckState):
        return "stuck", c.diagnostic
    return "live", ""


def replay(initial: MachineState, records: list[TraceRecord]) -> MachineState:
    """Re-run a trace, checking every step's fingerprints."""
    cur = initial
    for rec in records:
        if cur.fingerprint != rec.before:
            raise ValueError(f"replay diverged before step {rec.index}")
        for step in enabled_steps(cur):
            if step.target.fingerprint == rec.after and step.rule == rec.rule:
                cur = step.target
                break
        else:
            raise ValueError(f"step {rec.index} ({rec.rule}) not enabled on replay")
    return cur


# -- random runs ------------------------------------------------------------------

def run_random(state: MachineState, config: ExploreConfig) -> Trace:
    """One maximal seeded run.

    On reaching a retry dead end the run rewinds to the most recent state
    that offered a choice and picks again, up to ``config.restarts`` times.
    """
    rng = random.Random(config.seed)
    path: list[tuple[MachineState, Step]] = []
    cur = state
    restarts = 0
    last_tid = -1
    while True:
        status, diag = _status(cur)
        if status != "live":
            if status == "stuck" and diag == "retry-deadlock" and restarts < config.restarts:
                back = _rewind(path)
                if back is not None:
                    restarts += 1
                    cur = path[back][0]
                    del path[back:]
                    continue
            break
        if len(path) >= config.max_steps:
            status, diag = "budget", f"step budget {config.max_steps} exhausted"
            break
        steps = enabled_steps(cur)
        if config.fairness:
            step = min(steps, key=lambda st: ((st.tid if st.tid is not None else -1)
                                              <= last_tid, st.tid or 0))
            last_tid = step.tid if step.tid is not None else last_tid
        else:
            step = steps[rng.randrange(len(steps))]
        path.append((cur, step))
        cur = step.target
    records = [TraceRecord.of(i, st) for i, (_, st) in enumerate(path)]
    return Trace(records, cur, status, diag, restarts)


def _rewind(path) -> int | None:
    for i in range(len(path) - 1, -1, -1):
        if len(enabled_steps(path[i][0])) > 1:
            return i
    return None


# -- exhaustive search ---------------------------------------------------------------

@dataclass
class OutcomeClass:
    key: str
    kind: str  # terminal, terminal-abort, stuck
    diagnostic: str
    state: MachineState
    trace: list[TraceRecord]


@dataclass
class ExploreResult:
    reached: dict[str, OutcomeClass]
    visited: int = 0
    edges: int = 0
    retry_prunes: int = 0
    deadlocks: int = 0
    revisits: int = 0
    truncated: bool = False

    def classes(self, kind: str | None = None) -> list[OutcomeClass]:
        return [c for c in self.reached.values() if kind is None or c.kind == kind]

    def outcome_keys(self) -> frozenset[str]:
        return frozenset(self.reached)

    def summary(self) -> dict:
        return {
            "classes": sorted(({"key": c.key, "kind": c.kind, "diagnostic": c.diagnostic}
                               for c in self.reached.values()),
                              key=lambda d: (d["kind"], d["key"])),
            "visited": self.visited, "edges": self.edges,
            "retry_prunes": self.retry_prunes, "deadlocks": self.deadlocks,
            "truncated": self.truncated,
        }


class _Graph:
    """BFS bookkeeping shared by ``explore`` and ``reachable``."""

    def __init__(self, root: MachineState):
        self.root = root
        self.parent: dict[str, tuple[str, Step] | None] = {canonical_key(root): None}
        self.depth = {canonical_key(root): 0}

    def trace_to(self, key: str, last: Step | None = None) -> list[TraceRecord]:
        steps = [] if last is None else [last]
        while self.parent[key] is not None:
            key, step = self.parent[key]
            steps.append(step)
        steps.reverse()
        # memoisation may join paths at renamed states: rebuild concretely
        return _concretise(self.root, steps)


def _concretise(root: MachineState, steps: list[Step]) -> list[TraceRecord]:
    """Turn a path of steps between canonically equal states into a trace."""
    records = []
    cur = root
    for i, step in enumerate(steps):
        if step.source != cur.fingerprint:
            match = _matching_step(cur, step)
            step = match
        records.append(TraceRecord.of(i, step))
        cur = step.target
    return records


def _matching_step(cur: MachineState, step: Step) -> Step:
    want = canonical_key(step.target)
    for cand in enabled_steps(cur):
        if cand.rule == step.rule and canonical_key(cand.target) == want:
            return cand
    raise RuntimeError("could not concretise trace")


def explore(state: MachineState, config: ExploreConfig | None = None) -> ExploreResult:
    config = config or ExploreConfig()
    graph = _Graph(state)
    result = ExploreResult(reached={})
    queue = deque([state])
    done: set[str] = set()
    while queue:
        cur = queue.popleft()
        key = canonical_key(cur)
        if key in done:  # memoisation failure; counted, never expected
            result.revisits += 1
            continue
        done.add(key)
        result.visited += 1
        status, diag = _status(cur)
        if status != "live":
            if status == "stuck":
                result.deadlocks += 1
                if diag == "retry-deadlock":
                    result.retry_prunes += 1
            if key not in result.reached:
                result.reached[key] = OutcomeClass(key, status, diag, cur,
                                                   graph.trace_to(key))
            continue
        if graph.depth[key] >= config.max_steps:
            result.truncated = True
            continue
        for step in enabled_steps(cur):
            result.edges += 1
            nkey = canonical_key(step.target)
            if nkey in graph.parent:
                continue
            if len(graph.parent) >= config.max_states:
                result.truncated = True
                continue
            graph.parent[nkey] = (key, step)
            graph.depth[nkey] = graph.depth[key] + 1
            queue.append(step.target)
    return result


@dataclass(frozen=True)
class Unreachable:
    bounded: bool  # True when the search was truncated


def reachable(state: MachineState,
              predicate: Callable[[MachineState, Step | None], bool],
              config: ExploreConfig | None = None):
    """First trace to a state satisfying ``predicate``.

    The predicate sees the state and the step that produced it (None for
    the initial state), so it can test labels as well as memory.
    """
    config = config or ExploreConfig()
    if predicate(state, None):
        return Trace([], state, "witness")
    graph = _Graph(state)
    queue = deque([state])
    truncated = False
    while queue:
        cur = queue.popleft()
        key = canonical_key(cur)
        if graph.depth[key] >= config.max_steps:
            truncated = True
            continue
        for step in enabled_steps(cur):
            if predicate(step.target, step):
                records = graph.trace_to(key, step)
                return Trace(records, step.target, "witness")
            nkey = canonical_key(step.target)
            if nkey in graph.parent:
                continue
            if len(graph.parent) >= config.max_states:
                truncated = True
                continue
            graph.parent[nkey] = (key, step)
            graph.depth[nkey] = graph.depth[key] + 1
            queue.append(step.target)
    return Unreachable(truncated)
