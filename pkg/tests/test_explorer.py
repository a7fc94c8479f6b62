import pytest

from octm.explorer import (
    ExploreConfig, Trace, Unreachable, explore, reachable, replay, run_random,
)
from octm.parser import parse_program
from octm.state import CommitTx, canonical_key, initial_state
from octm.terms import Int

from support import all_edges, corpus_state, program_state

SYNC = """
def send c = isolated (do { v <- readVar c; case v of { 0 -> writeVar c 1; _ -> retry } });
def recv c = isolated (do { v <- readVar c; case v of { 1 -> writeVar c 2; _ -> retry } });
do { c <- newVar 0; d <- newVar 0; fork (send c >> writeVar d 1); recv c }
"""


class TestConfig:
    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            ExploreConfig(mode="dfs")

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("OCTM_MAX_STATES", "17")
        assert ExploreConfig().max_states == 17


class TestRandom:
    def test_pure_program_ignores_seed(self):
        s = program_state("(\\x -> return x) 1 >>= \\y -> return (y + 1)")
        a = run_random(s, ExploreConfig(mode="random", seed=1))
        b = run_random(s, ExploreConfig(mode="random", seed=99))
        assert a.lines() == b.lines() and a.status == "terminal"

    def test_fixed_seed_is_deterministic(self):
        s = corpus_state("handshake_open.octm")
        cfg = ExploreConfig(mode="random", seed=7)
        assert run_random(s, cfg).lines() == run_random(s, cfg).lines()

    def test_some_seed_completes_the_sync(self):
        s = program_state(SYNC)
        finals = {run_random(s, ExploreConfig(mode="random", seed=i)).final.heap.get(1)
                  for i in range(20)}
        assert Int(1) in finals

    def test_budget(self):
        s = program_state("def loop x = return x >>= loop; loop 0")
        t = run_random(s, ExploreConfig(mode="random", max_steps=10))
        assert t.status == "budget" and len(t.records) == 10

    def test_trace_replays(self):
        s = corpus_state("rpc.octm")
        t = run_random(s, ExploreConfig(mode="random", seed=3))
        assert replay(s, t.records).fingerprint == t.final.fingerprint


class TestExhaustive:
    def test_handshake_open_commits(self):
        res = explore(corpus_state("handshake_open.octm"))
        terminal = res.classes("terminal")
        assert terminal and not res.truncated
        assert any(r.label.startswith("co") for c in terminal for r in c.trace)

    def test_handshake_isolated_deadlocks(self):
        res = explore(corpus_state("handshake_isolated.octm"))
        assert res.classes() and all(c.kind == "stuck" for c in res.classes())

    def test_memo_visits_each_state_once(self):
        s = corpus_state("mvar_race.octm")
        res = explore(s)
        keys = {canonical_key(s)} | {canonical_key(st.target) for _, st in all_edges(s)}
        assert res.revisits == 0 and res.visited == len(keys)

    def test_class_traces_replay(self):
        s = corpus_state("rpc.octm")
        for c in explore(s).classes():
            assert canonical_key(replay(s, c.trace)) == c.key

    def test_truncation(self):
        res = explore(corpus_state("handshake_open.octm"), ExploreConfig(max_states=5))
        assert res.truncated

    @pytest.mark.parametrize("name", ["mvar.octm", "mvar_race.octm", "handshake_open.octm"])
    def test_random_outcomes_are_in_exhaustive_set(self, name):
        s = corpus_state(name)
        keys = explore(s).outcome_keys()
        for seed in range(1000):
            t = run_random(s, ExploreConfig(mode="random", seed=seed))
            if t.status == "terminal":
                assert canonical_key(t.final) in keys


class TestReachable:
    def test_commit_witness(self):
        s = corpus_state("handshake_open.octm")
        res = reachable(s, lambda st, step: step is not None and isinstance(step.label, CommitTx))
        assert isinstance(res, Trace) and res.records[-1].label.startswith("co")
        assert replay(s, res.records).fingerprint == res.final.fingerprint

    def test_unreachable_value(self):
        s = corpus_state("mvar.octm")
        res = reachable(s, lambda st, _: Int(99) in st.heap.values())
        assert isinstance(res, Unreachable) and not res.bounded

    def test_empty_program(self):
        s = initial_state(parse_program("return ()"))
        res = reachable(s, lambda st, step: step is not None)
        assert isinstance(res, Unreachable)
