import pytest
from hypothesis import given, settings, strategies as st

from octm.adequacy import (
    MachineGraph, SimConfig, check, check_backward, check_forward,
    check_protocol, check_star, cong_t, match_key, matches, normalise, settle,
)
from octm.encoder import M0, eta
from octm.semantics import enabled_steps
from octm.state import MachineState, Plain, canonical_key
from octm.tccsm import parse_tccs, tccs_reduce
from octm.parser import parse_term
from octm.terms import FALSE, UNIT, Int, Return

from support import all_edges, corpus_text

P = parse_tccs
SMALL = SimConfig(forward_depth=200, backward_depth=30, max_states=20_000)


def corpus_proc(name):
    return P(corpus_text(name))


def settled(src):
    return normalise(eta(P(src)))


class TestCongruence:
    def test_finished_thread_is_ignored(self):
        s = settled("a.0 | 'a.0")
        extra = MachineState(heap=s.heap, working=s.working,
                             threads={**s.threads, 99: Plain(Return(UNIT), 99)},
                             co_locs=s.co_locs)
        assert match_key(extra) == match_key(s)

    def test_reflexive(self):
        s = settled("(a.0 + b.0) | 'a.0")
        assert match_key(s) == match_key(s)

    def test_idempotent(self):
        s = settled("[[ a.co.0 >k> 'b.0 ]] | b.0")
        rep = cong_t(s)
        assert canonical_key(cong_t(rep)) == canonical_key(rep)

    def test_transaction_names_do_not_matter(self):
        assert match_key(settled("[[ co.0 >x> 0 ]]")) == match_key(settled("[[ co.0 >y> 0 ]]"))

    def test_synchronised_pair_matches_two_nils(self):
        p = P("a.0 | 'a.0")
        (_, _, q), = tccs_reduce(p)
        found = [st.target for s, st in all_edges(eta(p)) if matches(st.target, q)]
        assert found

    def test_live_heap_value_distinguishes(self):
        s = settled("a.0 | 'a.0")
        (r,) = [r for r, v in s.heap.items() if v == M0]
        other = MachineState(heap={**s.heap, r: Int(5)}, working=s.working,
                             threads=s.threads, co_locs=s.co_locs)
        assert match_key(other) != match_key(s)

    def test_distinct_processes_differ(self):
        assert match_key(settled("a.0")) != match_key(settled("b.0 | 'b.0"))

    def test_ordinary_receiver_is_not_a_commit_receiver(self):
        assert match_key(settled("a.0")) != match_key(settled("0"))

    def test_settle_is_a_fixpoint(self):
        s = settle(eta(P("(a.0 + b.0) | 'a.0")))
        assert canonical_key(settle(s)) == canonical_key(s)


class TestCongruenceSoundness:
    @pytest.mark.parametrize("src", ["a.0 | 'a.0", "[[ a.co.0 >k> 'b.0 ]] | b.0"])
    def test_dropped_threads_cannot_make_progress(self, src):
        # anything cong_t forgets must not be able to change the visible heap
        for s, _ in all_edges(eta(P(src)), limit=400):
            s = normalise(s)
            kept = set(cong_t(s).threads)
            for step in enabled_steps(s):
                if step.tid is None or step.tid in kept:
                    continue
                before = {r: v for r, v in s.heap.items() if r not in s.co_locs}
                after = {r: v for r, v in step.target.heap.items() if r in before}
                assert after == before, step.rule


PROCS = st.sampled_from(["0", "a.0", "'a.0", "a.0 | 'a.0", "(a.0 + b.0) | 'a.0",
                         "[[ co.0 , 0 ]]", "[[ co.0 >k> 0 ]]", "a.'b.0 | b.0"])


class TestEquivalenceProperties:
    @given(PROCS, PROCS)
    @settings(max_examples=60, deadline=None)
    def test_symmetric(self, a, b):
        x, y = settled(a), settled(b)
        assert (match_key(x) == match_key(y)) == (match_key(y) == match_key(x))

    @given(PROCS, PROCS, PROCS)
    @settings(max_examples=60, deadline=None)
    def test_transitive(self, a, b, c):
        x, y, z = (match_key(settled(v)) for v in (a, b, c))
        if x == y and y == z:
            assert x == z

    @given(PROCS)
    @settings(max_examples=30, deadline=None)
    def test_encoding_matches_its_process(self, src):
        assert matches(eta(P(src)), P(src))


class TestForward:
    @pytest.mark.parametrize("name", ["sync.tccs", "fused_commit.tccs", "tnew.tccs",
                                      "chain.tccs"])
    def test_passes(self, name):
        v = check_forward(corpus_proc(name), SMALL)
        assert v.forward_ok, [f.to_dict() for f in v.failures]
        assert v.forward_checked > 0

    def test_abort_is_simulated(self):
        v = check_forward(corpus_proc("tab.tccs"), SMALL)
        assert v.forward_ok
        assert any(kind == "ab" for kind, _, _ in tccs_reduce(corpus_proc("tab.tccs")))

    def test_tsum_join_is_not_simulated(self):
        # joining an open transaction from a plain sum has no single machine
        # run matching the fused process
        v = check_forward(corpus_proc("tsum_join.tccs"), SMALL)
        assert not v.forward_ok and not v.bounded
        assert all(f.direction == "forward" for f in v.failures)


class TestBackward:
    @pytest.mark.parametrize("name", ["sync.tccs", "choice.tccs", "tsum_join.tccs",
                                      "restriction.tccs"])
    def test_passes(self, name):
        v = check_backward(corpus_proc(name), SMALL)
        assert v.backward_ok, [f.to_dict() for f in v.failures]

    def test_lone_sender_breaks_backward(self):
        v = check_backward(corpus_proc("lone_sender.tccs"), SMALL)
        assert not v.backward_ok and not v.bounded
        assert v.failures[0].direction == "backward"

    def test_star_agrees_on_lone_sender(self):
        assert not check_star(corpus_proc("lone_sender.tccs"), SMALL).backward_ok

    @pytest.mark.parametrize("name", ["sync.tccs", "fused_commit.tccs"])
    def test_star_passes(self, name):
        assert check_star(corpus_proc(name), SMALL).backward_ok

    def test_shared_graph(self):
        graph = MachineGraph()
        check_forward(corpus_proc("sync.tccs"), SMALL, graph)
        n = len(graph.nodes)
        check_backward(corpus_proc("sync.tccs"), SMALL, graph)
        assert len(graph.nodes) >= n > 0


class TestCheck:
    def test_verdict_serialises(self):
        v = check(corpus_proc("sync.tccs"), SMALL)
        d = v.to_dict()
        assert d["ok"] and d["failures"] == [] and d["processes"] >= 2

    def test_strict(self):
        assert check(corpus_proc("tsync_fusion.tccs"), SMALL, strict=True).ok

    def test_tight_budget_is_bounded(self):
        v = check(corpus_proc("choice.tccs"), SimConfig(forward_depth=1, backward_depth=1,
                                                        max_states=5))
        assert not v.ok and v.bounded


class TestProtocol:
    @pytest.mark.parametrize("src", ["a.0 | 'a.0", "(a.0 + b.0) | 'a.0"])
    def test_cycle_and_single_winner(self, src):
        r = check_protocol(eta(P(src)))
        assert r.ok, r.violations
        assert r.edges >= r.states - 1

    def test_truncation_is_not_ok(self):
        r = check_protocol(eta(P("a.0 | 'a.0")), max_states=3)
        assert r.truncated and not r.ok

    def test_illegal_move_is_reported(self):
        # a taken lock written back to True by a rogue thread
        rogue = parse_term("writeVar @0 True", runtime=True)
        s = MachineState(heap={0: FALSE}, threads={0: Plain(rogue, 0)})
        r = check_protocol(s)
        assert any("re-taken" in v for v in r.violations)
