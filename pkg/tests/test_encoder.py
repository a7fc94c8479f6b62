import pytest

from octm.adequacy import check_protocol
from octm.encoder import (
    M0, EncodeError, chan_var, emit_term, eta, lib, protocol_terms, rho,
    sigma_enc,
)
from octm.explorer import explore
from octm.semantics import analyse
from octm.state import Plain, Primary, Secondary, initial_state
from octm.syntax import decompose
from octm.tccsm import Restrict, TccsTypeError, free_channels, parse_tccs, subprocs
from octm.terms import (
    TRUE, UNIT, Atomic, Bind, Con, Fork, Lam, Loc, NewVar, Return, Var, apply,
    seq,
)

from support import all_edges

P = parse_tccs


def locs_in(term) -> set:
    return {old for kind, old in term.shape[1] if kind == "loc"}


class TestProtocolLibrary:
    def test_library_names(self):
        assert set(protocol_terms()) == {"chooseThis", "eqOrRetry", "bang", "tau",
                                         "recv", "send"}

    def test_send_alone_posts_and_blocks(self):
        term = Bind(NewVar(M0), Lam("c", Bind(NewVar(TRUE), Lam("l", apply(
            lib("send"), Var("c"), Var("l"), Return(UNIT))))))
        res = explore(initial_state(term))
        (stuck,) = res.classes()
        assert stuck.kind == "stuck"
        assert stuck.state.heap[0].tag == "M1"

    def test_receiver_and_sender_complete(self):
        report = check_protocol(eta(P("a.0 | 'a.0")))
        assert report.ok, report.violations


class TestRho:
    def test_sum_forks_one_branch_per_summand(self):
        t = rho(P("tau.0 + a.0"))
        assert isinstance(t, Bind) and t.left == NewVar(TRUE)
        l = t.right.param
        zero = rho(P("0"))
        assert t.right.body == seq(Fork(apply(lib("tau"), Var(l), zero)),
                                   Fork(apply(lib("recv"), Var(chan_var("a")), Var(l), zero)))

    def test_singleton_output(self):
        t = rho(P("'a.0"))
        l = t.right.param
        assert t.right.body == Fork(apply(lib("send"), Var(chan_var("a")), Var(l), rho(P("0"))))

    def test_nil(self):
        assert rho(P("0")) == Return(UNIT)

    def test_inactive_transaction_is_an_atomic(self):
        t = rho(P("[[ co.0 , 'a.0 ]]"))
        assert t.left.tag == "co"
        inner = t.right.body
        assert isinstance(inner.left, Atomic)
        assert inner.left.compensation == Lam("_", rho(P("'a.0")))

    def test_co_outside_transaction(self):
        with pytest.raises(EncodeError):
            rho(P("co.0"))


class TestSigma:
    def test_nil(self):
        s = sigma_enc(P("0"))
        assert s.threads == {} and s.working == {}

    def test_two_plain_threads(self):
        s = sigma_enc(P("a.0 | 'a.0"))
        assert [type(th) for th in s.threads.values()] == [Plain, Plain]
        assert s.working == {}

    def test_active_transaction(self):
        s = sigma_enc(P("[[ co.0 >k> 0 ]]"))
        kinds = [type(th) for th in s.threads.values()]
        assert kinds == [Primary, Secondary, Secondary]
        prim, ab, body = s.threads.values()
        assert ab.term.__class__.__name__ == "Abort"
        assert body.term == rho(P("co.0"), Loc(1))
        assert s.heap == {0: TRUE, 1: M0} and s.co_locs == {1}
        assert {th.tx for th in s.threads.values()} == {0}

    def test_ill_formed_rejected(self):
        with pytest.raises(TccsTypeError):
            sigma_enc(P("co.0"))


class TestEta:
    def test_nil(self):
        s = eta(P("0"))
        assert s.threads == {} and s.working == {} and s.heap == {}

    def test_free_channel_cells(self):
        s = eta(P("a.0 | 'a.0"))
        assert len(s.threads) == 2 and s.heap == {0: M0}

    def test_two_transactions_get_distinct_names(self):
        s = eta(P("[[ a.co.0 >i> 0 ]] | [[ 'a.co.0 >j> 0 ]]"))
        prims = [th for th in s.threads.values() if isinstance(th, Primary)]
        assert len(prims) == 2 and prims[0].tx != prims[1].tx
        for p in prims:
            assert len([th for th in s.threads.values() if th.tx == p.tx]) == 3

    @pytest.mark.parametrize("src", [
        "a.0 | 'b.0 | c.0", "((a.'b.0 | 'a.0) \\{a}) | b.0 | a.0", "[[ a.co.0 >k> 'b.0 ]] | b.0",
    ])
    def test_free_channels_in_bijection_with_cells(self, src):
        p = P(src)
        s = eta(p)
        channel_cells = {r for r, v in s.heap.items() if v == M0 and r not in s.co_locs}
        restricted = sum(len(q.names) for q in _restrictions(p))
        assert len(channel_cells) == len(free_channels(p)) + restricted

    def test_restricted_channel_does_not_escape(self):
        s = eta(P("((a.'b.0 | 'a.0) \\{a}) | b.0 | a.0"))
        users = {}
        for th in s.threads.values():
            for r in locs_in(th.term):
                users.setdefault(r, set()).add(th.tid)
        # the private a is used by the two restricted threads only
        private = [r for r, ts in users.items() if ts == {0, 1}]
        assert private

    @pytest.mark.parametrize("src", [
        "[[ a.co.0 , 0 ]] | [[ 'a.co.0 , 0 ]]", "[[ co.0 , 0 ]]", "[[ 'a.co.0 >k> 0 ]] | a.0",
    ])
    def test_no_nested_atomic(self, src):
        for s, _ in all_edges(eta(P(src)), limit=600):
            _, blocked, _ = analyse(s)
            assert not any("nested atomic" in b for b in blocked)
            for th in s.threads.values():
                if th.tx is not None:
                    assert not isinstance(decompose(th.term)[1], Atomic)


class TestEmitTerm:
    def test_self_setup_program_synchronises(self):
        res = explore(initial_state(emit_term(P("a.0 | 'a.0"))))
        (final,) = res.classes()
        assert final.kind == "terminal"
        assert Con("M0") in final.state.heap.values()

    def test_active_transactions_rejected(self):
        with pytest.raises(EncodeError):
            emit_term(P("[[ co.0 >k> 0 ]]"))


class TestChoice:
    def test_exactly_one_winner(self):
        report = check_protocol(eta(P("(a.0 + b.0) | 'a.0")))
        assert report.ok, report.violations


def _restrictions(p):
    return [q for q in subprocs(p) if isinstance(q, Restrict)]
