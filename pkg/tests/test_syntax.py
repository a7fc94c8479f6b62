import pytest
from hypothesis import given, settings, strategies as st

from octm.parser import ParseError, parse_program, parse_term
from octm.printer import show
from octm.syntax import Stuck, decompose, pure_eval, recompose
from octm.terms import (
    UNIT, Abort, App, Bind, Branch, Case, Con, Int, Lam, LetRec, Lit, Loc,
    NewVar, NonceLit, PCon, PrimOp, ReadVar, Retry, Return, Var, WriteVar,
    PWILD, MONADIC, substitute,
)


def alpha_eq(a, b) -> bool:
    """Alpha-equivalence through de Bruijn-style renaming of binders."""
    return _canon(a, {}) == _canon(b, {})


def _canon(t, env, depth=[0]):
    if isinstance(t, Var):
        return ("v", env.get(t.name, t.name))
    if isinstance(t, Lam):
        depth[0] += 1
        n = f"#{depth[0]}"
        body = _canon(t.body, {**env, t.param: n})
        depth[0] -= 1
        return ("lam", n, body)
    kids = tuple(_canon(c, env) for c in t.children())
    return (type(t).__name__, _fields(t), kids)


def _fields(t):
    if isinstance(t, Lit):
        return (t.kind, t.value)
    if isinstance(t, Con):
        return t.tag
    if isinstance(t, PrimOp):
        return t.op
    if isinstance(t, Loc):
        return t.id
    return None


class TestParser:
    def test_do_notation_desugars_to_bind(self):
        t = parse_term("do { x <- newVar 0; readVar x }")
        assert t == Bind(NewVar(Int(0)), Lam("x", ReadVar(Var("x"))))

    def test_return_unit(self):
        assert parse_term("return ()") == Return(UNIT)

    def test_empty_do_is_an_error(self):
        with pytest.raises(ParseError):
            parse_term("do { }")

    def test_sequencing_binds_wildcard(self):
        t = parse_term("do { writeVar r 1; readVar r }", free={"r"})
        assert t == Bind(WriteVar(Var("r"), Int(1)), Lam("_", ReadVar(Var("r"))))

    def test_defs_become_letrec(self):
        t = parse_program("def f x = return x; f 1")
        assert isinstance(t, LetRec) and t.name == "f"

    def test_unbound_variable_rejected(self):
        with pytest.raises(ParseError):
            parse_term("readVar r")

    def test_runtime_leaves_only_in_runtime_mode(self):
        with pytest.raises(ParseError):
            parse_term("readVar @3")
        assert parse_term("readVar @3", runtime=True) == ReadVar(Loc(3))

    def test_error_position(self):
        with pytest.raises(ParseError) as e:
            parse_program("do {\n  x <- ; return x }")
        assert e.value.line == 2


class TestPrinter:
    @pytest.mark.parametrize("src", [
        "do { x <- newVar 0; readVar x }",
        "case M1 3 of { M1 n -> return n; _ -> retry }",
        "atomic (return 1) (\\x -> return x)",
        "isolated (do { v <- newVar (M2 1 2); readVar v })",
        "(\\p -> case p of { (a, b) -> a + b }) (1, 2)",
        "fork (abort ()) >> newNonce",
        "let rec f = \\n -> if n == 0 then return 0 else f (n - 1) in f 3",
    ])
    def test_round_trip(self, src):
        t = parse_term(src)
        assert alpha_eq(parse_term(show(t)), t)

    def test_runtime_round_trip(self):
        t = WriteVar(Loc(2), Con("M1", (NonceLit(4, 1),)))
        assert parse_term(show(t), runtime=True) == t


class TestSubstitute:
    def test_variable(self):
        assert substitute(Var("x"), "x", Int(1)) == Int(1)

    def test_shadowing(self):
        t = Lam("x", Var("x"))
        assert substitute(t, "x", Int(1)) == t

    def test_capture_avoiding(self):
        t = App(Var("x"), Lam("y", Var("x")))
        out = substitute(t, "x", Var("y"))
        assert out.fn == Var("y")
        assert out.arg.param != "y" and out.arg.body == Var("y")


class TestPureEval:
    def test_beta(self):
        assert pure_eval(App(Lam("x", Var("x")), Int(42))) == Int(42)

    def test_case_on_channel_state(self):
        n = NonceLit(0, 0)
        t = Case(Con("M1", (n,)), (Branch(PCon("M1", "p"), Return(Var("p"))),
                                     Branch(PWILD, Retry)))
        assert pure_eval(t) == Return(n)

    def test_monadic_terms_are_values(self):
        t = ReadVar(Loc(0))
        assert pure_eval(t) == t

    def test_stuck_on_bad_operator(self):
        assert isinstance(pure_eval(PrimOp("+", Int(1), UNIT)), Stuck)

    def test_eq_or_retry(self):
        prog = "def eqOrRetry x y = if x == y then return () else retry; "
        n, m = NonceLit(0, 0), NonceLit(1, 0)
        f = pure_eval(parse_program(prog + "eqOrRetry"))
        assert pure_eval(App(App(f, n), n)) == Return(UNIT)
        assert pure_eval(App(App(f, n), m)) == Retry


class TestContexts:
    def test_left_nested_bind(self):
        f, g = Lam("a", Return(Var("a"))), Lam("b", Return(Var("b")))
        ctx, redex = decompose(Bind(Bind(Return(Int(1)), f), g))
        assert redex == Return(Int(1)) and ctx == (f, g)

    def test_hole(self):
        assert decompose(Return(Int(1))) == ((), Return(Int(1)))

    def test_retry_redex(self):
        f = Lam("a", Return(Var("a")))
        assert decompose(Bind(Retry, f)) == ((f,), Retry)


# -- generated terms --------------------------------------------------------------

_leaf = st.sampled_from([Int(0), Int(1), UNIT, Retry, Return(Int(2)), Abort(UNIT),
                         ReadVar(Loc(0)), Var("x")])


def _grow(children):
    return st.one_of(
        st.builds(Bind, children, st.builds(Lam, st.just("x"), children)),
        st.builds(App, st.builds(Lam, st.just("x"), children), children),
        st.builds(lambda a: Return(a), children),
        st.builds(lambda a, b: WriteVar(Loc(0), a) if b else NewVar(a), children, st.booleans()),
    )


terms = st.recursive(_leaf, _grow, max_leaves=12)


class TestProperties:
    @given(terms)
    @settings(max_examples=200, deadline=None)
    def test_recompose_inverts_decompose(self, t):
        assert recompose(*decompose(t)) == t

    @given(terms)
    @settings(max_examples=200, deadline=None)
    def test_pure_eval_deterministic(self, t):
        closed = substitute(t, "x", Int(5))
        assert pure_eval(closed) == pure_eval(closed)

    @given(terms)
    @settings(max_examples=200, deadline=None)
    def test_monadic_heads_untouched(self, t):
        closed = substitute(t, "x", Int(5))
        if isinstance(closed, MONADIC):
            assert pure_eval(closed) == closed

    @given(terms)
    @settings(max_examples=200, deadline=None)
    def test_print_parse_round_trip(self, t):
        closed = substitute(t, "x", Int(5))
        assert alpha_eq(parse_term(show(closed), runtime=True), closed)
