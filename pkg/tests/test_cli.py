import json

import pytest

from octm.cli import (
    EXIT_BUDGET, EXIT_FAIL, EXIT_OK, EXIT_USAGE, load_examples, load_state, main,
    read_input,
)
from octm.state import MachineState


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestInputs:
    def test_bundled_name_with_and_without_extension(self):
        assert read_input("sync")[0] == read_input("sync.tccs")[0]

    def test_directory_prefix_and_alias(self):
        text, name = read_input("examples/handshake.octm")
        assert name == "handshake_open.octm" and "isolated" in text

    def test_real_file_wins(self, tmp_path):
        f = tmp_path / "p.octm"
        f.write_text("return 3")
        assert read_input(str(f))[0] == "return 3"

    def test_examples_are_described(self):
        ex = load_examples()
        assert {"sync.tccs", "rpc.octm", "handshake_open.octm"} <= set(ex)
        assert all(e["description"] for e in ex.values())


class TestRun:
    def test_random_trace_is_json_lines(self, capsys):
        code, out, _ = run(capsys, "run", "rpc", "--seed", "3")
        assert code == EXIT_OK
        first = json.loads(out.splitlines()[0])
        assert {"index", "rule", "label", "thread", "before", "after"} <= set(first)
        assert "heap  @2 = 42" in out

    def test_same_seed_same_output(self, capsys):
        a = run(capsys, "run", "handshake_open", "--seed", "11")[1]
        b = run(capsys, "run", "handshake_open", "--seed", "11")[1]
        assert a == b

    def test_exhaustive_handshake(self, capsys):
        code, out, _ = run(capsys, "run", "examples/handshake.octm", "--mode", "exhaustive")
        assert code == EXIT_OK and "terminal committed" in out

    def test_stuck_is_not_an_error(self, capsys):
        code, out, _ = run(capsys, "run", "handshake_isolated", "--mode", "exhaustive")
        assert code == EXIT_OK and "retry-deadlock" in out

    def test_step_budget(self, capsys):
        assert run(capsys, "run", "rpc", "--max-steps", "3")[0] == EXIT_BUDGET

    def test_fair_scheduler(self, capsys):
        code, out, _ = run(capsys, "run", "mvar_race", "--fair")
        assert code == EXIT_OK

    def test_missing_file(self, capsys):
        code, _, err = run(capsys, "run", "nosuch")
        assert code == EXIT_USAGE and "no such file" in err

    def test_parse_error(self, capsys, tmp_path):
        f = tmp_path / "bad.octm"
        f.write_text("do { x <- ; }")
        assert run(capsys, "run", str(f))[0] == EXIT_USAGE


class TestExplore:
    def test_commit_witness(self, capsys):
        code, out, _ = run(capsys, "explore", "handshake", "--until", "commit")
        assert code == EXIT_OK
        assert json.loads(out.splitlines()[-1])["label"].startswith("co")

    def test_join_witness(self, capsys):
        code, out, _ = run(capsys, "explore", "rpc", "--until", "join")
        assert code == EXIT_OK and "ReadJoin" in out

    def test_unreachable(self, capsys):
        code, out, _ = run(capsys, "explore", "mvar", "--until", "abort")
        assert code == EXIT_FAIL and "no abort step" in out

    def test_json(self, capsys):
        code, out, _ = run(capsys, "--json", "explore", "mvar", "--until", "abort")
        assert json.loads(out) == {"bounded": False, "witness": None}

    def test_env_budget(self, capsys, monkeypatch):
        monkeypatch.setenv("OCTM_MAX_STATES", "5")
        code, out, _ = run(capsys, "explore", "handshake_open")
        assert code == EXIT_BUDGET and "truncated" in out

    def test_flag_budget(self, capsys):
        assert run(capsys, "explore", "handshake_open", "--max-states", "5")[0] == EXIT_BUDGET


class TestTccs:
    def test_type(self, capsys):
        code, out, _ = run(capsys, "tccs", "type", "tsum_join")
        assert code == EXIT_OK and out.strip().endswith(": t")

    def test_ill_typed(self, capsys):
        code, _, err = run(capsys, "tccs", "type", "bad_co")
        assert code == EXIT_FAIL and "co outside transaction" in err

    def test_steps(self, capsys):
        code, out, _ = run(capsys, "tccs", "steps", "sync")
        assert "--tau--> 0 | 0" in out

    def test_reduce(self, capsys):
        code, out, _ = run(capsys, "tccs", "reduce", "tnew")
        assert code == EXIT_OK and "new k0" in out


class TestEncode:
    def test_state_document_round_trips(self, capsys, tmp_path):
        f = tmp_path / "sync.octm-state"
        assert run(capsys, "encode", "sync", "-o", str(f))[0] == EXIT_OK
        s = load_state(str(f))
        assert isinstance(s, MachineState) and len(s.threads) == 2
        code, out, _ = run(capsys, "run", str(f), "--mode", "exhaustive")
        assert code == EXIT_OK and "terminal" in out

    def test_emit_term(self, capsys):
        code, out, _ = run(capsys, "encode", "--emit-term", "sync")
        assert code == EXIT_OK and out.startswith("((newVar M0)")

    def test_json_document(self, capsys):
        code, out, _ = run(capsys, "--json", "encode", "sync")
        assert MachineState.from_dict(json.loads(out)).threads

    def test_ill_typed_is_usage_error(self, capsys):
        assert run(capsys, "encode", "bad_co")[0] == EXIT_USAGE


class TestSimcheck:
    def test_pass(self, capsys):
        code, out, _ = run(capsys, "simcheck", "sync")
        assert code == EXIT_OK and "verdict: pass" in out

    def test_fail(self, capsys):
        code, out, _ = run(capsys, "simcheck", "lone_sender")
        assert code == EXIT_FAIL and "verdict: FAIL" in out

    def test_inconclusive(self, capsys):
        code, _, _ = run(capsys, "simcheck", "sync", "--max-states", "3",
                         "--forward-depth", "1", "--backward-depth", "1")
        assert code == EXIT_BUDGET

    def test_json(self, capsys):
        code, out, _ = run(capsys, "--json", "simcheck", "--strict", "tsync_fusion")
        d = json.loads(out)
        assert code == EXIT_OK and d["ok"] and d["failures"] == []


class TestMisc:
    def test_examples_listing(self, capsys):
        code, out, _ = run(capsys, "examples")
        assert code == EXIT_OK and "mvar_race.octm" in out

    def test_single_example(self, capsys):
        code, out, _ = run(capsys, "examples", "sync")
        assert "a.0 | 'a.0" in out

    @pytest.mark.parametrize("argv", [["bogus"], [], ["run"], ["run", "x", "--mode", "dfs"]])
    def test_usage_errors(self, capsys, argv):
        assert run(capsys, *argv)[0] == EXIT_USAGE
