"""Command-line entry point.

Exit codes: 0 success or pass, 1 verdict fail, 2 usage or parse error,
3 search budget exhausted before a verdict.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from octm.adequacy import SimConfig, check
from octm.encoder import EncodeError, emit_term, eta
from octm.explorer import ExploreConfig, Trace, Unreachable, explore, reachable, run_random
from octm.parser import ParseError, parse_program
from octm.printer import show
from octm.state import CommitTx, MachineState, initial_state
from octm.tccsm import (
    TccsParseError, TccsTypeError, check_well_formed, lts_steps, parse_tccs,
    show_proc, tccs_reduce, typecheck,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

ALIASES = {"handshake": "handshake_open"}


class UsageError(Exception):
    pass


# -- corpus ----------------------------------------------------------------------

def _corpus_dir():
    return resources.files("octm") / "corpus"


def _describe(text: str) -> str:
    lines = []
    for line in text.splitlines():
        if not line.startswith("--"):
            break
        lines.append(line[2:].strip())
    return " ".join(lines)


def load_examples() -> dict[str, dict]:
    """Bundled programs and processes, keyed by file name."""
    out = {}
    for entry in sorted(_corpus_dir().iterdir(), key=lambda e: e.name):
        if not entry.name.endswith((".octm", ".tccs")):
            continue
        text = entry.read_text()
        out[entry.name] = {"name": entry.name, "kind": entry.name.rsplit(".", 1)[1],
                           "description": _describe(text), "source": text}
    return out


def read_input(name: str) -> tuple[str, str]:
    """Contents and file name of ``name``: a path, or a bundled example.

    A bundled example may be named with or without extension and with any
    directory prefix (``examples/handshake.octm`` finds the handshake).
    """
    path = Path(name)
    if path.is_file():
        return path.read_text(), path.name
    examples = load_examples()
    stem, dot, ext = path.name.partition(".")
    stem = ALIASES.get(stem, stem)
    for cand in ([f"{stem}.{ext}"] if dot else [f"{stem}.octm", f"{stem}.tccs"]):
        if cand in examples:
            return examples[cand]["source"], cand
    raise UsageError(f"no such file or bundled example: {name}")


def load_state(name: str) -> MachineState:
    text, fname = read_input(name)
    if fname.endswith(".octm-state"):
        try:
            return MachineState.from_dict(json.loads(text))
        except (ValueError, KeyError, TypeError) as e:
            raise UsageError(f"{fname}: bad state document: {e}") from e
    if fname.endswith(".tccs"):
        return eta(_load_proc(text))
    return initial_state(parse_program(text))


def _load_proc(text: str):
    p = parse_tccs(text)
    check_well_formed(p)
    return p


# -- output helpers -----------------------------------------------------------------

def _emit(args, data: dict, lines: list[str]):
    if args.json:
        print(json.dumps(data, sort_keys=True))
    else:
        for line in lines:
            print(line)


def listing(s: MachineState) -> list[str]:
    out = []
    for r, m in sorted(s.heap.items()):
        tag = " (co)" if r in s.co_locs else ""
        out.append(f"heap  @{r}{tag} = {show(m)}")
    for r, (m, k) in sorted(s.working.items()):
        out.append(f"claim @{r} by tx {k} = {show(m)}")
    for tid in sorted(s.threads):
        th = s.threads[tid]
        kind = type(th).__name__.lower()
        where = "" if th.tx is None else f" in tx {th.tx}"
        out.append(f"thread {tid} {kind}{where}: {show(th.term)}")
    return out


def _heap_text(s: MachineState) -> str:
    return ", ".join(f"@{r}={show(m)}" for r, m in sorted(s.heap.items()))


def _committed(records) -> bool:
    return any(r.label.startswith("co ") for r in records)


# -- commands -----------------------------------------------------------------------

def _explore_config(args, mode: str) -> ExploreConfig:
    kw = {"mode": mode, "seed": args.seed, "max_steps": args.max_steps,
          "fairness": getattr(args, "fair", False)}
    if args.max_states is not None:
        kw["max_states"] = args.max_states
    return ExploreConfig(**kw)


def _print_classes(args, result) -> int:
    classes = sorted(result.classes(), key=lambda c: (c.kind, c.key))
    data = result.summary()
    for d, c in zip(data["classes"], classes):
        d["committed"] = _committed(c.trace)
        d["heap"] = {str(r): show(m) for r, m in sorted(c.state.heap.items())}
        d["trace"] = [json.loads(r.to_json()) for r in c.trace]
    lines = [f"{len(classes)} outcome class(es), {result.visited} states, "
             f"{result.edges} edges" + (" (truncated)" if result.truncated else "")]
    for c in classes:
        flag = " committed" if _committed(c.trace) else ""
        diag = f" [{c.diagnostic}]" if c.diagnostic else ""
        lines.append(f"{c.kind}{flag}{diag} {c.key[:12]} after {len(c.trace)} steps: "
                     f"{_heap_text(c.state)}")
    _emit(args, data, lines)
    return EXIT_BUDGET if result.truncated else EXIT_OK


def cmd_run(args) -> int:
    state = load_state(args.file)
    if args.mode == "exhaustive":
        return _print_classes(args, explore(state, _explore_config(args, "exhaustive")))
    trace = run_random(state, _explore_config(args, "random"))
    data = {"status": trace.status, "diagnostic": trace.diagnostic,
            "restarts": trace.restarts, "trace": [json.loads(x) for x in trace.lines()],
            "final": trace.final.to_dict()}
    lines = trace.lines() + [f"status: {trace.status}"
                             + (f" ({trace.diagnostic})" if trace.diagnostic else "")]
    lines += listing(trace.final)
    _emit(args, data, lines)
    return EXIT_BUDGET if trace.status == "budget" else EXIT_OK


PREDICATES = {
    "commit": lambda s, st: st is not None and isinstance(st.label, CommitTx),
    "abort": lambda s, st: st is not None and st.rule == "AbortTx",
    "merge": lambda s, st: st is not None and bool({"ReadMerge", "WriteMerge"} & set(st.subrules)),
    "join": lambda s, st: st is not None and bool({"ReadJoin", "WriteJoin"} & set(st.subrules)),
}


def cmd_explore(args) -> int:
    state = load_state(args.file)
    config = _explore_config(args, "exhaustive")
    if args.until is None:
        return _print_classes(args, explore(state, config))
    res = reachable(state, PREDICATES[args.until], config)
    if isinstance(res, Unreachable):
        data = {"witness": None, "bounded": res.bounded}
        _emit(args, data, [f"no {args.until} step is reachable"
                           + (" within bounds" if res.bounded else "")])
        return EXIT_BUDGET if res.bounded else EXIT_FAIL
    assert isinstance(res, Trace)
    data = {"witness": [json.loads(x) for x in res.lines()]}
    _emit(args, data, res.lines())
    return EXIT_OK


def cmd_tccs(args) -> int:
    text, _ = read_input(args.file)
    p = parse_tccs(text)
    if args.action == "type":
        ty = typecheck(p)
        check_well_formed(p)
        _emit(args, {"process": show_proc(p), "type": ty, "well_formed": True},
              [f"{show_proc(p)} : {ty}"])
        return EXIT_OK
    if args.action == "steps":
        steps = lts_steps(p)
        data = {"process": show_proc(p),
                "steps": [{"label": str(lab), "target": show_proc(q)} for lab, q in steps]}
        _emit(args, data, [f"--{lab}--> {show_proc(q)}" for lab, q in steps])
        return EXIT_OK
    check_well_formed(p)
    reds = tccs_reduce(p)
    data = {"process": show_proc(p),
            "reductions": [{"kind": k, "label": str(lab), "target": show_proc(q)}
                           for k, lab, q in reds]}
    _emit(args, data, [f"{k}: --{lab}--> {show_proc(q)}" for k, lab, q in reds])
    return EXIT_OK


def cmd_encode(args) -> int:
    text, _ = read_input(args.file)
    p = _load_proc(text)
    if args.emit_term:
        term = emit_term(p)
        _emit(args, {"term": show(term)}, [show(term)])
        return EXIT_OK
    s = eta(p)
    doc = s.serialize()
    if args.output:
        Path(args.output).write_text(doc + "\n")
    if args.json:
        print(doc)
    else:
        for line in listing(s):
            print(line)
    return EXIT_OK


def cmd_simcheck(args) -> int:
    text, _ = read_input(args.file)
    p = _load_proc(text)
    config = SimConfig(forward_depth=args.forward_depth, backward_depth=args.backward_depth)
    if args.max_states is not None:
        config.max_states = args.max_states
    v = check(p, config, strict=args.strict)
    lines = [f"process: {v.process}",
             f"forward: {'pass' if v.forward_ok else 'FAIL'} "
             f"({v.forward_checked} reductions, {v.processes} processes)",
             f"backward: {'pass' if v.backward_ok else 'FAIL'} "
             f"({v.machine_states} machine states)"]
    for f in v.failures:
        lines.append(f"  {f.direction} failure at {f.process}: {f.reduction} {f.detail}")
        lines.extend(f"    {step}" for step in f.trace)
    lines.append("verdict: " + ("pass" if v.ok else
                                "inconclusive" if v.bounded else "FAIL"))
    _emit(args, v.to_dict(), lines)
    if v.ok:
        return EXIT_OK
    return EXIT_BUDGET if v.bounded else EXIT_FAIL


def cmd_examples(args) -> int:
    examples = load_examples()
    if args.name:
        _, fname = read_input(args.name)
        entry = examples[fname]
        _emit(args, entry, [entry["source"].rstrip("\n")])
        return EXIT_OK
    data = {"examples": [{k: e[k] for k in ("name", "kind", "description")}
                         for e in examples.values()]}
    _emit(args, data, [f"{e['name']:24} {e['description']}" for e in examples.values()])
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="octm", description="Open transactional memory toolkit")
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    sub = ap.add_subparsers(dest="command", required=True)

    def budget(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-steps", type=int, default=400)
        p.add_argument("--max-states", type=int, default=None,
                       help="state bound (default: $OCTM_MAX_STATES or 200000)")

    p = sub.add_parser("run", help="run a program (.octm, .octm-state or .tccs)")
    p.add_argument("file")
    p.add_argument("--mode", choices=("random", "exhaustive"), default="random")
    p.add_argument("--fair", action="store_true", help="round-robin scheduling")
    budget(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("explore", help="exhaustive exploration or witness search")
    p.add_argument("file")
    p.add_argument("--until", choices=sorted(PREDICATES),
                   help="stop at the first step of this kind and print its trace")
    budget(p)
    p.set_defaults(fn=cmd_explore)

    p = sub.add_parser("tccs", help="typecheck or step a process")
    p.add_argument("action", choices=("type", "steps", "reduce"))
    p.add_argument("file")
    p.set_defaults(fn=cmd_tccs)

    p = sub.add_parser("encode", help="encode a process as a machine state")
    p.add_argument("file")
    p.add_argument("-o", "--output", help="write the .octm-state document here")
    p.add_argument("--emit-term", action="store_true",
                   help="emit one self-setup program instead of a state")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("simcheck", help="bounded adequacy check of the encoding")
    p.add_argument("file")
    p.add_argument("--forward-depth", type=int, default=400)
    p.add_argument("--backward-depth", type=int, default=40)
    p.add_argument("--max-states", type=int, default=None)
    p.add_argument("--strict", action="store_true",
                   help="check every reachable machine state, not only single steps")
    p.set_defaults(fn=cmd_simcheck)

    p = sub.add_parser("examples", help="list or print the bundled examples")
    p.add_argument("name", nargs="?")
    p.set_defaults(fn=cmd_examples)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.fn(args)
    except TccsTypeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL if args.command == "tccs" else EXIT_USAGE
    except (UsageError, ParseError, TccsParseError, EncodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
