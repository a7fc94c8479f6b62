"""Helpers shared by the test modules."""
from collections import deque
from importlib import resources

from octm.parser import parse_program
from octm.semantics import enabled_steps
from octm.state import canonical_key, initial_state


def corpus_text(name: str) -> str:
    return (resources.files("octm") / "corpus" / name).read_text()


def program_state(src: str):
    return initial_state(parse_program(src))


def corpus_state(name: str):
    return program_state(corpus_text(name))


def all_edges(state, limit=50_000):
    """Every (source, step) pair of the reachable graph, up to renaming."""
    seen = {canonical_key(state)}
    queue = deque([state])
    while queue:
        cur = queue.popleft()
        for step in enabled_steps(cur):
            yield cur, step
            key = canonical_key(step.target)
            if key not in seen and len(seen) < limit:
                seen.add(key)
                queue.append(step.target)


def rules_of(src: str) -> set:
    out = set()
    for _, step in all_edges(program_state(src)):
        out.update(step.subrules)
    return out
