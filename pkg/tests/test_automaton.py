import itertools
import os
import random

import pytest

from tlcbf.automaton import (
    NO_MOVE,
    Dra,
    DraSyntaxError,
    DraValidationError,
    NoAcceptingRun,
    Transition,
    check_run,
    find_accepting_runs,
    neighbors,
    parse_dra,
    self_loop_guard,
    step,
    validate,
)
from tlcbf.exprcore import BOT, Lit, And, formula_text, parse_formula

HERE = os.path.dirname(__file__)
DRA_PATH = os.path.join(HERE, "..", "src", "tlcbf", "scenarios", "tworobot.dra")


@pytest.fixture(scope="module")
def tworobot():
    with open(DRA_PATH) as fh:
        return parse_dra(fh.read(), ["A", "B", "O", "C"])


def test_case_study_automaton(tworobot):
    assert tworobot.states == ("q0", "q1", "q2", "q3")
    assert tworobot.rabin_pairs == ((frozenset(), frozenset({"q3"})),)
    assert validate(tworobot) == []
    assert neighbors(tworobot, "q0") == {"q1", "q2", "q3"}
    assert formula_text(self_loop_guard(tworobot, "q0")) == "!A & !B & !O & C"


def test_case_study_runs(tworobot):
    runs = [str(r) for r in find_accepting_runs(tworobot)]
    assert runs[:3] == ["q0 (q3)^w", "q0 q1 (q3)^w", "q0 q2 (q3)^w"]
    for r in find_accepting_runs(tworobot):
        assert check_run(tworobot, r) == []


def test_step(tworobot):
    assert step(tworobot, "q0", {"B", "C"}) == "q1"
    assert step(tworobot, "q0", {"C"}) == "q0"
    assert step(tworobot, "q0", {"O", "C"}) is NO_MOVE
    assert step(tworobot, "q3", {"A", "C"}) == "q3"


def test_round_trip(tworobot):
    again = parse_dra(tworobot.to_text())
    assert again == tworobot


def test_trivial_single_state():
    d = parse_dra('states: q0\ninitial: q0\ntrans: q0 q0 "P | !P"\nrabin: {} {q0}\n')
    assert [str(r) for r in find_accepting_runs(d)] == ["(q0)^w"]


@pytest.mark.parametrize(
    "text, line",
    [
        ("initial: q0\n", 0),
        ("states: q0\ninitial: q0\ntrans: q0 q0 P\n", 3),
        ("states: q0\ninitial: q0\nbogus: 1\n", 3),
        ('states: q0\ninitial: q0\ntrans: q0 q0 "P &"\n', 3),
    ],
)
def test_syntax_errors(text, line):
    with pytest.raises(DraSyntaxError) as err:
        parse_dra(text)
    assert err.value.line == line


def test_nondeterminism_reported_with_witness():
    text = 'states: a b c\ninitial: a\ntrans: a b "P"\ntrans: a c "P & Q"\nrabin: {} {b}\n'
    with pytest.raises(DraValidationError) as err:
        parse_dra(text)
    viol = err.value.violations
    assert any(v.assignment.get("P") for v in viol)


def test_unknown_state_and_proposition():
    with pytest.raises(DraValidationError):
        parse_dra('states: a\ninitial: z\ntrans: a a "P"\nrabin: {} {a}\n')
    with pytest.raises(DraSyntaxError):
        parse_dra('states: a\ninitial: a\ntrans: a a "Q"\nrabin: {} {a}\n', ["P"])


def test_no_accepting_run():
    d = parse_dra('states: a b\ninitial: a\ntrans: a b "P"\ntrans: b b "P"\nrabin: {b} {b}\n')
    with pytest.raises(NoAcceptingRun):
        find_accepting_runs(d)


def test_state_without_self_loop():
    d = parse_dra('states: a b\ninitial: a\ntrans: a b "P"\ntrans: b b "P"\nrabin: {} {b}\n')
    assert self_loop_guard(d, "a") == BOT


# ------------------------------------------------------------ lasso oracle

PROPS = ["P", "Q"]
CUBES = [
    And(Lit("P", p), Lit("Q", q)) for p, q in itertools.product((True, False), repeat=2)
]


def random_dra(rng: random.Random, n_states: int) -> Dra:
    """Deterministic by construction: each full cube goes to at most one state."""
    states = tuple(f"s{i}" for i in range(n_states))
    trans = []
    for q in states:
        for cube in CUBES:
            if rng.random() < 0.55:
                trans.append(Transition(q, rng.choice(states), cube))
    pairs = []
    for _ in range(rng.randint(1, 2)):
        bad = frozenset(s for s in states if rng.random() < 0.2)
        good = frozenset(s for s in states if rng.random() < 0.25)
        pairs.append((bad, good))
    return Dra(states, states[0], tuple(trans), tuple(pairs))


def brute_force_lasso(d: Dra, max_len: int = 16) -> bool:
    """Enumerate walks from the initial state; accept when a walk closes a
    cycle that avoids B and meets Gamma of some pair."""
    succ = {q: sorted({t.dst for t in d.transitions if t.src == q}) for q in d.states}

    def closes(walk):
        last = walk[-1]
        for i, s in enumerate(walk[:-1]):
            if s == last:
                cyc = set(walk[i:])
                for bad, good in d.rabin_pairs:
                    if not cyc & bad and cyc & good:
                        return True
        return False

    stack = [(d.initial,)]
    seen = set()
    while stack:
        walk = stack.pop()
        if closes(walk):
            return True
        if len(walk) >= max_len:
            continue
        # walks with identical (visited set, tail) continue identically
        key = (frozenset(walk), walk[-1], len(walk) > 1 and walk[-1] in walk[:-1])
        if key in seen and len(walk) > 1:
            continue
        seen.add(key)
        for nxt in succ[walk[-1]]:
            stack.append(walk + (nxt,))
    return False


def test_lasso_search_agrees_with_brute_force():
    rng = random.Random(1234)
    found = 0
    for _ in range(50):
        d = random_dra(rng, rng.randint(2, 8))
        assert validate(d) == []
        expected = brute_force_lasso(d)
        try:
            runs = find_accepting_runs(d)
        except NoAcceptingRun:
            runs = []
        assert bool(runs) == expected
        for r in runs:
            assert check_run(d, r) == []
            assert len(r.prefix) + len(r.suffix) <= 16
        found += bool(runs)
    assert 5 < found < 50


def test_runs_sorted_shortest_first():
    rng = random.Random(7)
    for _ in range(20):
        d = random_dra(rng, 6)
        try:
            runs = find_accepting_runs(d)
        except NoAcceptingRun:
            continue
        lengths = [len(r.prefix) + len(r.suffix) for r in runs]
        assert lengths == sorted(lengths)
