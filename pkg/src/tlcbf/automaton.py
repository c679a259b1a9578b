"""Deterministic Rabin automata with literal-formula guards."""
from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from tlcbf.exprcore import (
    ExprSyntaxError,
    BOT,
    LitFormula,
    assignments,
    disj_all,
    formula_text,
    holds_labels,
    parse_formula,
    prop_names,
)

MAX_ENUM_PROPS = 20


class DraSyntaxError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DraValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class EnumerationLimitError(RuntimeError):
    pass


class NoAcceptingRun(RuntimeError):
    pass


class DeterminismError(RuntimeError):
    pass


@dataclass(frozen=True)
class Transition:
    src: str
    dst: str
    guard: LitFormula


@dataclass(frozen=True)
class Violation:
    message: str
    state: str | None = None
    transitions: tuple[Transition, ...] = ()
    assignment: dict = field(default_factory=dict, compare=False, hash=False)

    def __str__(self):
        return self.message


@dataclass(frozen=True)
class Dra:
    states: tuple[str, ...]
    initial: str
    transitions: tuple[Transition, ...]
    rabin_pairs: tuple[tuple[frozenset, frozenset], ...]

    def outgoing(self, q: str) -> list[Transition]:
        return [tr for tr in self.transitions if tr.src == q]

    def guard_between(self, q: str, q2: str) -> LitFormula:
        return disj_all([tr.guard for tr in self.transitions if tr.src == q and tr.dst == q2])

    def successors(self, q: str) -> list[str]:
        seen = []
        for tr in self.transitions:
            if tr.src == q and tr.dst not in seen:
                seen.append(tr.dst)
        return seen

    def to_text(self) -> str:
        lines = [f"states: {' '.join(self.states)}", f"initial: {self.initial}"]
        for tr in self.transitions:
            lines.append(f'trans: {tr.src} {tr.dst} "{formula_text(tr.guard)}"')
        for b, g in self.rabin_pairs:
            lines.append(f"rabin: {{{' '.join(sorted(b))}}} {{{' '.join(sorted(g))}}}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AcceptingRun:
    prefix: tuple[str, ...]
    suffix: tuple[str, ...]
    transition_guards: tuple[LitFormula, ...]
    pair_index: int

    @property
    def hops(self) -> list[tuple[str, str]]:
        """Consecutive state pairs, including the hop that closes the cycle."""
        seq = self.prefix + self.suffix
        out = list(zip(seq, seq[1:]))
        out.append((self.suffix[-1], self.suffix[0]))
        return out

    @property
    def n_prefix_hops(self) -> int:
        return len(self.prefix)

    def __str__(self):
        pre = " ".join(self.prefix)
        suf = " ".join(self.suffix)
        return f"{pre} ({suf})^w".strip()


# ------------------------------------------------------------------- parsing

_STATE = re.compile(r"[A-Za-z0-9_]+$")
_TRANS = re.compile(r'^(\S+)\s+(\S+)\s+"([^"]*)"\s*$')
_RABIN = re.compile(r"^\{([^}]*)\}\s*\{([^}]*)\}\s*$")


def _state_set(text: str, line: int) -> frozenset:
    names = [s for s in re.split(r"[\s,]+", text.strip()) if s]
    for s in names:
        if not _STATE.match(s):
            raise DraSyntaxError(f"bad state name {s!r}", line)
    return frozenset(names)


def parse_dra(text: str, props=None) -> Dra:
    """Parse the line-oriented automaton format and validate the result.

    ``props`` (names or PropositionDef objects) restricts the propositions
    guards may mention.
    """
    known = None
    if props is not None:
        known = {p if isinstance(p, str) else p.name for p in props}
    states: list[str] | None = None
    initial = None
    transitions = []
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise DraSyntaxError(f"expected 'key: value', got {line!r}", lineno)
        key, _, rest = line.partition(":")
        key = key.strip()
        rest = rest.strip()
        if key == "states":
            states = rest.split()
            for s in states:
                if not _STATE.match(s):
                    raise DraSyntaxError(f"bad state name {s!r}", lineno)
            if len(set(states)) != len(states):
                raise DraSyntaxError("duplicate state", lineno)
        elif key == "initial":
            initial = rest
        elif key == "trans":
            m = _TRANS.match(rest)
            if not m:
                raise DraSyntaxError('expected: trans: SRC DST "GUARD"', lineno)
            try:
                guard = parse_formula(m.group(3), known)
            except KeyError as err:
                raise DraSyntaxError(str(err.args[0]), lineno) from err
            except ExprSyntaxError as err:
                raise DraSyntaxError(f"bad guard: {err}", lineno) from err
            transitions.append(Transition(m.group(1), m.group(2), guard))
        elif key == "rabin":
            m = _RABIN.match(rest)
            if not m:
                raise DraSyntaxError("expected: rabin: {B...} {G...}", lineno)
            pairs.append((_state_set(m.group(1), lineno), _state_set(m.group(2), lineno)))
        else:
            raise DraSyntaxError(f"unknown key {key!r}", lineno)
    if states is None:
        raise DraSyntaxError("missing 'states:' line", 0)
    if initial is None:
        raise DraSyntaxError("missing 'initial:' line", 0)
    dra = Dra(tuple(states), initial, tuple(transitions), tuple(pairs))
    violations = validate(dra)
    if violations:
        raise DraValidationError(violations)
    return dra


# ---------------------------------------------------------------- validation


def validate(d: Dra) -> list[Violation]:
    """Structural and determinism checks; an empty list means valid.

    Determinism is decided per state by enumerating truth assignments over
    the propositions mentioned in each pair of outgoing guards that lead to
    different states.
    """
    out: list[Violation] = []
    sset = set(d.states)
    if d.initial not in sset:
        out.append(Violation(f"initial state {d.initial!r} is not declared"))
    for tr in d.transitions:
        for end in (tr.src, tr.dst):
            if end not in sset:
                out.append(Violation(f"transition endpoint {end!r} is not declared", end, (tr,)))
    if not d.rabin_pairs:
        out.append(Violation("at least one Rabin pair is required"))
    for i, (b, g) in enumerate(d.rabin_pairs):
        extra = (b | g) - sset
        if extra:
            out.append(Violation(f"Rabin pair {i} names unknown states {sorted(extra)}"))
    if out:
        return out

    for q in d.states:
        outs = d.outgoing(q)
        mentioned = set()
        for tr in outs:
            mentioned |= prop_names(tr.guard)
        if len(mentioned) > MAX_ENUM_PROPS:
            raise EnumerationLimitError(
                f"state {q!r}: {len(mentioned)} propositions exceed the limit of {MAX_ENUM_PROPS}"
            )
        for i, t1 in enumerate(outs):
            for t2 in outs[i + 1:]:
                if t1.dst == t2.dst:
                    continue
                names = sorted(prop_names(t1.guard) | prop_names(t2.guard))
                for labels, assign in assignments(names):
                    if holds_labels(t1.guard, labels) and holds_labels(t2.guard, labels):
                        shown = ", ".join(f"{k}={'true' if v else 'false'}" for k, v in assign.items())
                        out.append(
                            Violation(
                                f"state {q}: guards {formula_text(t1.guard)!r} -> {t1.dst} and "
                                f"{formula_text(t2.guard)!r} -> {t2.dst} both hold under {{{shown}}}",
                                q,
                                (t1, t2),
                                assign,
                            )
                        )
                        break
    return out


# ------------------------------------------------------------------- queries


def _check_state(d: Dra, q: str):
    if q not in d.states:
        raise KeyError(f"unknown state {q!r}")


def neighbors(d: Dra, q: str) -> set[str]:
    _check_state(d, q)
    return {tr.dst for tr in d.transitions if tr.src == q and tr.dst != q}


def self_loop_guard(d: Dra, q: str) -> LitFormula:
    return d.guard_between(q, q) if any(tr.src == q == tr.dst for tr in d.transitions) else BOT


NO_MOVE = None


def step(d: Dra, q: str, labels: Iterable[str]) -> str | None:
    """Successor of q under ``labels``, or ``NO_MOVE`` when no guard holds."""
    _check_state(d, q)
    labels = frozenset(labels)
    fired = []
    for tr in d.outgoing(q):
        if tr.dst not in fired and holds_labels(tr.guard, labels):
            fired.append(tr.dst)
    if len(fired) > 1:
        raise DeterminismError(f"state {q}: labels {sorted(labels)} enable {fired}")
    return fired[0] if fired else NO_MOVE


# ------------------------------------------------------------- lasso search


def _simple_cycles(d: Dra, allowed: set[str]) -> list[tuple[str, ...]]:
    """Simple cycles inside ``allowed``, each rotated to its least state."""
    order = {s: i for i, s in enumerate(sorted(allowed))}
    succ = {q: [s for s in d.successors(q) if s in allowed] for q in allowed}
    cycles = []
    for start in sorted(allowed):
        k = order[start]
        stack = [(start, [start])]
        while stack:
            node, path = stack.pop()
            for nxt in succ[node]:
                if nxt == start:
                    cycles.append(tuple(path))
                elif order[nxt] > k and nxt not in path:
                    stack.append((nxt, path + [nxt]))
    return cycles


def _simple_paths(d: Dra, src: str, dst: str, avoid: set[str]) -> list[list[str]]:
    """Simple paths src..dst whose nodes other than dst avoid ``avoid``."""
    if src == dst:
        return [[src]]
    if src in avoid:
        return []
    out = []
    stack = [(src, [src])]
    while stack:
        node, path = stack.pop()
        for nxt in d.successors(node):
            if nxt == dst:
                out.append(path + [nxt])
            elif nxt not in avoid and nxt not in path:
                stack.append((nxt, path + [nxt]))
    return out


def find_accepting_runs(d: Dra, limit: int = 10) -> list[AcceptingRun]:
    """Accepting lassos, shortest first, ties broken by state names.

    Each lasso's cycle avoids B and meets Gamma of some Rabin pair; its
    prefix is a simple path from the initial state that touches the cycle
    only where it enters it.
    """
    found: dict[tuple, AcceptingRun] = {}
    for s, (bad, good) in enumerate(d.rabin_pairs):
        allowed = set(d.states) - set(bad)
        for cyc in _simple_cycles(d, allowed):
            if not set(cyc) & set(good):
                continue
            cyc_set = set(cyc)
            for i, entry in enumerate(cyc):
                rotated = cyc[i:] + cyc[:i]
                for path in _simple_paths(d, d.initial, entry, cyc_set):
                    prefix = tuple(path[:-1])
                    key = (prefix, rotated)
                    if key in found:
                        continue
                    seq = prefix + rotated
                    hops = list(zip(seq, seq[1:])) + [(rotated[-1], rotated[0])]
                    guards = tuple(d.guard_between(a, b) for a, b in hops)
                    found[key] = AcceptingRun(prefix, rotated, guards, s)
    if not found:
        raise NoAcceptingRun("no reachable cycle meets an accepting Rabin pair")
    runs = sorted(found.values(), key=lambda r: (len(r.prefix) + len(r.suffix), r.prefix + r.suffix))
    return runs[:limit]


def check_run(d: Dra, run: AcceptingRun) -> list[str]:
    """Problems with ``run`` as a lasso of ``d``; empty when it is accepting."""
    problems = []
    seq = run.prefix + run.suffix
    if not run.suffix:
        return ["empty suffix"]
    if seq[0] != d.initial:
        problems.append(f"run starts at {seq[0]}, not {d.initial}")
    edges = {(tr.src, tr.dst) for tr in d.transitions}
    for a, b in run.hops:
        if (a, b) not in edges:
            problems.append(f"no transition {a} -> {b}")
    bad, good = d.rabin_pairs[run.pair_index]
    if set(run.suffix) & set(bad):
        problems.append("suffix visits B")
    if not set(run.suffix) & set(good):
        problems.append("suffix misses Gamma")
    return problems


def transitions_by_state(d: Dra) -> dict[str, list[Transition]]:
    out = defaultdict(list)
    for tr in d.transitions:
        out[tr.src].append(tr)
    return dict(out)
