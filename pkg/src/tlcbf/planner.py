"""Per-transition until-formulae, deadlines and active windows for a run."""
from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

from tlcbf.automaton import AcceptingRun, Dra, self_loop_guard
from tlcbf.exprcore import BOT, TOP, And, LitFormula, Or, formula_text, simplify


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class FormulaSpec:
    """``stay U [](trigger & next_stay)`` for the hop ``source``.

    ``self_loop`` is the self-loop guard of the source state; ``stay`` is the
    left operand actually enforced (``self_loop`` itself, or ``self_loop |
    trigger`` when progress stays are enabled). ``index`` is the hop position
    in the unrolled schedule; ``base`` is the position of the template spec.
    """

    index: int
    stay: LitFormula
    trigger: LitFormula
    next_stay: LitFormula
    source: tuple[str, str]
    window: tuple[float, float] | None = None
    base: int | None = None
    in_suffix: bool = False
    self_loop: LitFormula | None = None

    @property
    def goal(self) -> LitFormula:
        return simplify(And(self.trigger, self.next_stay))

    @property
    def always_form(self) -> bool:
        """True when the formula reads ``[]goal``: the source self-loop is
        ``true`` or the hop is itself a self-loop."""
        loop = self.stay if self.self_loop is None else self.self_loop
        return loop == TOP or self.source[0] == self.source[1]

    def text(self) -> str:
        goal = f"[]({formula_text(self.goal)})"
        if self.always_form:
            return goal
        return f"({formula_text(self.stay)}) U {goal}"


def build_specs(d: Dra, run: AcceptingRun, progress_stay: bool = True) -> list[FormulaSpec]:
    """One spec per hop of the prefix and of one suffix cycle.

    With ``progress_stay`` the left operand is widened to ``self_loop |
    trigger``: every label set it admits either keeps the automaton in place
    or takes the planned hop, so the hop guarantee is unchanged, but the
    state no longer has to leave the self-loop region before the goal holds.
    """
    specs = []
    n_pre = run.n_prefix_hops
    for j, ((q, q_next), trig) in enumerate(zip(run.hops, run.transition_guards)):
        stay = self_loop_guard(d, q)
        if stay == BOT:
            warnings.warn(
                f"state {q} has no self-loop; the goal of hop {q}->{q_next} must already hold "
                "when its window opens",
                stacklevel=2,
            )
        specs.append(
            FormulaSpec(
                index=j,
                stay=simplify(Or(stay, trig)) if progress_stay else stay,
                trigger=trig,
                next_stay=self_loop_guard(d, q_next),
                source=(q, q_next),
                base=j,
                in_suffix=j >= n_pre,
                self_loop=stay,
            )
        )
    return specs


@dataclass(frozen=True)
class TaskPlan:
    run: AcceptingRun
    specs: tuple[FormulaSpec, ...]
    deadlines: tuple[float, ...]
    period: float

    @property
    def n_prefix(self) -> int:
        return self.run.n_prefix_hops

    @property
    def n_suffix(self) -> int:
        return len(self.specs) - self.n_prefix

    @property
    def suffix_start(self) -> float:
        return self.deadlines[-1] if self.deadlines else 0.0

    def instance(self, k: int) -> FormulaSpec:
        """The k-th spec of the unrolled schedule with its window attached."""
        if k < 0:
            raise IndexError(k)
        starts = (0.0,) + self.deadlines
        if k < self.n_prefix:
            return replace(self.specs[k], index=k, window=(starts[k], starts[k + 1]))
        m = k - self.n_prefix
        base = self.specs[self.n_prefix + m % self.n_suffix]
        t0 = self.suffix_start + m * self.period
        return replace(base, index=k, window=(t0, t0 + self.period))

    def index_at(self, t: float) -> int:
        """Schedule index whose window contains t; shared endpoints go to the later spec."""
        if t < 0:
            raise ValueError("time must be nonnegative")
        if t < self.suffix_start:
            return bisect.bisect_right(self.deadlines, t)
        return self.n_prefix + int(math.floor((t - self.suffix_start) / self.period))

    def to_json(self) -> dict:
        n_show = len(self.specs)
        return {
            "run": {
                "prefix": list(self.run.prefix),
                "suffix": list(self.run.suffix),
                "pair_index": self.run.pair_index,
            },
            "deadlines": list(self.deadlines),
            "period": self.period,
            "specs": [
                {
                    "index": s.index,
                    "source": list(s.source),
                    "stay": formula_text(s.stay),
                    "trigger": formula_text(s.trigger),
                    "next_stay": formula_text(s.next_stay),
                    "goal": formula_text(s.goal),
                    "formula": s.text(),
                    "window": list(s.window),
                    "suffix": s.in_suffix,
                }
                for s in (self.instance(k) for k in range(n_show))
            ],
        }


def assign_windows(
    specs: Sequence[FormulaSpec], run: AcceptingRun, deadlines: Sequence[float], period: float | None = None
) -> TaskPlan:
    """Attach prefix deadlines t_1 < ... < t_{J+1} and the suffix period."""
    deadlines = tuple(float(t) for t in deadlines)
    n_pre = run.n_prefix_hops
    if len(deadlines) != n_pre:
        raise PlanError(f"expected {n_pre} deadlines (one per prefix hop), got {len(deadlines)}")
    prev = 0.0
    for i, t in enumerate(deadlines):
        if not t > prev:
            raise PlanError(f"deadlines must be strictly increasing from 0: deadline {i} = {t} <= {prev}")
        prev = t
    if period is None:
        if n_pre == 0:
            raise PlanError("a period is required when the run has no prefix")
        period = deadlines[-1] - (deadlines[-2] if n_pre > 1 else 0.0)
    if not period > 0:
        raise PlanError(f"suffix period must be positive, got {period}")
    return TaskPlan(run, tuple(specs), deadlines, float(period))


def uniform_deadlines(horizon: float, run: AcceptingRun) -> tuple[tuple[float, ...], float]:
    """Evenly spaced prefix deadlines over one pass of prefix plus suffix cycle."""
    n_pre = run.n_prefix_hops
    spacing = horizon / (n_pre + len(run.suffix))
    return tuple(spacing * (i + 1) for i in range(n_pre)), spacing


def active_specs(plan: TaskPlan, t: float, lookahead: int = 1) -> list[FormulaSpec]:
    k = plan.index_at(t)
    return [plan.instance(i) for i in range(k, k + lookahead + 1)]
