"""Barrier constraints, per-spec mode logic and the pointwise control QP."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from tlcbf import kernels as K
from tlcbf.barriers import (
    DEFAULT_LAMBDA,
    Barrier,
    GuardParams,
    check_guard,
    formula_barrier,
    solve_guard,
    softpair,
)
from tlcbf.exprcore import TOP, Const, Truth, Expr, Lit, PropositionDef, evaluate, formula_text, holds, literals
from tlcbf.planner import FormulaSpec, TaskPlan, active_specs
from tlcbf.qp import Infeasible, NotPsd, solve_qp

log = logging.getLogger(__name__)


class SpecViolation(RuntimeError):
    """Neither the stay formula nor the goal holds inside an active window."""

    def __init__(self, t: float, spec_index: int, stay_holds: bool, goal_holds: bool):
        super().__init__(
            f"spec {spec_index} violated at t={t:.6g}: stay={stay_holds}, goal={goal_holds}"
        )
        self.t = t
        self.spec_index = spec_index
        self.stay_holds = stay_holds
        self.goal_holds = goal_holds


# -------------------------------------------------------------------- model


@dataclass
class SystemModel:
    """Control-affine dynamics ``xdot = f(x) + g(x) u``."""

    n: int
    m: int
    f: Sequence[Expr]
    g: Sequence[Sequence[Expr]]
    x0: np.ndarray
    input_box: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if len(self.f) != self.n or len(self.g) != self.n or any(len(r) != self.m for r in self.g):
            raise ValueError(f"dynamics must be {self.n} drift terms and a {self.n}x{self.m} input matrix")
        if self.x0.shape != (self.n,):
            raise ValueError(f"initial state must have length {self.n}")
        for e in list(self.f) + [e for r in self.g for e in r]:
            if e.max_var() > self.n:
                raise ValueError(f"dynamics term uses x{e.max_var()} beyond dimension {self.n}")
            if e.uses_time():
                raise ValueError("dynamics must not depend on t")
        self._f_const = all(isinstance(e, Const) for e in self.f)
        self._g_const = all(isinstance(e, Const) for r in self.g for e in r)
        if self._f_const:
            self._f0 = np.array([e.value for e in self.f])
        if self._g_const:
            self._g0 = np.array([[e.value for e in r] for r in self.g])

    def drift(self, x) -> np.ndarray:
        if self._f_const:
            return self._f0
        return np.array([evaluate(e, x) for e in self.f])

    def input_matrix(self, x) -> np.ndarray:
        if self._g_const:
            return self._g0
        return np.array([[evaluate(e, x) for e in r] for r in self.g])

    def rhs(self, x, u) -> np.ndarray:
        return self.drift(x) + self.input_matrix(x) @ u


@dataclass
class CtrlParams:
    kappa: float = 1.0
    rho: float = 0.8
    gamma_min: float = 1.0
    margin: float = 0.8
    lam: float = DEFAULT_LAMBDA
    sharpness: float = 1.0
    lookahead: int = 1
    P: np.ndarray | None = None
    lookahead_mode: str = "safety"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not self.gamma_min > 0:
            raise ValueError("gamma_min must be positive")
        if not 0.0 < self.margin <= 1.0:
            raise ValueError("margin must lie in (0, 1]")
        if not self.lam > 0 or not self.sharpness > 0:
            raise ValueError("lambda and sharpness must be positive")
        if self.lookahead < 0:
            raise ValueError("lookahead must be nonnegative")
        if self.lookahead_mode not in ("safety", "full"):
            raise ValueError("lookahead_mode must be 'safety' or 'full'")

    def cost(self, m: int) -> np.ndarray:
        return np.eye(m) if self.P is None else np.asarray(self.P, dtype=float)


# --------------------------------------------------------------------- rows


@dataclass
class CbfRow:
    """Affine input constraint ``a @ u + b >= 0``."""

    a: np.ndarray
    b: float
    kind: str
    source: str = ""


def _lie_terms(h: Barrier, model: SystemModel, x, t, cache):
    v, gx, dt = h.evaluate(x, t, cache)
    a = gx @ model.input_matrix(x)
    drift = float(gx @ model.drift(x)) + dt
    return v, a, drift


def zcbf_row(h: Barrier, model: SystemModel, x, t: float, kappa: float = 1.0, cache=None, source="") -> CbfRow:
    v, a, drift = _lie_terms(h, model, x, t, cache)
    return CbfRow(a, drift + kappa * v, "zcbf", source)


def fcbf_row(h: Barrier, model: SystemModel, x, t: float, gamma: float, rho: float, cache=None, source="") -> CbfRow:
    v, a, drift = _lie_terms(h, model, x, t, cache)
    return CbfRow(a, drift + gamma * K.signed_power(v, rho), "fcbf", source)


def tune_gamma(h0: float, window: float, rho: float, margin: float = 0.8, gamma_min: float = 1.0) -> float:
    """Smallest gain whose predicted convergence time is ``margin * window``."""
    if h0 >= 0.0:
        return gamma_min
    if not window > 0:
        raise ValueError("window must be positive")
    return abs(h0) ** (1.0 - rho) / ((1.0 - rho) * margin * window)


def convergence_time(h0: float, gamma: float, rho: float) -> float:
    return abs(h0) ** (1.0 - rho) / (gamma * (1.0 - rho))


# ---------------------------------------------------------------- barriers


@dataclass
class SpecBarriers:
    stay: Barrier | None
    goal: Barrier
    pair: Barrier | None
    guards: dict = field(default_factory=dict)

    def certified_until(self) -> float:
        """Earliest time at which a guard in the goal barrier turns positive."""
        times = [g.zero_time() for g in self.guards.values() if g is not None]
        return min(times, default=math.inf)


@dataclass
class GuardConfig:
    """Per-literal guard overrides; ``None`` entries disable a guard."""

    overrides: Mapping[str, dict | None] = field(default_factory=dict)
    enabled: bool = True
    b: float = 1.0
    margin: float = 0.8


def guarded_literals(spec: FormulaSpec) -> list[Lit]:
    """Literals the hop newly requires: in the trigger but not in the source self-loop."""
    stay = set(literals(spec.stay if spec.self_loop is None else spec.self_loop))
    out = []
    for lit in literals(spec.trigger):
        if lit not in stay and lit not in out:
            out.append(lit)
    return out


def design_guard(
    lit: Lit, spec: FormulaSpec, props: Mapping[str, PropositionDef], x0, cfg: GuardConfig
) -> tuple[GuardParams | None, list]:
    """Guard for ``lit`` in ``spec`` and the feasibility violations it has."""
    key = formula_text(lit)
    z0 = evaluate(props[lit.name].zfun, x0)
    if not lit.positive:
        z0 = -z0
    sat = z0 >= 0.0
    t_d = spec.window[1]
    ov = cfg.overrides.get(key, {}) if key in cfg.overrides else {}
    if key in cfg.overrides and cfg.overrides[key] is None:
        return None, []
    ov = dict(ov or {})
    t_d = float(ov.get("certify_until", t_d))
    if all(k in ov for k in ("E", "b", "c", "eps")):
        g = GuardParams(float(ov["E"]), float(ov["b"]), float(ov["c"]), float(ov["eps"]), t_d)
    else:
        g = solve_guard(z0, sat, t_d, b=float(ov.get("b", cfg.b)), c=ov.get("c"), margin=float(ov.get("margin", cfg.margin)))
    return g, check_guard(g, z0, sat)


def build_spec_barriers(
    spec: FormulaSpec,
    props: Mapping[str, PropositionDef],
    x0,
    params: CtrlParams,
    guard_cfg: GuardConfig | None = None,
) -> tuple[SpecBarriers, list]:
    guard_cfg = guard_cfg or GuardConfig()
    zfuns = {name: p.zfun for name, p in props.items()}
    guards: dict[Lit, GuardParams | None] = {}
    issues = []
    if guard_cfg.enabled:
        for lit in guarded_literals(spec):
            g, viol = design_guard(lit, spec, props, x0, guard_cfg)
            guards[lit] = g
            for v in viol:
                issues.append({"spec": spec.index, "literal": formula_text(lit), "violation": v.constraint, "residual": v.residual})
    goal = formula_barrier(spec.goal, zfuns, guards, params.lam, params.sharpness)
    if spec.always_form:
        return SpecBarriers(None, goal, None, guards), issues
    if isinstance(spec.stay, Truth):
        return SpecBarriers(None, goal, None, guards), issues
    stay = formula_barrier(spec.stay, zfuns, {}, params.lam, params.sharpness)
    return SpecBarriers(stay, goal, softpair(stay, goal, params.lam), guards), issues



def spec_constraints(
    spec: FormulaSpec,
    barriers: SpecBarriers,
    model: SystemModel,
    x,
    t: float,
    params: CtrlParams,
    props,
    gamma: float,
    started: bool = True,
    cache=None,
) -> tuple[list[CbfRow], str]:
    """Rows for one spec and the mode that produced them.

    Modes: ``goal`` (goal formula holds), ``stay`` (only the stay formula
    holds), ``always`` (``[]goal`` specs), ``skip`` (lookahead spec with
    neither formula holding).
    """
    src = f"spec{spec.index}"
    goal_ok = holds(spec.goal, x, props)
    if spec.always_form:
        if goal_ok:
            return [zcbf_row(barriers.goal, model, x, t, params.kappa, cache, src + ":goal")], "always"
        if started:
            raise SpecViolation(t, spec.index, True, False)
        return [], "skip"
    stay_ok = spec.stay == TOP or (barriers.stay is not None and holds(spec.stay, x, props))
    if not started and params.lookahead_mode == "safety":
        if goal_ok:
            return [fcbf_row(barriers.goal, model, x, t, gamma, params.rho, cache, src + ":goal")], "goal"
        if stay_ok:
            if barriers.pair is None:
                return [], "stay-safe"
            return [zcbf_row(barriers.pair, model, x, t, params.kappa, cache, src + ":pair")], "stay-safe"
        log.warning("lookahead spec %d: neither stay nor goal holds at t=%.4g; skipped", spec.index, t)
        return [], "skip"
    if goal_ok:
        return [fcbf_row(barriers.goal, model, x, t, gamma, params.rho, cache, src + ":goal")], "goal"
    if stay_ok:
        rows = [fcbf_row(barriers.goal, model, x, t, gamma, params.rho, cache, src + ":goal")]
        if barriers.pair is not None:
            rows.insert(0, zcbf_row(barriers.pair, model, x, t, params.kappa, cache, src + ":pair"))
        return rows, "stay"
    if started:
        raise SpecViolation(t, spec.index, stay_ok, goal_ok)
    log.warning("lookahead spec %d: neither stay nor goal holds at t=%.4g; skipped", spec.index, t)
    return [], "skip"


def baseline_constraints(
    spec: FormulaSpec, barriers: SpecBarriers, model: SystemModel, x, t: float, params: CtrlParams, gamma: float, cache=None
) -> tuple[list[CbfRow], str]:
    """One barrier per task with no mode switching: invariance for ``[]``
    specs, finite-time reachability of the goal otherwise."""
    src = f"spec{spec.index}"
    if spec.always_form:
        return [zcbf_row(barriers.goal, model, x, t, params.kappa, cache, src + ":goal")], "baseline-safe"
    return [fcbf_row(barriers.goal, model, x, t, gamma, params.rho, cache, src + ":goal")], "baseline-reach"


# --------------------------------------------------------------- controller


@dataclass
class StepResult:
    u: np.ndarray
    diagnostics: dict


class Controller:
    """Pointwise QP controller for a task plan.

    Holds the per-spec barriers and the FCBF gains chosen when each spec
    first becomes binding; everything else is recomputed at every call.
    """

    def __init__(
        self,
        plan: TaskPlan | None,
        model: SystemModel,
        props: Sequence[PropositionDef] | Mapping[str, PropositionDef],
        params: CtrlParams | None = None,
        guard_cfg: GuardConfig | None = None,
        simultaneous: bool = False,
    ):
        self.plan = plan
        self.model = model
        self.props = props if isinstance(props, Mapping) else {p.name: p for p in props}
        self.params = params or CtrlParams()
        self.guard_cfg = guard_cfg or GuardConfig()
        self.simultaneous = simultaneous
        self.P = self.params.cost(model.m)
        self._barriers: dict[int, SpecBarriers] = {}
        self.guard_issues: list = []
        self.gammas: dict[int, float] = {}
        self.h_start: dict[int, float] = {}

    def barriers(self, k: int) -> SpecBarriers:
        if k not in self._barriers:
            spec = self.plan.instance(k)
            sb, issues = build_spec_barriers(spec, self.props, self.model.x0, self.params, self.guard_cfg)
            self._barriers[k] = sb
            self.guard_issues.extend(issues)
        return self._barriers[k]

    def specs_at(self, t: float) -> list[FormulaSpec]:
        if self.plan is None:
            return []
        if self.simultaneous:
            n_all = self.plan.n_prefix + self.plan.n_suffix
            return [self.plan.instance(k) for k in range(n_all)]
        return active_specs(self.plan, t, self.params.lookahead)

    def _gamma(self, spec: FormulaSpec, sb: SpecBarriers, x, t, started: bool, cache) -> float:
        k = spec.index
        if k in self.gammas:
            return self.gammas[k]
        if not started and not self.simultaneous:
            return self.params.gamma_min
        h0 = sb.goal.evaluate(x, t, cache)[0]
        end = spec.window[1]
        cert = sb.certified_until()
        if t < cert < end:
            end = cert
        g = tune_gamma(h0, end - t, self.params.rho, self.params.margin, self.params.gamma_min)
        self.gammas[k] = g
        self.h_start[k] = h0
        return g

    def step(self, x, t: float) -> StepResult:
        x = np.asarray(x, dtype=float)
        cache: dict = {}
        rows: list[CbfRow] = []
        spec_diag = []
        for spec in self.specs_at(t):
            sb = self.barriers(spec.index)
            started = spec.window[0] <= t or self.simultaneous
            gamma = self._gamma(spec, sb, x, t, started, cache)
            if self.simultaneous:
                new_rows, mode = baseline_constraints(spec, sb, self.model, x, t, self.params, gamma, cache)
            else:
                new_rows, mode = spec_constraints(
                    spec, sb, self.model, x, t, self.params, self.props, gamma, started, cache
                )
            rows.extend(new_rows)
            entry = {
                "index": spec.index,
                "mode": mode,
                "gamma": gamma,
                "h_goal": sb.goal.evaluate(x, t, cache)[0],
            }
            if sb.pair is not None:
                entry["h_stay"] = sb.stay.evaluate(x, t, cache)[0]
                entry["h_pair"] = sb.pair.evaluate(x, t, cache)[0]
            spec_diag.append(entry)
        A = np.array([r.a for r in rows]).reshape(len(rows), self.model.m)
        b = np.array([r.b for r in rows])
        try:
            res = solve_qp(self.P, A, b, self.model.input_box)
        except Infeasible as err:
            err.t = t
            err.rows = rows
            raise
        diag = {
            "t": t,
            "specs": spec_diag,
            "rows": [(r.source, r.kind) for r in rows],
            "active": [rows[i].source for i in res.active],
            "kkt": res.kkt,
        }
        return StepResult(res.u, diag)


def control_step(controller: Controller, x, t: float) -> tuple[np.ndarray, dict]:
    res = controller.step(x, t)
    return res.u, res.diagnostics


__all__ = [
    "CbfRow",
    "Controller",
    "CtrlParams",
    "GuardConfig",
    "Infeasible",
    "NotPsd",
    "SpecBarriers",
    "SpecViolation",
    "SystemModel",
    "baseline_constraints",
    "build_spec_barriers",
    "control_step",
    "convergence_time",
    "fcbf_row",
    "guarded_literals",
    "spec_constraints",
    "tune_gamma",
    "zcbf_row",
]
