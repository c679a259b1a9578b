import numpy as np
import pytest

from tlcbf.barriers import Atomic
from tlcbf.cli import build_plan, make_controller
from tlcbf.exprcore import Const, Lit, PropositionDef, formula_text, parse_expr
from tlcbf.qpctrl import (
    CtrlParams,
    SpecViolation,
    SystemModel,
    build_spec_barriers,
    convergence_time,
    fcbf_row,
    guarded_literals,
    spec_constraints,
    tune_gamma,
    zcbf_row,
)
from tlcbf.scenario import load_scenario, shipped_scenario


@pytest.fixture(scope="module")
def scenario():
    return load_scenario(shipped_scenario())


@pytest.fixture(scope="module")
def plan(scenario):
    return build_plan(scenario)


def scalar_model(x0=-1.0):
    return SystemModel(1, 1, [Const(0.0)], [[Const(1.0)]], np.array([x0]))


def test_tune_gamma():
    assert tune_gamma(-1.0, 2.0, 0.5, margin=1.0) == pytest.approx(1.0)
    assert convergence_time(-1.0, 1.0, 0.5) == pytest.approx(2.0)
    g = tune_gamma(-0.7, 3.0, 0.8, margin=0.8)
    assert convergence_time(-0.7, g, 0.8) == pytest.approx(0.8 * 3.0)
    assert tune_gamma(0.3, 2.0, 0.5, gamma_min=1.5) == 1.5


def test_params_validation():
    with pytest.raises(ValueError):
        CtrlParams(rho=1.0)
    with pytest.raises(ValueError):
        CtrlParams(kappa=0.0)


def test_rows_for_scalar_barrier():
    model = scalar_model()
    h = Atomic(Lit("P"), parse_expr("x1", 1))
    z = zcbf_row(h, model, np.array([-1.0]), 0.0, kappa=2.0)
    assert z.a[0] == 1.0 and z.b == pytest.approx(-2.0)
    f = fcbf_row(h, model, np.array([-4.0]), 0.0, gamma=1.5, rho=0.5)
    assert f.b == pytest.approx(-1.5 * 2.0)
    f0 = fcbf_row(h, model, np.array([0.0]), 0.0, gamma=1.5, rho=0.0)
    assert f0.b == 0.0


def test_guard_policy(plan):
    s0, s1 = plan.instance(0), plan.instance(1)
    assert [formula_text(l) for l in guarded_literals(s0)] == ["B"]
    assert [formula_text(l) for l in guarded_literals(s1)] == ["A"]


def test_modes_at_initial_state(scenario, plan):
    x0 = scenario.model.x0
    spec = plan.instance(0)
    sb, issues = build_spec_barriers(spec, scenario.props, x0, scenario.params, scenario.guards)
    assert issues == []
    rows, mode = spec_constraints(spec, sb, scenario.model, x0, 0.0, scenario.params, scenario.props, 1.0)
    assert mode == "stay" and [r.kind for r in rows] == ["zcbf", "fcbf"]
    # robot 2 inside B, robot 1 unchanged: the goal holds
    x_in = np.array([-0.1, 0.0, 0.4, -0.5])
    rows, mode = spec_constraints(spec, sb, scenario.model, x_in, 1.0, scenario.params, scenario.props, 1.0)
    assert mode == "goal" and [r.kind for r in rows] == ["fcbf"]


def test_spec_violation_inside_obstacle(scenario, plan):
    spec = plan.instance(0)
    sb, _ = build_spec_barriers(spec, scenario.props, scenario.model.x0, scenario.params, scenario.guards)
    x_bad = np.array([0.22, -0.05, 0.22, -0.05])
    with pytest.raises(SpecViolation) as err:
        spec_constraints(spec, sb, scenario.model, x_bad, 0.5, scenario.params, scenario.props, 1.0)
    assert err.value.spec_index == 0
    assert not err.value.stay_holds and not err.value.goal_holds


def test_case_study_guard_issue_recorded(scenario, plan):
    _, issues = build_spec_barriers(plan.instance(1), scenario.props, scenario.model.x0, scenario.params, scenario.guards)
    assert len(issues) == 1
    assert issues[0]["literal"] == "A" and issues[0]["violation"] == "deadline"
    assert issues[0]["residual"] == pytest.approx(0.0707, abs=1e-4)


def test_first_step_moves_robot_two_toward_b(scenario, plan):
    ctrl = make_controller(scenario, plan)
    res = ctrl.step(scenario.model.x0, 0.0)
    u = res.u
    assert np.all(np.isfinite(u))
    assert u[2] > 0 and u[3] < 0
    assert max(res.diagnostics["kkt"].values()) < 1e-8
    modes = {s["index"]: s["mode"] for s in res.diagnostics["specs"]}
    assert modes == {0: "stay", 1: "stay-safe"}


def test_controller_without_specs_applies_zero_input():
    from tlcbf.qpctrl import Controller

    model = scalar_model(0.5)
    ctrl = Controller(None, model, [PropositionDef("P", parse_expr("x1", 1))])
    assert np.allclose(ctrl.step(np.array([0.5]), 0.0).u, 0.0)


def test_baseline_mode_rows(scenario, plan):
    ctrl = make_controller(scenario, plan, guards=False, simultaneous=True)
    res = ctrl.step(scenario.model.x0, 0.0)
    kinds = [(s["index"], s["mode"]) for s in res.diagnostics["specs"]]
    assert kinds == [(0, "baseline-reach"), (1, "baseline-reach"), (2, "baseline-safe")]
    assert ctrl.barriers(0).guards == {}
