import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlcbf import kernels as K
from tlcbf.barriers import (
    Atomic,
    BarrierError,
    GuardParams,
    InfeasibleGuard,
    check_guard,
    compose_conj,
    compose_disj,
    formula_barrier,
    softpair,
    solve_guard,
)
from tlcbf.exprcore import TOP, Lit, parse_expr, parse_formula

ZA = parse_expr("0.2 - norm2(x1 - 0.6, x2 - 0.3)", 4)
ZB = parse_expr("0.2 - norm2(x3 - 0.4, x4 + 0.5)", 4)
ZO = parse_expr("0.18 - norm2(x1 - 0.22, x2 + 0.05, x3 - 0.22, x4 + 0.05)", 4)
ZC = parse_expr("sqrt(x3 + 0.41) - norm2(x1 - x3, x2 - x4)", 4)
ZF = {"A": ZA, "B": ZB, "O": ZO, "C": ZC}
X0 = np.array([-0.4, 0.1, -0.4, 0.1])
GUARD_B = GuardParams(1.0, 1.0, -1.5, 0.63, 2.0)
GUARD_A = GuardParams(1.0, 1.0, -0.5, 0.9, 4.0)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=1000, deadline=None)
@given(finite, finite)
def test_smooth_min_max_bounds(a, b):
    v, wa, wb = K.softmin2(a, b, 1.0)
    assert v <= min(a, b) + 1e-12
    assert min(a, b) <= v + math.log(2) + 1e-12
    assert wa + wb == pytest.approx(1.0)
    d, _, _ = K.softmax2(a, b, 10.0)
    assert d <= max(a, b) + 1e-12


@settings(max_examples=200, deadline=None)
@given(finite)
def test_smooth_max_exact_at_equal_arguments(a):
    d, pa, pb = K.softmax2(a, a, 10.0)
    assert abs(d - a) <= 1e-12
    assert pa + pb == pytest.approx(1.0)


def test_sharper_min_tightens():
    a, b = 0.3, 0.1
    gaps = [min(a, b) - K.softmin2(a, b, k)[0] for k in (1, 5, 20)]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[2] <= math.log(2) / 20


def test_case_study_guard_values():
    zb0 = -0.8
    assert GUARD_B.value(0.0) == pytest.approx(-0.44757, abs=1e-5)
    assert GUARD_B.value(2.0) == pytest.approx(-0.00754, abs=1e-5)
    assert check_guard(GUARD_B, zb0, sat=False) == []
    h = Atomic(Lit("B"), ZB, GUARD_B)
    assert h(X0, 0.0) == pytest.approx(-1.24757, abs=1e-5)


def test_guard_a_window_end_discrepancy():
    za0 = -0.8198039027185571
    viol = check_guard(GUARD_A, za0, sat=False)
    assert [v.constraint for v in viol] == ["deadline"]
    assert viol[0].residual == pytest.approx(0.0707, abs=1e-4)
    at_two = GuardParams(1.0, 1.0, -0.5, 0.9, 2.0)
    assert check_guard(at_two, za0, sat=False) == []
    assert GUARD_A.zero_time() == pytest.approx(2.697, abs=1e-3)


@settings(max_examples=500, deadline=None)
@given(
    st.floats(0.01, 3.0) | st.floats(-3.0, -0.01),
    st.floats(0.1, 10.0),
    st.floats(0.1, 5.0),
    st.floats(0.05, 0.95),
)
def test_solved_guards_are_feasible(z0, t_d, b, margin):
    sat = z0 > 0
    g = solve_guard(z0, sat, t_d, b=b, margin=margin)
    assert check_guard(g, z0, sat) == []
    assert g.value(t_d) == pytest.approx(0.0, abs=1e-12)


def test_satisfied_boundary_guard_is_infeasible():
    with pytest.raises(InfeasibleGuard):
        solve_guard(0.0, True, 2.0)


def test_negative_literal_at_obstacle_center():
    h = Atomic(Lit("O", False), ZO)
    assert h(np.array([0.22, -0.05, 0.22, -0.05]), 0.0) == pytest.approx(-0.18, abs=1e-8)


def test_always_safe_barrier_formula():
    h = formula_barrier(parse_formula("!O & C"), ZF)
    x = np.array([0.1, 0.2, 0.0, 0.1])
    from tlcbf.exprcore import evaluate

    expected = -math.log(math.exp(evaluate(ZO, x)) + math.exp(-evaluate(ZC, x)))
    assert h(x, 0.0) == pytest.approx(expected, rel=1e-12)


def test_constant_leaf_rejected():
    with pytest.raises(BarrierError):
        formula_barrier(TOP, ZF)


def _random_barrier(rng):
    names = list("ABOC")

    def leaf():
        name = names[rng.integers(4)]
        guard = None
        if rng.random() < 0.5:
            guard = GuardParams(rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(-3, 0), rng.uniform(0, 1), 2.0)
        return Atomic(Lit(name, bool(rng.random() < 0.5)), ZF[name], guard)

    def build(depth):
        if depth == 0 or rng.random() < 0.3:
            return leaf()
        a, b = build(depth - 1), build(depth - 1)
        r = rng.random()
        if r < 0.4:
            return compose_conj(a, b, sharpness=float(rng.choice([1.0, 5.0, 20.0])))
        if r < 0.8:
            return compose_disj(a, b, lam=float(rng.choice([1.0, 10.0])))
        return softpair(a, b)

    return build(3)


def test_barrier_gradients_match_central_differences():
    rng = np.random.default_rng(42)
    h_step = 1e-6
    for _ in range(100):
        bar = _random_barrier(rng)
        x = rng.uniform([-0.5, -0.5, -0.3, -0.6], [0.8, 0.5, 0.8, 0.5])
        t = rng.uniform(0, 4)
        v, g, dt = bar.evaluate(x, t)
        fd = np.zeros(4)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h_step
            fd[i] = (bar(x + e, t) - bar(x - e, t)) / (2 * h_step)
        fdt = (bar(x, t + h_step) - bar(x, t - h_step)) / (2 * h_step)
        scale = max(1.0, np.linalg.norm(fd), abs(fdt))
        assert np.linalg.norm(g - fd) / scale <= 1e-5
        assert abs(dt - fdt) / scale <= 1e-5
