import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlcbf import kernels
from tlcbf.exprcore import parse_expr

py = kernels.python_backend
cy = kernels.compiled_backend()
needs_cy = pytest.mark.skipif(cy is None, reason="compiled kernels not built")

EXPRS = [
    "0.2 - norm2(x1 - 0.6, x2 - 0.3)",
    "sqrt(x3 + 0.41) - norm2(x1 - x3, x2 - x4)",
    "x1 * x2 / (1 + x3 ^ 2) - logistic(2, -1.5)",
    "-(x4 - 0.5) ^ 3 + 0.1 * t * x2",
    "norm2(x1, x2, x3, x4) * sqrt(2 + x1)",
]


@needs_cy
def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"


@needs_cy
@settings(max_examples=300, deadline=None)
@given(
    st.sampled_from(EXPRS),
    st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4),
    st.floats(0, 5),
)
def test_tape_parity(text, x, t):
    tape = parse_expr(text, 4).tape
    x = np.array(x)
    a = py.eval_tape(tape.code, tape.iarg, tape.farg, x, t)
    b = cy.eval_tape(tape.code, tape.iarg, tape.farg, x, t)
    assert a[0] == b[0]
    if a[0] == 0:
        assert b[1] == pytest.approx(a[1], rel=1e-12, abs=1e-14)
        assert np.allclose(b[2], a[2], rtol=1e-12, atol=1e-14)
        assert b[3] == pytest.approx(a[3], rel=1e-12, abs=1e-14)


@needs_cy
def test_domain_errors_agree():
    for text, x in [("1 / x1", [0.0]), ("sqrt(x1)", [-1.0])]:
        tape = parse_expr(text, 1).tape
        args = (tape.code, tape.iarg, tape.farg, np.array(x), 0.0)
        assert py.eval_tape(*args)[0] == cy.eval_tape(*args)[0] != 0


@needs_cy
@settings(max_examples=300, deadline=None)
@given(st.floats(-40, 40), st.floats(-40, 40), st.floats(0.5, 30), st.floats(0.05, 0.95))
def test_scalar_kernel_parity(a, b, k, rho):
    for name, args in [("softmin2", (a, b, k)), ("softmax2", (a, b, k)), ("signed_power", (a, rho)), ("logistic", (a,))]:
        assert np.allclose(getattr(cy, name)(*args), getattr(py, name)(*args), rtol=1e-12, atol=1e-15)


def test_pure_python_switch():
    env = dict(os.environ, TLCBF_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from tlcbf import kernels; print(kernels.BACKEND)"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert out.stdout.strip() == "python"
