"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Micro-benchmarks call both backends in-process; the controller-step
benchmark runs in a subprocess per backend because the backend is chosen
at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tlcbf import kernels
from tlcbf.exprcore import parse_expr

STEP_SNIPPET = """
import timeit
from tlcbf import kernels
from tlcbf.cli import build_plan, make_controller
from tlcbf.scenario import load_scenario, shipped_scenario
sc = load_scenario(shipped_scenario())
ctrl = make_controller(sc, build_plan(sc))
x = sc.model.x0
ctrl.step(x, 0.0)
n = {n}
print(kernels.BACKEND, timeit.timeit(lambda: ctrl.step(x, 0.1), number=n) / n)
"""


def micro(repeat: int):
    z = parse_expr("sqrt(x3 + 0.41) - norm2(x1 - x3, x2 - x4)", 4).tape
    x = np.array([-0.4, 0.1, -0.4, 0.1])
    backends = {"python": kernels.python_backend}
    cy = kernels.compiled_backend()
    if cy is not None:
        backends["cython"] = cy
    cases = {
        "eval_tape": lambda K: K.eval_tape(z.code, z.iarg, z.farg, x, 0.0),
        "softmin2": lambda K: K.softmin2(0.3, -0.2, 20.0),
        "softmax2": lambda K: K.softmax2(0.3, -0.2, 10.0),
    }
    rows = []
    for name, fn in cases.items():
        times = {b: min(timeit.repeat(lambda: fn(K), number=repeat, repeat=3)) / repeat for b, K in backends.items()}
        rows.append((name, times))
    return rows


def controller_step(n: int):
    out = {}
    for label, env in (("cython", {}), ("python", {"TLCBF_PURE_PYTHON": "1"})):
        res = subprocess.run(
            [sys.executable, "-c", STEP_SNIPPET.format(n=n)],
            capture_output=True, text=True, env=dict(os.environ, **env), check=True,
        )
        backend, secs = res.stdout.split()
        out[backend if backend == label else f"{label}->{backend}"] = float(secs)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20000)
    p.add_argument("--steps", type=int, default=200)
    args = p.parse_args(argv)
    print(f"{'kernel':<16}{'python [us]':>14}{'cython [us]':>14}{'speedup':>10}")
    for name, t in micro(args.repeat) + [("controller.step", controller_step(args.steps))]:
        tp, tc = t.get("python"), t.get("cython")
        speed = f"{tp / tc:9.1f}x" if tp and tc else "      n/a"
        cy = f"{tc * 1e6:14.2f}" if tc else f"{'n/a':>14}"
        print(f"{name:<16}{tp * 1e6:14.2f}{cy}{speed}")


if __name__ == "__main__":
    main()
