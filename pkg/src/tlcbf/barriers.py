"""Time-varying barrier functions built from literal formulae.

Atomic barriers are ``M(t) + Z(x)`` where ``M`` is an increasing logistic
guard; conjunctions and disjunctions are composed with smooth lower bounds of
min and max. Every barrier evaluates to ``(value, grad_x, d_dt)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from tlcbf import kernels as K
from tlcbf.exprcore import And, Expr, Lit, LitFormula, Or, Truth, eval_grad, formula_text

DEFAULT_LAMBDA = 10.0
DEFAULT_MARGIN = 0.8


class InfeasibleGuard(ValueError):
    pass


class BarrierError(ValueError):
    pass


# -------------------------------------------------------------------- guards


@dataclass(frozen=True)
class GuardParams:
    """``M(t) = E / (1 + exp(-b (t + c))) - eps``, certified up to ``certify_until``."""

    E: float
    b: float
    c: float
    eps: float
    certify_until: float

    def value(self, t: float) -> float:
        return self.E * K.logistic(self.b * (t + self.c)) - self.eps

    def deriv(self, t: float) -> float:
        s = K.logistic(self.b * (t + self.c))
        return self.E * self.b * s * (1.0 - s)

    def zero_time(self) -> float:
        """Time at which M crosses zero (inf if it never does)."""
        if self.eps <= 0.0:
            return -math.inf
        r = self.eps / self.E
        if r >= 1.0:
            return math.inf
        return math.log(r / (1.0 - r)) / self.b - self.c

    def to_json(self) -> dict:
        return {"E": self.E, "b": self.b, "c": self.c, "eps": self.eps, "certify_until": self.certify_until}


@dataclass(frozen=True)
class GuardViolation:
    constraint: str
    residual: float

    def __str__(self):
        return f"{self.constraint} violated (residual {self.residual:+.6g})"


def check_guard(g: GuardParams, z0: float, sat: bool) -> list[GuardViolation]:
    """Feasibility of a guard for a literal with initial state value ``z0``.

    Residuals are signed so that a positive number measures the violation.
    """
    out = []
    start = g.value(0.0) + z0
    if sat and start < 0.0:
        out.append(GuardViolation("initial_satisfied", -start))
    if not sat and start >= 0.0:
        out.append(GuardViolation("initial_unsatisfied", start))
    end = g.value(g.certify_until)
    if end > 0.0:
        out.append(GuardViolation("deadline", end))
    if not g.E > 0.0:
        out.append(GuardViolation("amplitude_positive", -g.E))
    if not g.b > 0.0:
        out.append(GuardViolation("rate_positive", -g.b))
    if not g.eps >= 0.0:
        out.append(GuardViolation("offset_nonnegative", -g.eps))
    return out


def solve_guard(
    z0: float, sat: bool, t_d: float, b: float = 1.0, c: float | None = None, margin: float = DEFAULT_MARGIN
) -> GuardParams:
    """Closed-form feasible guard with ``M(t_d) = 0``.

    ``c`` defaults to ``0.5 - t_d`` (logistic midpoint half a second before
    the deadline).
    """
    if not b > 0:
        raise ValueError("rate b must be positive")
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1)")
    if c is None:
        c = 0.5 - t_d
    if sat and z0 <= 0.0:
        raise InfeasibleGuard(
            f"literal satisfied at the boundary (z0={z0}); an increasing guard that is "
            "nonpositive at the deadline cannot make the initial barrier nonnegative"
        )
    s0 = K.logistic(b * c)
    sd = K.logistic(b * (t_d + c))
    rise = sd - s0
    if not rise > 0.0:
        raise InfeasibleGuard(f"deadline {t_d} must be positive")
    if sat:
        E = margin * z0 / rise
    else:
        E = max(1.0, z0 / (margin * rise))
    return GuardParams(E=E, b=b, c=c, eps=E * sd, certify_until=t_d)


# ------------------------------------------------------------------- barriers


class Barrier:
    """Evaluable h(x, t); ``cache`` memoizes state-function evaluations."""

    def evaluate(self, x, t: float, cache: dict | None = None) -> tuple[float, np.ndarray, float]:
        raise NotImplementedError

    def __call__(self, x, t: float) -> float:
        return self.evaluate(x, t)[0]

    def atoms(self):
        raise NotImplementedError

    def structure(self) -> dict:
        raise NotImplementedError


def _eval_z(z: Expr, x, t, cache):
    if cache is None:
        return eval_grad(z, x, t)
    key = id(z)
    hit = cache.get(key)
    if hit is None:
        hit = cache[key] = eval_grad(z, x, t)
    return hit


class Atomic(Barrier):
    def __init__(self, lit: Lit, zfun: Expr, guard: GuardParams | None = None):
        self.lit = lit
        self.zfun = zfun
        self.guard = guard
        self.sign = 1.0 if lit.positive else -1.0

    def evaluate(self, x, t, cache=None):
        z, gz, dz = _eval_z(self.zfun, x, t, cache)
        v = self.sign * z
        g = gz if self.sign > 0 else -gz
        d = self.sign * dz
        if self.guard is not None:
            v += self.guard.value(t)
            d += self.guard.deriv(t)
        return v, g, d

    def atoms(self):
        yield self

    def structure(self):
        out = {"atomic": formula_text(self.lit)}
        if self.guard is not None:
            out["guard"] = self.guard.to_json()
        return out


class Conj(Barrier):
    """Smooth lower bound of min: ``-(1/k) ln(exp(-k a) + exp(-k b))``."""

    def __init__(self, a: Barrier, b: Barrier, sharpness: float = 1.0):
        if not sharpness > 0:
            raise ValueError("sharpness must be positive")
        self.a, self.b, self.sharpness = a, b, sharpness

    def evaluate(self, x, t, cache=None):
        va, ga, da = self.a.evaluate(x, t, cache)
        vb, gb, db = self.b.evaluate(x, t, cache)
        v, wa, wb = K.softmin2(va, vb, self.sharpness)
        return v, wa * ga + wb * gb, wa * da + wb * db

    def atoms(self):
        yield from self.a.atoms()
        yield from self.b.atoms()

    def structure(self):
        return {"conj": [self.a.structure(), self.b.structure()], "sharpness": self.sharpness}


class Disj(Barrier):
    """Exponentially weighted mean, a smooth lower bound of max."""

    kind = "disj"

    def __init__(self, a: Barrier, b: Barrier, lam: float = DEFAULT_LAMBDA):
        if not lam > 0:
            raise ValueError("lambda must be positive")
        self.a, self.b, self.lam = a, b, lam

    def evaluate(self, x, t, cache=None):
        va, ga, da = self.a.evaluate(x, t, cache)
        vb, gb, db = self.b.evaluate(x, t, cache)
        v, pa, pb = K.softmax2(va, vb, self.lam)
        return v, pa * ga + pb * gb, pa * da + pb * db

    def atoms(self):
        yield from self.a.atoms()
        yield from self.b.atoms()

    def structure(self):
        return {self.kind: [self.a.structure(), self.b.structure()], "lambda": self.lam}


class SoftPair(Disj):
    """Disjunction of a stay barrier and a goal barrier."""

    kind = "softpair"


def atomic_barrier(lit: Lit, zfun: Expr, guard: GuardParams | None = None) -> Atomic:
    return Atomic(lit, zfun, guard)


def compose_conj(a: Barrier, b: Barrier, sharpness: float = 1.0) -> Conj:
    return Conj(a, b, sharpness)


def compose_disj(a: Barrier, b: Barrier, lam: float = DEFAULT_LAMBDA) -> Disj:
    return Disj(a, b, lam)


def softpair(stay: Barrier, goal: Barrier, lam: float = DEFAULT_LAMBDA) -> SoftPair:
    return SoftPair(stay, goal, lam)


def formula_barrier(
    f: LitFormula,
    zfuns: Mapping[str, Expr],
    guards: Mapping[Lit, GuardParams | None] | None = None,
    lam: float = DEFAULT_LAMBDA,
    sharpness: float = 1.0,
) -> Barrier:
    """Barrier of a negation-normal literal formula."""
    guards = guards or {}
    if isinstance(f, Truth):
        raise BarrierError(f"constant {formula_text(f)} has no finite barrier")
    if isinstance(f, Lit):
        if f.name not in zfuns:
            raise KeyError(f"unknown proposition {f.name!r}")
        return Atomic(f, zfuns[f.name], guards.get(f))
    if isinstance(f, And):
        return Conj(
            formula_barrier(f.left, zfuns, guards, lam, sharpness),
            formula_barrier(f.right, zfuns, guards, lam, sharpness),
            sharpness,
        )
    if isinstance(f, Or):
        return Disj(
            formula_barrier(f.left, zfuns, guards, lam, sharpness),
            formula_barrier(f.right, zfuns, guards, lam, sharpness),
            lam,
        )
    raise TypeError(f)
