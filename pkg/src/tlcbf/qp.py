"""Dense dual active-set solver for tiny strictly convex QPs.

Solves ``min u'Pu  s.t.  A u + b >= 0`` following Goldfarb and Idnani: start
at the unconstrained minimizer and repeatedly add the most violated
constraint, dropping active ones whose multiplier would turn negative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSD_TOL = 1e-12
RIDGE = 1e-12


class NotPsd(ValueError):
    pass


class Infeasible(RuntimeError):
    """No input satisfies all rows.

    ``certificate`` (when present) holds nonnegative weights y over the rows
    with ``y @ A == 0`` and ``y @ b < 0``.
    """

    def __init__(self, message, active=(), certificate=None, t=None):
        super().__init__(message)
        self.active = tuple(active)
        self.certificate = certificate
        self.t = t


@dataclass
class QPResult:
    u: np.ndarray
    multipliers: np.ndarray
    active: tuple[int, ...]
    iterations: int
    kkt: dict = field(default_factory=dict)


def kkt_residuals(P, A, b, u, lam) -> dict:
    P = np.asarray(P, float)
    A = np.asarray(A, float).reshape(-1, P.shape[0])
    b = np.asarray(b, float)
    slack = A @ u + b if len(b) else np.zeros(0)
    stat = 2.0 * P @ u - A.T @ lam if len(b) else 2.0 * P @ u
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(np.max(-slack, initial=0.0)),
        "dual": float(np.max(-lam, initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def _factor(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotPsd("cost matrix must be square")
    if not np.allclose(P, P.T, atol=1e-12, rtol=0):
        raise NotPsd("cost matrix must be symmetric")
    evals = np.linalg.eigvalsh(P)
    if evals.size and evals[0] < -PSD_TOL * max(1.0, abs(evals[-1])):
        raise NotPsd(f"cost matrix has negative eigenvalue {evals[0]:.3g}")
    H = 2.0 * P
    if evals.size and evals[0] < RIDGE:
        H = H + RIDGE * np.eye(P.shape[0])
    return H, np.linalg.cholesky(H)


def _hsolve(L, v):
    return np.linalg.solve(L.T, np.linalg.solve(L, v))


def solve_qp(P, A=None, b=None, box=None, max_iter: int | None = None, tol: float = 1e-12) -> QPResult:
    """Minimize ``u'Pu`` subject to ``A u + b >= 0`` and ``lo <= u <= hi``.

    ``box`` is a pair of m-vectors (entries may be +-inf). Raises
    :class:`Infeasible` or :class:`NotPsd`.
    """
    H, L = _factor(P)
    m = H.shape[0]
    A = np.zeros((0, m)) if A is None else np.asarray(A, dtype=float).reshape(-1, m)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
    n_user = len(b)
    if box is not None:
        lo, hi = (np.broadcast_to(np.asarray(v, float), (m,)) for v in box)
        rows, offs = [A], [b]
        for i in range(m):
            if np.isfinite(lo[i]):
                e = np.zeros(m)
                e[i] = 1.0
                rows.append(e[None])
                offs.append([-lo[i]])
            if np.isfinite(hi[i]):
                e = np.zeros(m)
                e[i] = -1.0
                rows.append(e[None])
                offs.append([hi[i]])
        A = np.vstack(rows)
        b = np.concatenate([np.asarray(o, float).reshape(-1) for o in offs])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("constraint rows must be finite")
    n_rows = len(b)
    if max_iter is None:
        max_iter = 10 * (m + n_rows)

    u = np.zeros(m)
    lam = np.zeros(n_rows)
    active: list[int] = []
    scale = 1.0 + np.abs(b)
    it = 0

    while True:
        slack = A @ u + b
        viol = slack / scale
        p = int(np.argmin(viol)) if n_rows else -1
        if n_rows == 0 or viol[p] >= -tol:
            break
        # add row p, possibly after dropping others
        while True:
            it += 1
            if it > max_iter:
                raise Infeasible(f"iteration limit {max_iter} reached", active)
            n_p = A[p]
            if active:
                N = A[active].T
                HinvN = _hsolve(L, N)
                M = N.T @ HinvN
                Hinv_np = _hsolve(L, n_p)
                r = np.linalg.solve(M, N.T @ Hinv_np)
                z = Hinv_np - HinvN @ r
            else:
                r = np.zeros(0)
                z = _hsolve(L, n_p)
            zn = float(z @ n_p)
            s_p = float(A[p] @ u + b[p])
            t2 = -s_p / zn if zn > 1e-14 * max(1.0, float(n_p @ n_p)) else np.inf
            t1 = np.inf
            k = -1
            for j, rj in enumerate(r):
                if rj > 1e-14:
                    ratio = lam[active[j]] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            if not np.isfinite(t1) and not np.isfinite(t2):
                cert = np.zeros(n_rows)
                cert[p] = 1.0
                for j, idx in enumerate(active):
                    cert[idx] = -r[j]
                raise Infeasible(
                    "constraints are jointly infeasible",
                    active=[p] + active,
                    certificate=cert,
                )
            step = min(t1, t2)
            if np.isfinite(t2):
                u = u + step * z
            for j, idx in enumerate(active):
                lam[idx] -= step * r[j]
            lam[p] += step
            if step == t2:
                active.append(p)
                break
            dropped = active.pop(k)
            lam[dropped] = 0.0
    lam_user = lam
    res = QPResult(u, lam_user, tuple(sorted(i for i in active if i < n_user)), it)
    res.kkt = kkt_residuals(P, A, b, u, lam)
    return res
