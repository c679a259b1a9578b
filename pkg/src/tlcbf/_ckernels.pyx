# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels; mirrors ``_pykernels`` name for name."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow, floor, fabs, copysign, INFINITY

cnp.import_array()

OP_CONST = 0
OP_VAR = 1
OP_TIME = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_NEG = 7
OP_SQRT = 8
OP_POW = 9
OP_NORM2 = 10
OP_LOGISTIC = 11

ERR_OK = 0
ERR_DIV_ZERO = 1
ERR_SQRT_NEG = 2
ERR_POW_DOMAIN = 3


cdef inline double _logistic(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def logistic(double z):
    """Overflow-safe 1/(1+exp(-z))."""
    return _logistic(z)


def eval_tape(const long[:] code, const long[:] iarg, const double[:, :] farg,
              x, double t):
    """Evaluate a postfix tape with forward-mode derivatives.

    Returns ``(status, value, grad_x, d_dt)``.
    """
    cdef const double[:] xs = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t L = code.shape[0]
    cdef cnp.ndarray[double, ndim=1] vals_arr = np.empty(L + 1)
    cdef cnp.ndarray[double, ndim=1] dts_arr = np.empty(L + 1)
    cdef cnp.ndarray[double, ndim=2] grads_arr = np.zeros((L + 1, n if n > 0 else 1))
    cdef double[:] vals = vals_arr
    cdef double[:] dts = dts_arr
    cdef double[:, :] grads = grads_arr
    cdef Py_ssize_t sp = 0, k, i, j, cnt, base
    cdef long op
    cdef double va, vb, v, s, a, p_exp, r, w, delta, b, c, inv

    for k in range(L):
        op = code[k]
        if op == 0:
            vals[sp] = farg[k, 0]
            for i in range(n):
                grads[sp, i] = 0.0
            dts[sp] = 0.0
            sp += 1
        elif op == 1:
            vals[sp] = xs[iarg[k]]
            for i in range(n):
                grads[sp, i] = 0.0
            grads[sp, iarg[k]] = 1.0
            dts[sp] = 0.0
            sp += 1
        elif op == 2:
            vals[sp] = t
            for i in range(n):
                grads[sp, i] = 0.0
            dts[sp] = 1.0
            sp += 1
        elif op >= 3 and op <= 6:
            sp -= 1
            vb = vals[sp]
            va = vals[sp - 1]
            j = sp - 1
            if op == 3:
                vals[j] = va + vb
                for i in range(n):
                    grads[j, i] += grads[sp, i]
                dts[j] += dts[sp]
            elif op == 4:
                vals[j] = va - vb
                for i in range(n):
                    grads[j, i] -= grads[sp, i]
                dts[j] -= dts[sp]
            elif op == 5:
                vals[j] = va * vb
                for i in range(n):
                    grads[j, i] = grads[j, i] * vb + va * grads[sp, i]
                dts[j] = dts[j] * vb + va * dts[sp]
            else:
                if vb == 0.0:
                    return ERR_DIV_ZERO, 0.0, np.zeros(n), 0.0
                v = va / vb
                inv = 1.0 / vb
                vals[j] = v
                for i in range(n):
                    grads[j, i] = (grads[j, i] - v * grads[sp, i]) * inv
                dts[j] = (dts[j] - v * dts[sp]) * inv
        elif op == 7:
            j = sp - 1
            vals[j] = -vals[j]
            for i in range(n):
                grads[j, i] = -grads[j, i]
            dts[j] = -dts[j]
        elif op == 8:
            j = sp - 1
            a = vals[j]
            if a < 0.0:
                return ERR_SQRT_NEG, 0.0, np.zeros(n), 0.0
            v = sqrt(a)
            s = 0.5 / v if v > 0.0 else INFINITY
            vals[j] = v
            for i in range(n):
                grads[j, i] = s * grads[j, i]
            dts[j] = s * dts[j]
        elif op == 9:
            j = sp - 1
            a = vals[j]
            p_exp = farg[k, 0]
            if a < 0.0 and p_exp != floor(p_exp):
                return ERR_POW_DOMAIN, 0.0, np.zeros(n), 0.0
            if a == 0.0 and p_exp < 0.0:
                return ERR_DIV_ZERO, 0.0, np.zeros(n), 0.0
            v = pow(a, p_exp)
            s = p_exp * pow(a, p_exp - 1.0) if p_exp != 0.0 else 0.0
            vals[j] = v
            for i in range(n):
                grads[j, i] = s * grads[j, i]
            dts[j] = s * dts[j]
        elif op == 10:
            cnt = iarg[k]
            delta = farg[k, 0]
            base = sp - cnt
            r = delta * delta
            for j in range(base, sp):
                r += vals[j] * vals[j]
            r = sqrt(r)
            # accumulate into scratch row `sp` first, the base row is an input
            for i in range(n):
                grads[sp, i] = 0.0
            dts[sp] = 0.0
            if r > 0.0:
                for j in range(base, sp):
                    w = vals[j] / r
                    if w != 0.0:
                        for i in range(n):
                            grads[sp, i] += w * grads[j, i]
                        dts[sp] += w * dts[j]
            vals[base] = r
            for i in range(n):
                grads[base, i] = grads[sp, i]
            dts[base] = dts[sp]
            sp = base + 1
        elif op == 11:
            b = farg[k, 0]
            c = farg[k, 1]
            s = _logistic(b * (t + c))
            vals[sp] = s
            for i in range(n):
                grads[sp, i] = 0.0
            dts[sp] = b * s * (1.0 - s)
            sp += 1
        else:
            raise ValueError(f"unknown opcode {op}")
    return ERR_OK, vals[sp - 1], grads_arr[sp - 1, :n].copy(), dts[sp - 1]


def softmin2(double a, double b, double sharpness):
    """-(1/k) ln(exp(-k a) + exp(-k b)) and its partials (wa, wb)."""
    cdef double m = a if a < b else b
    cdef double ea = exp(-sharpness * (a - m))
    cdef double eb = exp(-sharpness * (b - m))
    cdef double s = ea + eb
    return m - log(s) / sharpness, ea / s, eb / s


def softmax2(double a, double b, double lam):
    """Exponentially weighted mean of (a, b) and its partials (da, db)."""
    cdef double m = a if a > b else b
    cdef double ea = exp(lam * (a - m))
    cdef double eb = exp(lam * (b - m))
    cdef double s = ea + eb
    cdef double wa = ea / s
    cdef double wb = eb / s
    cdef double v = wa * a + wb * b
    return v, wa * (1.0 + lam * (a - v)), wb * (1.0 + lam * (b - v))


def signed_power(double h, double rho):
    if h == 0.0:
        return 0.0
    return copysign(pow(fabs(h), rho), h)
