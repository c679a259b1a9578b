"""Pure-Python numerical kernels.

Reference twin of ``_ckernels.pyx``; both modules expose the same names with
the same semantics and are selected by :mod:`tlcbf.kernels`.
"""
import math

import numpy as np

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


def logistic(z):
    """Overflow-safe 1/(1+exp(-z))."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def eval_tape(code, iarg, farg, x, t):
    """Evaluate a postfix tape with forward-mode derivatives.

    Returns ``(status, value, grad_x, d_dt)``; ``status`` is one of the
    ``ERR_*`` codes and the numeric fields are meaningless when it is nonzero.
    """
    n = len(x)
    xs = [float(v) for v in x]
    vals = []
    grads = []
    dts = []
    zero = [0.0] * n
    for k in range(len(code)):
        op = code[k]
        if op == OP_CONST:
            vals.append(float(farg[k, 0]))
            grads.append(zero)
            dts.append(0.0)
        elif op == OP_VAR:
            i = int(iarg[k])
            g = [0.0] * n
            g[i] = 1.0
            vals.append(xs[i])
            grads.append(g)
            dts.append(0.0)
        elif op == OP_TIME:
            vals.append(float(t))
            grads.append(zero)
            dts.append(1.0)
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV):
            vb, gb, db = vals.pop(), grads.pop(), dts.pop()
            va, ga, da = vals.pop(), grads.pop(), dts.pop()
            if op == OP_ADD:
                v = va + vb
                g = [p + q for p, q in zip(ga, gb)]
                d = da + db
            elif op == OP_SUB:
                v = va - vb
                g = [p - q for p, q in zip(ga, gb)]
                d = da - db
            elif op == OP_MUL:
                v = va * vb
                g = [p * vb + va * q for p, q in zip(ga, gb)]
                d = da * vb + va * db
            else:
                if vb == 0.0:
                    return ERR_DIV_ZERO, 0.0, np.zeros(n), 0.0
                v = va / vb
                inv = 1.0 / vb
                g = [(p - v * q) * inv for p, q in zip(ga, gb)]
                d = (da - v * db) * inv
            vals.append(v)
            grads.append(g)
            dts.append(d)
        elif op == OP_NEG:
            vals[-1] = -vals[-1]
            grads[-1] = [-p for p in grads[-1]]
            dts[-1] = -dts[-1]
        elif op == OP_SQRT:
            a = vals[-1]
            if a < 0.0:
                return ERR_SQRT_NEG, 0.0, np.zeros(n), 0.0
            v = math.sqrt(a)
            s = 0.5 / v if v > 0.0 else math.inf
            vals[-1] = v
            grads[-1] = [s * p for p in grads[-1]]
            dts[-1] = s * dts[-1]
        elif op == OP_POW:
            a = vals[-1]
            p_exp = float(farg[k, 0])
            if a < 0.0 and p_exp != math.floor(p_exp):
                return ERR_POW_DOMAIN, 0.0, np.zeros(n), 0.0
            if a == 0.0 and p_exp < 0.0:
                return ERR_DIV_ZERO, 0.0, np.zeros(n), 0.0
            v = a ** p_exp
            s = p_exp * a ** (p_exp - 1.0) if p_exp != 0.0 else 0.0
            vals[-1] = v
            grads[-1] = [s * p for p in grads[-1]]
            dts[-1] = s * dts[-1]
        elif op == OP_NORM2:
            cnt = int(iarg[k])
            delta = float(farg[k, 0])
            sub_v = vals[-cnt:]
            sub_g = grads[-cnt:]
            sub_d = dts[-cnt:]
            del vals[-cnt:], grads[-cnt:], dts[-cnt:]
            r = math.sqrt(sum(v * v for v in sub_v) + delta * delta)
            g = [0.0] * n
            d = 0.0
            if r > 0.0:
                for v, gv, dv in zip(sub_v, sub_g, sub_d):
                    w = v / r
                    if w != 0.0:
                        for i in range(n):
                            g[i] += w * gv[i]
                        d += w * dv
            vals.append(r)
            grads.append(g)
            dts.append(d)
        elif op == OP_LOGISTIC:
            b = float(farg[k, 0])
            c = float(farg[k, 1])
            s = logistic(b * (t + c))
            vals.append(s)
            grads.append(zero)
            dts.append(b * s * (1.0 - s))
        else:
            raise ValueError(f"unknown opcode {op}")
    return ERR_OK, vals[-1], np.array(grads[-1], dtype=float), dts[-1]


def softmin2(a, b, sharpness):
    """-(1/k) ln(exp(-k a) + exp(-k b)) and its partials (wa, wb)."""
    m = a if a < b else b
    ea = math.exp(-sharpness * (a - m))
    eb = math.exp(-sharpness * (b - m))
    s = ea + eb
    return m - math.log(s) / sharpness, ea / s, eb / s


def softmax2(a, b, lam):
    """Exponentially weighted mean of (a, b) and its partials (da, db)."""
    m = a if a > b else b
    ea = math.exp(lam * (a - m))
    eb = math.exp(lam * (b - m))
    s = ea + eb
    wa = ea / s
    wb = eb / s
    v = wa * a + wb * b
    return v, wa * (1.0 + lam * (a - v)), wb * (1.0 + lam * (b - v))


def signed_power(h, rho):
    if h == 0.0:
        return 0.0
    return math.copysign(abs(h) ** rho, h)
