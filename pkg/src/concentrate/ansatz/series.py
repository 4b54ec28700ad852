"""Truncated power series in eps with array coefficients.

A series is an array S of shape (K+1, ...) standing for sum_k eps^k S[k].
Only the operations needed to expand the stretched equation are provided.
"""

from math import factorial

import numpy as np
from scipy.special import binom


def zeros(K, shape):
    return np.zeros((K + 1,) + tuple(shape))


def constant(K, value, shape):
    s = zeros(K, shape)
    s[0] = value
    return s


def mul(a, b):
    K = a.shape[0] - 1
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for k in range(K + 1):
        for i in range(k + 1):
            out[k] += a[i] * b[k - i]
    return out


def times_eps(a):
    out = np.zeros_like(a)
    out[1:] = a[:-1]
    return out


def _power_of_small(s, m):
    """s^m for a series with zero constant term (terms below order m vanish)."""
    out = np.zeros_like(s)
    out[0] = 1.0
    for _ in range(m):
        out = mul(out, s)
    return out


def taylor_compose(derivs, s):
    """sum_m derivs[m] / m! s^m for s with s[0] = 0, truncated at the series order."""
    K = s.shape[0] - 1
    out = np.zeros_like(s)
    pw = np.zeros_like(s)
    pw[0] = 1.0
    for m in range(min(K, len(derivs) - 1) + 1):
        out = out + derivs[m] / factorial(m) * pw
        pw = mul(pw, s)
    return out


def reciprocal_one_plus(q):
    """1 / (1 + q) for q[0] = 0."""
    return taylor_compose([(-1.0) ** m * factorial(m) for m in range(q.shape[0])], q)


def power(v, p):
    """v^p for a series whose constant term is positive."""
    K = v.shape[0] - 1
    if float(p).is_integer():
        out = np.zeros_like(v)
        out[0] = 1.0
        for _ in range(int(p)):
            out = mul(out, v)
        return out
    v0 = v[0]
    s = v.copy()
    s[0] = 0.0
    s = s / v0
    out = np.zeros_like(v)
    pw = np.zeros_like(v)
    pw[0] = 1.0
    for m in range(K + 1):
        out = out + binom(p, m) * pw
        pw = mul(pw, s)
    return out * v0 ** p


def evaluate(a, eps):
    return sum(eps ** k * a[k] for k in range(a.shape[0]))
