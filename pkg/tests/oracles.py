"""Independent reference implementations used only by the tests."""
from fractions import Fraction

import numpy as np
from scipy import stats


def cox_de_boor_exact(knots, degree, x):
    """All basis values at ``x`` by the plain Cox-de Boor recursion in rational arithmetic.

    The last non-degenerate interval is closed on the right so that the
    right end of a clamped knot vector is covered.
    """
    t = [Fraction(k) for k in knots]
    x = Fraction(x)
    n = len(t) - degree - 1
    last = max(i for i in range(len(t) - 1) if t[i] < t[i + 1])

    def b(i, d):
        if d == 0:
            if t[i] <= x < t[i + 1] or (i == last and x == t[i + 1]):
                return Fraction(1)
            return Fraction(0)
        out = Fraction(0)
        if t[i + d] != t[i]:
            out += (x - t[i]) / (t[i + d] - t[i]) * b(i, d - 1)
        if t[i + d + 1] != t[i + 1]:
            out += (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * b(i + 1, d - 1)
        return out

    return [b(i, degree) for i in range(n)]


def normal_logpdf(x, mean, sd):
    return stats.norm.logpdf(x, mean, sd)


def mvn_logpdf(x, mean, cov):
    return stats.multivariate_normal.logpdf(x, mean, cov)


def iw_logpdf(sigma, scale, df):
    return stats.invwishart.logpdf(sigma, df=df, scale=scale)


def half_normal_logpdf(x, scale):
    return stats.halfnorm.logpdf(x, scale=scale)


def naive_psi(basis, beta):
    """``psi[t] = sum_k beta[k] B[t, k]`` with explicit loops."""
    T, K = basis.shape
    out = np.zeros(T)
    for t in range(T):
        acc = 0.0
        for k in range(K):
            acc += beta[k] * basis[t, k]
        out[t] = acc
    return out
