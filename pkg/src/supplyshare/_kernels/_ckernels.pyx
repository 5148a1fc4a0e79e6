# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: B-spline basis evaluation and batched Gaussian block draws."""
import numpy as np
from libc.math cimport sqrt


cdef Py_ssize_t _find_span(const double[::1] knots, int degree, Py_ssize_t n_basis, double x) noexcept nogil:
    cdef Py_ssize_t lo = degree, hi = n_basis, mid
    if x >= knots[n_basis]:
        return n_basis - 1
    # binary search for knots[i] <= x < knots[i + 1]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def bspline_basis(knots, int degree, x):
    cdef const double[::1] kv = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_basis = kv.shape[0] - degree - 1
    if n_basis < 1:
        raise ValueError("knot vector too short for the requested degree")
    cdef double lo = kv[degree], hi = kv[n_basis]
    cdef Py_ssize_t n = xv.shape[0], i, j, r, span
    for i in range(n):
        if xv[i] < lo or xv[i] > hi:
            raise ValueError(f"point {xv[i]} outside knot span [{lo}, {hi}]")
    out = np.zeros((n, n_basis), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double[::1] vals = np.empty(degree + 1)
    cdef double[::1] left = np.empty(degree + 1)
    cdef double[::1] right = np.empty(degree + 1)
    cdef double saved, temp, xi
    with nogil:
        for i in range(n):
            xi = xv[i]
            span = _find_span(kv, degree, n_basis, xi)
            vals[0] = 1.0
            for j in range(1, degree + 1):
                left[j] = xi - kv[span + 1 - j]
                right[j] = kv[span + j] - xi
                saved = 0.0
                for r in range(j):
                    temp = vals[r] / (right[r + 1] + left[j - r])
                    vals[r] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                vals[j] = saved
            for r in range(degree + 1):
                ov[i, span - degree + r] = vals[r]
    return out


cdef int _cholesky(double[:, ::1] a, Py_ssize_t d) noexcept nogil:
    """In-place lower Cholesky factor; returns 1 on failure."""
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(d):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if s <= 0.0:
            return 1
        a[j, j] = sqrt(s)
        for i in range(j + 1, d):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
    return 0


cdef void _forward(const double[:, ::1] l, double[::1] b, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= l[i, k] * b[k]
        b[i] = s / l[i, i]


cdef void _backward(const double[:, ::1] l, double[::1] b, Py_ssize_t d) noexcept nogil:
    # solves L^T x = b in place
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(d - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, d):
            s -= l[k, i] * b[k]
        b[i] = s / l[i, i]


def sample_blocks(prec, lin, z, constraint=None):
    cdef const double[:, :, ::1] q = np.ascontiguousarray(prec, dtype=np.float64)
    cdef const double[:, ::1] rv = np.ascontiguousarray(lin, dtype=np.float64)
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1], b, i, j
    cdef bint has_c = constraint is not None
    cdef const double[:, ::1] cv
    if has_c:
        cv = np.ascontiguousarray(constraint, dtype=np.float64)
    else:
        cv = np.zeros((1, 1))
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double[:, ::1] l = np.empty((d, d))
    cdef double[::1] mu = np.empty(d)
    cdef double[::1] e = np.empty(d)
    cdef double[::1] u = np.empty(d)
    cdef double cx, cu
    cdef bint active
    cdef int failed = -1
    with nogil:
        for b in range(n):
            for i in range(d):
                for j in range(d):
                    l[i, j] = q[b, i, j]
            if _cholesky(l, d):
                failed = b
                break
            for i in range(d):
                mu[i] = rv[b, i]
                e[i] = zv[b, i]
            _forward(l, mu, d)
            _backward(l, mu, d)
            _backward(l, e, d)
            for i in range(d):
                ov[b, i] = mu[i] + e[i]
            if has_c:
                active = False
                for i in range(d):
                    u[i] = cv[b, i]
                    if cv[b, i] != 0.0:
                        active = True
                if active:
                    _forward(l, u, d)
                    _backward(l, u, d)
                    cx = 0.0
                    cu = 0.0
                    for i in range(d):
                        cx += cv[b, i] * ov[b, i]
                        cu += cv[b, i] * u[i]
                    for i in range(d):
                        ov[b, i] -= (cx / cu) * u[i]
    if failed >= 0:
        raise np.linalg.LinAlgError(f"block {failed}: precision matrix is not positive definite")
    return out
