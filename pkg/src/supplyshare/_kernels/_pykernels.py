"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly in semantics; the compiled module is
preferred when importable.
"""
import numpy as np


def find_spans(knots, degree, x):
    """Index ``i`` of the knot span ``knots[i] <= x < knots[i + 1]`` per point.

    The right end of the knot vector maps to the last non-degenerate span.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    n_basis = knots.size - degree - 1
    lo, hi = knots[degree], knots[n_basis]
    if np.any(x < lo) or np.any(x > hi):
        bad = x[(x < lo) | (x > hi)][0]
        raise ValueError(f"point {bad} outside knot span [{lo}, {hi}]")
    spans = np.searchsorted(knots, x, side="right") - 1
    return np.clip(spans, degree, n_basis - 1)


def bspline_basis(knots, degree, x):
    """B-spline basis matrix by the Cox-de Boor triangular recursion.

    Parameters
    ----------
    knots : array_like
        Full (non-decreasing) knot vector, end knots included with their
        multiplicity.
    degree : int
        Polynomial degree.
    x : array_like
        Evaluation points, all inside ``[knots[degree], knots[-degree-1]]``.

    Returns
    -------
    ndarray
        ``(len(x), len(knots) - degree - 1)`` matrix; entries outside a basis
        function's support are exactly zero.
    """
    knots = np.ascontiguousarray(knots, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    n_basis = knots.size - degree - 1
    if n_basis < 1:
        raise ValueError("knot vector too short for the requested degree")
    spans = find_spans(knots, degree, x)
    n = x.size
    vals = np.zeros((n, degree + 1))
    vals[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    out = np.zeros((n, n_basis))
    cols = spans[:, None] - degree + np.arange(degree + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def sample_blocks(prec, lin, z, constraint=None):
    """Draw one sample per block from ``N(prec^-1 lin, prec^-1)``.

    Parameters
    ----------
    prec : ndarray, shape (n, d, d)
        Symmetric positive-definite precision matrices.
    lin : ndarray, shape (n, d)
        Linear (precision-weighted mean) terms.
    z : ndarray, shape (n, d)
        Standard normal variates.
    constraint : ndarray, shape (n, d), optional
        Per-block vector ``c``; where nonzero the draw is conditioned on
        ``c @ x == 0`` by kriging. All-zero rows mean unconstrained.

    Returns
    -------
    ndarray, shape (n, d)
    """
    prec = np.asarray(prec, dtype=float)
    lin = np.asarray(lin, dtype=float)
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, lin[..., None])[..., 0]
    lt = np.swapaxes(chol, -1, -2)
    x = mean + np.linalg.solve(lt, np.asarray(z, dtype=float)[..., None])[..., 0]
    if constraint is not None:
        c = np.asarray(constraint, dtype=float)
        active = np.any(c != 0.0, axis=1)
        if np.any(active):
            u = np.linalg.solve(prec[active], c[active][..., None])[..., 0]
            xa = x[active]
            ca = c[active]
            s = np.einsum("nd,nd->n", ca, xa) / np.einsum("nd,nd->n", ca, u)
            x[active] = xa - s[:, None] * u
    return x
