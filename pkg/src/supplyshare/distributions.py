"""Log densities and random draws shared by the model variants and the sampler.

All densities are hand-coded on numpy so the test-suite can check them against
``scipy.stats`` independently. Gamma distributions use the shape/rate form.
"""
import math

import numpy as np
from scipy.special import gammaln, multigammaln

LOG_2PI = math.log(2.0 * math.pi)


def normal_logpdf(x, mean, sd):
    x = np.asarray(x, dtype=float)
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI


def half_normal_logpdf(x, scale):
    """Density of ``|N(0, scale^2)|``; ``-inf`` for ``x < 0``."""
    x = np.asarray(x, dtype=float)
    out = normal_logpdf(x, 0.0, scale) + math.log(2.0)
    return np.where(x >= 0.0, out, -np.inf)


def half_cauchy_logpdf(x, scale):
    x = np.asarray(x, dtype=float)
    out = math.log(2.0 / (math.pi * scale)) - np.log1p((x / scale) ** 2)
    return np.where(x >= 0.0, out, -np.inf)


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    return np.where(x > 0.0, out, -np.inf)


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (gammaln(a + b) - gammaln(a) - gammaln(b)
               + (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x))
    return np.where((x > 0.0) & (x < 1.0), out, -np.inf)


def f_logpdf(x, d1, d2):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (0.5 * d1 * np.log(d1) + 0.5 * d2 * np.log(d2) + (0.5 * d1 - 1.0) * np.log(x)
               - 0.5 * (d1 + d2) * np.log(d2 + d1 * x)
               - (gammaln(0.5 * d1) + gammaln(0.5 * d2) - gammaln(0.5 * (d1 + d2))))
    return np.where(x > 0.0, out, -np.inf)


def cholesky(cov):
    """Cholesky factor; raises ``LinAlgError`` naming the problem if not PD."""
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, np.swapaxes(cov, -1, -2), rtol=1e-10, atol=1e-12):
        raise np.linalg.LinAlgError("covariance matrix is not symmetric")
    return np.linalg.cholesky(cov)


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log density, summed over all leading dimensions of ``x``.

    ``x`` has shape ``(..., M)``; ``mean`` broadcasts against it; ``cov`` is a
    single ``(M, M)`` matrix.
    """
    x = np.asarray(x, dtype=float)
    chol = cholesky(cov)
    dev = (x - mean).reshape(-1, x.shape[-1])
    sol = np.linalg.solve(chol, dev.T)
    m = x.shape[-1]
    n = dev.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * np.sum(sol * sol) - 0.5 * n * (m * LOG_2PI + logdet))


def iw_logpdf(sigma, scale, df):
    """Inverse-Wishart ``IW(scale, df)`` log density at ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    scale = np.asarray(scale, dtype=float)
    m = sigma.shape[0]
    chol = cholesky(sigma)
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(chol)))
    logdet_scale = 2.0 * np.sum(np.log(np.diag(cholesky(scale))))
    inv = np.linalg.solve(sigma, scale)
    return float(0.5 * df * logdet_scale - 0.5 * df * m * math.log(2.0) - multigammaln(0.5 * df, m)
                 - 0.5 * (df + m + 1) * logdet_sigma - 0.5 * np.trace(inv))


def sample_inverse_wishart(scale, df, rng):
    """One draw from ``IW(scale, df)`` using the Bartlett decomposition.

    ``sigma^-1 ~ Wishart(scale^-1, df)`` is built as ``(L A)(L A)^T`` with
    ``L = chol(scale^-1)``; the inverse is then formed from the triangular factor.
    """
    scale = np.asarray(scale, dtype=float)
    m = scale.shape[0]
    a = np.zeros((m, m))
    a[np.diag_indices(m)] = np.sqrt(rng.chisquare(df - np.arange(m)))
    tril = np.tril_indices(m, -1)
    a[tril] = rng.standard_normal(len(tril[0]))
    chol_inv = np.linalg.cholesky(np.linalg.inv(scale))
    la = chol_inv @ a
    la_inv = np.linalg.inv(la)
    out = la_inv.T @ la_inv
    return 0.5 * (out + out.T)


def cov_to_corr(cov):
    """Convert covariance matrices (``(..., M, M)``) to correlation matrices."""
    cov = np.asarray(cov, dtype=float)
    sd = np.sqrt(np.diagonal(cov, axis1=-2, axis2=-1))
    corr = cov / (sd[..., :, None] * sd[..., None, :])
    idx = np.arange(cov.shape[-1])
    corr[..., idx, idx] = 1.0
    return np.clip(corr, -1.0, 1.0)


def gig_log_density(u, lam, chi, psi):
    """Log density of ``log v`` when ``p(v) ∝ v^lam exp(-chi/(2v) - psi v/2)``."""
    return (lam + 1.0) * u - 0.5 * chi * math.exp(-u) - 0.5 * psi * math.exp(u)


def slice_sample(logf, x0, width, rng, max_steps=50):
    """One univariate slice-sampling update (stepping out, then shrinkage)."""
    f0 = logf(x0)
    level = f0 + math.log1p(-rng.random())
    left = x0 - width * rng.random()
    right = left + width
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and logf(left) > level:
        left -= width
        j -= 1
    while k > 0 and logf(right) > level:
        right += width
        k -= 1
    while True:
        x1 = left + (right - left) * rng.random()
        if logf(x1) >= level:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1


def sample_positive_normal(mean, sd, rng):
    """Draw from ``N(mean, sd^2)`` truncated to ``(0, inf)``."""
    a = -mean / sd
    if a < 0.5:
        while True:
            z = rng.standard_normal()
            if z > a:
                return mean + sd * z
    # exponential proposal for the far tail
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential(1.0 / lam)
        if rng.random() <= math.exp(-0.5 * (z - lam) ** 2):
            return mean + sd * z


def sample_log_variance(u0, lam, chi, psi, width, rng):
    """Slice update of ``u = log v`` for a GIG-shaped variance conditional."""
    return slice_sample(lambda u: gig_log_density(u, lam, chi, psi), u0, width, rng)
