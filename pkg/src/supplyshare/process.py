"""Process model of the multivariate-intercept P-spline.

The logit public share is ``psi[p, m, t] = sum_k beta[p, m, k] B[p, k](t)``.
``beta`` is rebuilt outwards from the anchored coefficient ``alpha`` by the
rates of change ``delta``. Intercepts are hierarchical: ``theta_c ~ MVN(0,
Sigma_theta)``, ``alpha_p ~ MVN(theta_c, Sigma_alpha)``, both covariances
``IW(I, M+1)``; ``delta ~ N(0, sigma_delta^2)`` with
``sigma_delta ~ N+(0, 2^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from .layout import ModelLayout

DELTA_SD_PRIOR_SCALE = 2.0


@dataclass
class ParameterState:
    """One MCMC state.

    ``coef`` holds ``delta`` (anchored models) or ``beta`` (additive models),
    padded with zeros to a common length. Model-specific hyperparameters
    (``sigma_delta``, ``sigma_beta``, ...) live in ``hyper``.
    """

    sigma_theta: np.ndarray
    sigma_alpha: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    coef: np.ndarray
    hyper: dict = field(default_factory=dict)

    @property
    def sigma_delta(self) -> float:
        return float(self.hyper["sigma_delta"])

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.sigma_theta.copy(), self.sigma_alpha.copy(), self.theta.copy(),
            self.alpha.copy(), self.coef.copy(),
            {k: np.array(v, dtype=float, copy=True) for k, v in self.hyper.items()},
        )

    def arrays(self) -> dict:
        out = {
            "sigma_theta": self.sigma_theta,
            "sigma_alpha": self.sigma_alpha,
            "theta": self.theta,
            "alpha": self.alpha,
            "coef": self.coef,
        }
        out.update(self.hyper)
        return out


def reconstruct_beta(alpha: float, delta, k_star: int) -> np.ndarray:
    """Spline coefficients from the anchor value and the rates of change.

    ``beta[k_star] = alpha``; moving left subtracts ``delta[k]``, moving right
    adds ``delta[k-1]``. ``k_star`` is 0-based, so ``np.diff(beta) == delta``.
    """
    delta = np.asarray(delta, dtype=float)
    n = delta.size + 1
    if not 0 <= k_star < n:
        raise ValueError(f"k_star {k_star} outside 0..{n - 1}")
    beta = np.empty(n)
    beta[k_star] = alpha
    for k in range(k_star - 1, -1, -1):
        beta[k] = beta[k + 1] - delta[k]
    for k in range(k_star + 1, n):
        beta[k] = beta[k - 1] + delta[k - 1]
    return beta


def latent_trajectory(state: ParameterState, layout: ModelLayout) -> np.ndarray:
    """``psi`` on the annual grid, shape ``(P, M, T)``."""
    if state.alpha.shape != (layout.P, layout.M) or state.coef.shape != (layout.P, layout.M, layout.D - 1):
        raise ValueError(
            f"state shapes alpha{state.alpha.shape}/coef{state.coef.shape} do not match layout "
            f"(P={layout.P}, M={layout.M}, D={layout.D})"
        )
    return layout.psi(state.alpha, state.coef)


def _check_pd(name, mat):
    try:
        dist.cholesky(mat)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(f"{name} is not positive definite") from None


def log_prior(state: ParameterState, layout: ModelLayout) -> float:
    """Joint log prior density of the multivariate-intercept model."""
    _check_pd("sigma_theta", state.sigma_theta)
    _check_pd("sigma_alpha", state.sigma_alpha)
    sd = state.sigma_delta
    if not sd > 0.0:
        return -math.inf
    m = layout.M
    eye = np.eye(m)
    lp = dist.iw_logpdf(state.sigma_theta, eye, m + 1)
    lp += dist.iw_logpdf(state.sigma_alpha, eye, m + 1)
    lp += dist.mvn_logpdf(state.theta, 0.0, state.sigma_theta)
    lp += dist.mvn_logpdf(state.alpha, state.theta[layout.region_country], state.sigma_alpha)
    mask = np.broadcast_to(layout.coef_mask[:, None, :], state.coef.shape)
    lp += float(np.sum(dist.normal_logpdf(state.coef[mask], 0.0, sd)))
    lp += float(dist.half_normal_logpdf(sd, DELTA_SD_PRIOR_SCALE))
    return float(lp)


def log_likelihood(state: ParameterState, layout: ModelLayout) -> float:
    """Sum of ``N(logit y | psi, se^2)`` over observations."""
    psi = latent_trajectory(state, layout)
    mu = psi[layout.obs_region, layout.obs_method, layout.obs_time]
    return float(np.sum(dist.normal_logpdf(layout.y, mu, layout.se)))


def grad_log_posterior(state: ParameterState, layout: ModelLayout):
    """Gradient of ``log_prior + log_likelihood`` with respect to ``alpha`` and ``coef``.

    Returns arrays shaped like ``state.alpha`` and ``state.coef`` (zero on
    padding slots).
    """
    prec_alpha = np.linalg.inv(state.sigma_alpha)
    dev = state.alpha - state.theta[layout.region_country]
    g_alpha = -dev @ prec_alpha
    g_coef = -state.coef / state.sigma_delta ** 2 * layout.coef_mask[:, None, :]
    psi = latent_trajectory(state, layout)
    resid = (layout.y - psi[layout.obs_region, layout.obs_method, layout.obs_time]) / layout.se ** 2
    rows = layout.obs_rows()
    g = np.zeros((layout.P, layout.M, layout.D))
    np.add.at(g, (layout.obs_region, layout.obs_method), resid[:, None] * rows)
    g_alpha = g_alpha + g[:, :, 0]
    g_coef = g_coef + g[:, :, 1:] * layout.coef_mask[:, None, :]
    return g_alpha, g_coef
