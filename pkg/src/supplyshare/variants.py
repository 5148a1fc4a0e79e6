"""The five comparable model variants.

``multivariate_intercept`` is the anchored model of :mod:`supplyshare.process`.
The alternatives change only priors and parameterisation; data model and
basis construction are shared:

* ``zero_covariance``: anchored, intercept covariances restricted to diagonal
  matrices with half-normal SD priors.
* ``multivariate_delta``: anchored; rates of change correlated across methods
  through ``Sigma_delta ~ IW``; independent per-method intercepts.
  (Reconstructed from the verbal description of the earlier national model.)
* ``shrinkage``: additive intercept plus AR(1) spline coefficients with a
  triple-gamma shrinkage prior; sum-to-zero coefficients.
* ``fully_multivariate``: additive intercept with the multivariate intercept
  hierarchy and AR(1) coefficients correlated across methods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from . import process
from .errors import ConfigError
from .layout import ModelLayout, difference_matrix

INTERCEPT_SD_SCALE = 2.0
COUNTRY_CAUCHY_SCALE = 1.0
SIGMA_BETA_PLAIN_SCALE = 2.0
A_XI_BETA = (5.0, 10.0)
C_XI_BETA = (5.0, 2.0)


@dataclass(frozen=True)
class PriorNode:
    name: str
    distribution: str
    parents: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one model variant.

    The structural fields drive both :meth:`log_prior` and the Gibbs sampler;
    ``prior_graph`` documents every stochastic node with its single prior.
    """

    name: str
    intercept: str
    intercept_sd_prior: str
    coefficients: str
    k_star_mode: str
    sum_to_zero: bool
    prior_graph: tuple[PriorNode, ...]
    deterministic: tuple[str, ...] = ("beta", "psi")

    @property
    def additive(self) -> bool:
        return self.k_star_mode == "ar1"

    @property
    def parameters(self) -> tuple[str, ...]:
        return tuple(node.name for node in self.prior_graph)

    def validate(self) -> "ModelSpec":
        names = [n.name for n in self.prior_graph]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ConfigError(f"{self.name}: parameters with more than one prior: {sorted(dupes)}")
        known = set(names) | set(self.deterministic)
        for node in self.prior_graph:
            missing = set(node.parents) - known
            if missing:
                raise ConfigError(f"{self.name}: {node.name} depends on undeclared {sorted(missing)}")
        if self.k_star_mode not in ("anchored", "ar1"):
            raise ConfigError(f"{self.name}: unknown k_star_mode {self.k_star_mode!r}")
        return self

    def log_prior(self, state, layout: ModelLayout) -> float:
        if self.name == "multivariate_intercept" and self.coefficients == "anchored_iid":
            return process.log_prior(state, layout)
        return _intercept_log_prior(self, state, layout) + _coef_log_prior(self, state, layout)

    def log_likelihood(self, state, layout: ModelLayout) -> float:
        return process.log_likelihood(state, layout)

    def log_density(self, state, layout: ModelLayout) -> float:
        lp = self.log_prior(state, layout)
        if not np.isfinite(lp):
            return lp
        return lp + self.log_likelihood(state, layout)


def _intercept_log_prior(spec, state, layout):
    m = layout.M
    theta_mean = state.theta[layout.region_country]
    if spec.intercept == "mvn":
        eye = np.eye(m)
        return (dist.iw_logpdf(state.sigma_theta, eye, m + 1)
                + dist.iw_logpdf(state.sigma_alpha, eye, m + 1)
                + dist.mvn_logpdf(state.theta, 0.0, state.sigma_theta)
                + dist.mvn_logpdf(state.alpha, theta_mean, state.sigma_alpha))
    s_theta = np.sqrt(np.diag(state.sigma_theta))
    s_alpha = np.sqrt(np.diag(state.sigma_alpha))
    if np.any(s_theta <= 0) or np.any(s_alpha <= 0):
        return -math.inf
    if spec.intercept_sd_prior == "cauchy_normal":
        lp = np.sum(dist.half_cauchy_logpdf(s_theta, COUNTRY_CAUCHY_SCALE))
    else:
        lp = np.sum(dist.half_normal_logpdf(s_theta, INTERCEPT_SD_SCALE))
    lp += np.sum(dist.half_normal_logpdf(s_alpha, INTERCEPT_SD_SCALE))
    lp += np.sum(dist.normal_logpdf(state.theta, 0.0, s_theta))
    lp += np.sum(dist.normal_logpdf(state.alpha, theta_mean, s_alpha))
    return float(lp)


def constrained_rw_logpdf(beta, sd):
    """Log density of a zero-started random walk conditioned on ``sum(beta) == 0``.

    ``beta`` has shape ``(..., K)``; ``sd`` broadcasts over the leading axes.
    """
    beta = np.asarray(beta, dtype=float)
    k = beta.shape[-1]
    dif = difference_matrix(k)
    inc = beta @ dif.T
    cov = np.linalg.inv(dif.T @ dif)
    log_norm = 0.5 * math.log(float(np.ones(k) @ cov @ np.ones(k)))
    sd = np.asarray(sd, dtype=float)
    return (-0.5 * (k - 1) * np.log(2.0 * math.pi * sd ** 2) + log_norm
            - 0.5 * np.sum(inc ** 2, axis=-1) / sd ** 2)


def _coef_log_prior(spec, state, layout):
    h = state.hyper
    m = layout.M
    kind = spec.coefficients
    if kind == "anchored_iid":
        sd = float(h["sigma_delta"])
        if not sd > 0:
            return -math.inf
        mask = np.broadcast_to(layout.coef_mask[:, None, :], state.coef.shape)
        return float(np.sum(dist.normal_logpdf(state.coef[mask], 0.0, sd))
                     + dist.half_normal_logpdf(sd, process.DELTA_SD_PRIOR_SCALE))
    if kind == "anchored_mvn":
        cov = h["sigma_delta_cov"]
        lp = dist.iw_logpdf(cov, np.eye(m), m + 1)
        for p, n in enumerate(layout.n_coef):
            lp += dist.mvn_logpdf(state.coef[p, :, :n].T, 0.0, cov)
        return float(lp)
    if kind in ("ar1_triple_gamma", "ar1_half_normal"):
        sb = np.asarray(h["sigma_beta"], dtype=float)
        if np.any(sb <= 0):
            return -math.inf
        lp = 0.0
        for p, n in enumerate(layout.n_coef):
            lp += float(np.sum(constrained_rw_logpdf(state.coef[p, :, :n], sb)))
        if kind == "ar1_half_normal":
            return lp + float(np.sum(dist.half_normal_logpdf(sb, SIGMA_BETA_PLAIN_SCALE)))
        xi2, kappa2 = np.asarray(h["xi2"]), np.asarray(h["kappa2"])
        a, c, kb2 = float(h["a_xi"]), float(h["c_xi"]), float(h["kappa_b2"])
        lp += float(np.sum(dist.half_normal_logpdf(sb, np.sqrt(xi2))))
        lp += float(np.sum(dist.gamma_logpdf(xi2, a, a * kappa2 / 2.0)))
        lp += float(np.sum(dist.gamma_logpdf(kappa2, c, c / kb2)))
        lp += float(dist.beta_logpdf(2.0 * a, *A_XI_BETA)) + math.log(2.0)
        lp += float(dist.beta_logpdf(2.0 * c, *C_XI_BETA)) + math.log(2.0)
        lp += float(dist.f_logpdf(kb2 / 2.0, 1.0, 1.0)) - math.log(2.0)
        return lp
    if kind == "ar1_mvn":
        cov = h["sigma_beta_cov"]
        chol = dist.cholesky(cov)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        prec = np.linalg.inv(cov)
        lp = dist.iw_logpdf(cov, np.eye(m), m + 1)
        for p, n in enumerate(layout.n_coef):
            dif = difference_matrix(n)
            beta = state.coef[p, :, :n]
            inc = beta @ dif.T
            rcov = np.linalg.inv(dif.T @ dif)
            lp += (-0.5 * m * (n - 1) * math.log(2.0 * math.pi) - 0.5 * (n - 1) * logdet
                   + 0.5 * m * math.log(float(np.ones(n) @ rcov @ np.ones(n)))
                   - 0.5 * float(np.sum((inc.T @ prec) * inc.T)))
        return float(lp)
    raise ConfigError(f"unknown coefficient prior {kind!r}")


_IW = "IW(I_M, M+1)"


def _mvn_intercepts():
    return (
        PriorNode("sigma_theta", _IW),
        PriorNode("sigma_alpha", _IW),
        PriorNode("theta", "MVN(0, sigma_theta)", ("sigma_theta",)),
        PriorNode("alpha", "MVN(theta[c], sigma_alpha)", ("theta", "sigma_alpha")),
    )


def _diag_intercepts(country_prior="N+(0, 2^2)"):
    return (
        PriorNode("sigma_theta", f"diag, sd_m ~ {country_prior}"),
        PriorNode("sigma_alpha", "diag, sd_m ~ N+(0, 2^2)"),
        PriorNode("theta", "N(0, sigma_theta[m,m])", ("sigma_theta",)),
        PriorNode("alpha", "N(theta[c,m], sigma_alpha[m,m])", ("theta", "sigma_alpha")),
    )


def build_multivariate_intercept() -> ModelSpec:
    graph = _mvn_intercepts() + (
        PriorNode("sigma_delta", "N+(0, 2^2)"),
        PriorNode("delta", "N(0, sigma_delta^2)", ("sigma_delta",)),
    )
    return ModelSpec("multivariate_intercept", "mvn", "inverse_wishart", "anchored_iid",
                     "anchored", False, graph).validate()


def build_zero_covariance() -> ModelSpec:
    graph = _diag_intercepts() + (
        PriorNode("sigma_delta", "N+(0, 2^2)"),
        PriorNode("delta", "N(0, sigma_delta^2)", ("sigma_delta",)),
    )
    return ModelSpec("zero_covariance", "diagonal", "half_normal", "anchored_iid",
                     "anchored", False, graph).validate()


def build_multivariate_delta() -> ModelSpec:
    graph = _diag_intercepts() + (
        PriorNode("sigma_delta_cov", _IW),
        PriorNode("delta", "MVN(0, sigma_delta_cov) across methods", ("sigma_delta_cov",)),
    )
    return ModelSpec("multivariate_delta", "diagonal", "half_normal", "anchored_mvn",
                     "anchored", False, graph).validate()


def build_shrinkage(triple_gamma: bool = True) -> ModelSpec:
    """Additive-intercept AR(1) P-spline with triple-gamma shrinkage.

    ``triple_gamma=False`` gives the plain AR(1) comparison model with
    ``sigma_beta ~ N+(0, 2^2)``.
    """
    intercepts = _diag_intercepts(country_prior="C+(0, 1)")
    if triple_gamma:
        graph = intercepts + (
            PriorNode("a_xi", "2 a_xi ~ Beta(5, 10)"),
            PriorNode("c_xi", "2 c_xi ~ Beta(5, 2)"),
            PriorNode("kappa_b2", "kappa_b2 / 2 ~ F(1, 1)"),
            PriorNode("kappa2", "Gamma(c_xi, rate c_xi / kappa_b2)", ("c_xi", "kappa_b2")),
            PriorNode("xi2", "Gamma(a_xi, rate a_xi kappa2 / 2)", ("a_xi", "kappa2")),
            PriorNode("sigma_beta", "N+(0, xi2)", ("xi2",)),
            PriorNode("beta", "AR(1) N(beta[k-1], sigma_beta^2), sum-to-zero", ("sigma_beta",)),
        )
        kind = "ar1_triple_gamma"
    else:
        graph = intercepts + (
            PriorNode("sigma_beta", "N+(0, 2^2)"),
            PriorNode("beta", "AR(1) N(beta[k-1], sigma_beta^2), sum-to-zero", ("sigma_beta",)),
        )
        kind = "ar1_half_normal"
    return ModelSpec("shrinkage", "diagonal", "cauchy_normal", kind, "ar1", True, graph,
                     deterministic=("psi",)).validate()


def build_fully_multivariate() -> ModelSpec:
    graph = _mvn_intercepts() + (
        PriorNode("sigma_beta_cov", _IW),
        PriorNode("beta", "MVN(beta[k-1], sigma_beta_cov) across methods, sum-to-zero",
                  ("sigma_beta_cov",)),
    )
    return ModelSpec("fully_multivariate", "mvn", "inverse_wishart", "ar1_mvn", "ar1", True,
                     graph, deterministic=("psi",)).validate()


MODEL_BUILDERS = {
    "multivariate_intercept": build_multivariate_intercept,
    "multivariate_delta": build_multivariate_delta,
    "zero_covariance": build_zero_covariance,
    "shrinkage": build_shrinkage,
    "fully_multivariate": build_fully_multivariate,
}
MODEL_NAMES = tuple(MODEL_BUILDERS)


def get_model(name) -> ModelSpec:
    """Build a registered variant by name; unknown names list the valid tokens."""
    if isinstance(name, ModelSpec):
        return name
    try:
        return MODEL_BUILDERS[name]()
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; valid models: {', '.join(MODEL_NAMES)}") from None
