"""Metropolis-within-Gibbs sampler for all model variants.

Each sweep updates, in order:

1. the coefficient block ``(alpha, c)`` of every region for one method at a
   time. The likelihood is linear-Gaussian in the block, so the full
   conditional is Gaussian. Its precision is the precomputed data Gram matrix
   plus the conditional prior given the other methods. Sum-to-zero variants
   condition the draw on the constraint by kriging;
2. the intercept hierarchy: conjugate normal/MVN draws for the country means,
   inverse-Wishart draws for full covariances, slice (or auxiliary-variable)
   draws for diagonal SDs;
3. the coefficient hyperparameters: slice draws for scale parameters with
   GIG-shaped conditionals, inverse-Wishart for cross-method covariances,
   conjugate gamma draws and random-walk Metropolis for the remaining
   triple-gamma hyperparameters.

Scalar coefficient scales get a second, interweaved draw in the standardized
parameterisation ``coef = scale * z``: given ``z`` the likelihood is Gaussian
in the scale, so the draw is a truncated normal. This removes the slow mixing
of the centred update when many coefficients are barely informed by data.

Slice widths and Metropolis steps adapt during burn-in only.
"""
from __future__ import annotations

import io
import json
import math
import os
import tempfile
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from . import distributions as dist
from ._kernels import sample_blocks
from .basis import BasisConfig, KnotVector
from .data import Dataset, LogitData, Method, prepare_logit_data
from .errors import ConfigError, DataError, MissingArtifactError
from .layout import ModelLayout, build_layout
from .process import DELTA_SD_PRIOR_SCALE, ParameterState
from .variants import (
    A_XI_BETA, C_XI_BETA, COUNTRY_CAUCHY_SCALE, INTERCEPT_SD_SCALE, SIGMA_BETA_PLAIN_SCALE,
    ModelSpec, build_shrinkage, get_model,
)

INIT_SIGMA_DELTA = 0.1
STATE_FIELDS = ("sigma_theta", "sigma_alpha", "theta", "alpha", "coef")
DEFAULT_STEP_SIZES = {"log_variance": 1.0, "a_xi": 0.5, "c_xi": 0.5}


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 80_000
    burn_in: int = 10_000
    thin: int = 35
    chains: int = 4
    seed: int = 0
    step_sizes: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_STEP_SIZES))

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.chains < 1:
            raise ConfigError("iterations, thin and chains must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError(f"burn_in ({self.burn_in}) must be in [0, iterations={self.iterations})")
        if (self.iterations - self.burn_in) / self.thin < 100:
            raise ConfigError("(iterations - burn_in) / thin must be at least 100 kept draws")

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def make_layout(model, data, basis: BasisConfig = BasisConfig()) -> ModelLayout:
    """Layout for ``model`` from a Dataset, LogitData or an existing layout."""
    spec = get_model(model)
    if isinstance(data, ModelLayout):
        if data.additive != spec.additive:
            raise ConfigError(f"layout parameterisation does not match model {spec.name}")
        return data
    if isinstance(data, Dataset):
        if len(data) == 0:
            raise DataError("empty dataset")
        data = prepare_logit_data(data)
    if not isinstance(data, LogitData):
        raise TypeError(f"unsupported data type {type(data).__name__}")
    if len(data) == 0:
        raise DataError("empty dataset")
    return build_layout(data, spec.additive, basis)


def initialize(model, data, fixed: Mapping | None = None, basis: BasisConfig = BasisConfig()) -> ParameterState:
    """Data-informed starting state.

    ``alpha`` starts at the latest logit observation of its region and method,
    else the mean of those starts within the country, else 0. Rate/spline
    coefficients start at 0, covariance matrices at the identity and
    ``sigma_delta`` at 0.1. Entries of ``fixed`` override the defaults.
    """
    spec = get_model(model)
    layout = make_layout(spec, data, basis)
    P, M, C = layout.P, layout.M, layout.C
    alpha = np.full((P, M), np.nan)
    latest = np.full((P, M), -np.inf)
    for i in range(layout.n_obs):
        p, m, t = layout.obs_region[i], layout.obs_method[i], layout.obs_time[i]
        if t > latest[p, m]:
            latest[p, m] = t
            alpha[p, m] = layout.y[i]
    theta = np.zeros((C, M))
    for c in range(C):
        rows = alpha[layout.region_country == c]
        with np.errstate(invalid="ignore"):
            counts = np.sum(~np.isnan(rows), axis=0)
            means = np.where(counts > 0, np.nansum(rows, axis=0) / np.maximum(counts, 1), 0.0)
        theta[c] = means
    missing = np.isnan(alpha)
    alpha[missing] = theta[layout.region_country][missing]
    eye = np.eye(M)
    hyper = {}
    kind = spec.coefficients
    if kind == "anchored_iid":
        hyper["sigma_delta"] = np.array(INIT_SIGMA_DELTA)
    elif kind == "anchored_mvn":
        hyper["sigma_delta_cov"] = eye.copy()
    elif kind == "ar1_mvn":
        hyper["sigma_beta_cov"] = eye.copy()
    else:
        hyper["sigma_beta"] = np.full(M, INIT_SIGMA_DELTA)
        if kind == "ar1_triple_gamma":
            hyper.update(xi2=np.ones(M), kappa2=np.ones(M), kappa_b2=np.array(2.0),
                         a_xi=np.array(1.0 / 6.0), c_xi=np.array(5.0 / 14.0), _f_aux=np.array(1.0))
    if spec.intercept_sd_prior == "cauchy_normal":
        hyper["_hc_aux"] = np.ones(M)
    state = ParameterState(eye.copy(), eye.copy(), theta, alpha,
                           np.zeros((P, M, layout.D - 1)), hyper)
    _apply_fixed(state, fixed or {})
    return state


def _apply_fixed(state: ParameterState, fixed: Mapping):
    for name, value in fixed.items():
        value = np.array(value, dtype=float, copy=True)
        if name in STATE_FIELDS:
            if getattr(state, name).shape != value.shape:
                raise ConfigError(f"fixed value for {name} has shape {value.shape}, "
                                  f"expected {getattr(state, name).shape}")
            setattr(state, name, value)
        elif name in state.hyper:
            state.hyper[name] = value.reshape(np.shape(state.hyper[name]))
        else:
            raise ConfigError(f"cannot fix unknown parameter {name!r}")


def check_initial_state(spec: ModelSpec, state: ParameterState, layout: ModelLayout):
    for name, arr in state.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite initial value for parameter {name}")
    try:
        lp = spec.log_prior(state, layout)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"initial state invalid: {exc}") from None
    if not np.isfinite(lp):
        raise DataError("non-finite log prior at initialization")
    if not np.isfinite(spec.log_likelihood(state, layout)):
        raise DataError("non-finite log likelihood at initialization (check y / se)")


class GibbsChain:
    """State and update sweep of one chain; owns its RNG stream."""

    def __init__(self, spec: ModelSpec, layout: ModelLayout, state: ParameterState,
                 rng: np.random.Generator, step_sizes: Mapping[str, float], fixed=()):
        self.spec = spec
        self.layout = layout
        self.state = state
        self.rng = rng
        self.fixed = frozenset(fixed)
        self.G, self.h = layout.gram()
        P, D = layout.P, layout.D
        self.mask = layout.coef_mask
        self.pad = np.zeros((P, D, D))
        for p, n in enumerate(layout.n_coef):
            idx = np.arange(1 + n, D)
            self.pad[p, idx, idx] = 1.0
        self.struct = layout.structure_matrices()
        self.constraint = None
        if spec.sum_to_zero:
            self.constraint = np.zeros((P, D))
            self.constraint[:, 1:] = self.mask
        if spec.additive:
            self.dif = layout.difference_operators()
        self.rows = layout.obs_rows()
        self.obs_w = 1.0 / layout.se ** 2
        self.onehot = np.zeros((layout.C, P))
        self.onehot[layout.region_country, np.arange(P)] = 1.0
        self.n_country = layout.country_sizes.astype(float)
        self.default_width = float(step_sizes.get("log_variance", 1.0))
        self.widths: dict[str, float] = {}
        self.mh_step = {k: float(step_sizes.get(k, 0.5)) for k in ("a_xi", "c_xi")}
        self.mh_tries = {k: 0 for k in self.mh_step}
        self.mh_accepts = {k: 0 for k in self.mh_step}
        self.n_adapt = 0

    # -- coefficient blocks -------------------------------------------------
    def _alpha_prior(self, m, prec_alpha):
        st, rc = self.state, self.layout.region_country
        if prec_alpha is not None:
            dev = st.alpha - st.theta[rc]
            lam = prec_alpha[m, m]
            mu = st.theta[rc, m] - (dev @ prec_alpha[:, m] - dev[:, m] * lam) / lam
            return mu, np.full(self.layout.P, lam)
        return st.theta[rc, m], np.full(self.layout.P, 1.0 / st.sigma_alpha[m, m])

    def _coef_prior(self, m, prec_coef):
        st, kind, P = self.state, self.spec.coefficients, self.layout.P
        if kind == "anchored_iid":
            return np.full(P, 1.0 / st.hyper["sigma_delta"] ** 2), None
        if kind in ("ar1_triple_gamma", "ar1_half_normal"):
            return np.full(P, 1.0 / st.hyper["sigma_beta"][m] ** 2), None
        lam = prec_coef[m]
        if kind == "anchored_mvn":
            lin = -(np.einsum("j,pjk->pk", lam, st.coef) - lam[m] * st.coef[:, m])
            return np.full(P, lam[m]), lin * self.mask
        # ar1_mvn: condition this method's increments on the others'
        inc = np.einsum("pkl,pjl->pjk", self.dif, st.coef)
        w = -(np.einsum("j,pjk->pk", lam, inc) - lam[m] * inc[:, m])
        return np.full(P, lam[m]), np.einsum("plk,pl->pk", self.dif, w)

    def update_blocks(self):
        st, layout = self.state, self.layout
        prec_alpha = np.linalg.inv(st.sigma_alpha) if self.spec.intercept == "mvn" else None
        prec_coef = None
        if self.spec.coefficients == "anchored_mvn":
            prec_coef = np.linalg.inv(st.hyper["sigma_delta_cov"])
        elif self.spec.coefficients == "ar1_mvn":
            prec_coef = np.linalg.inv(st.hyper["sigma_beta_cov"])
        for m in range(layout.M):
            mu, lam = self._alpha_prior(m, prec_alpha)
            if "alpha" in self.fixed:
                continue
            if "coef" in self.fixed:
                q = self.G[:, m, 0, 0] + lam
                r = self.h[:, m, 0] - np.einsum("pd,pd->p", self.G[:, m, 0, 1:], st.coef[:, m]) + lam * mu
                st.alpha[:, m] = r / q + self.rng.standard_normal(layout.P) / np.sqrt(q)
                continue
            cq, cr = self._coef_prior(m, prec_coef)
            q = self.G[:, m] + self.pad
            q[:, 0, 0] += lam
            q[:, 1:, 1:] += cq[:, None, None] * self.struct
            r = self.h[:, m].copy()
            r[:, 0] += lam * mu
            if cr is not None:
                r[:, 1:] += cr
            z = self.rng.standard_normal((layout.P, layout.D))
            x = sample_blocks(q, r, z, self.constraint)
            st.alpha[:, m] = x[:, 0]
            st.coef[:, m] = x[:, 1:] * self.mask

    # -- scale parameters ---------------------------------------------------
    def _slice_variance(self, key, v, lam, chi, psi, adapt):
        w = self.widths.get(key, self.default_width)
        u0 = math.log(v)
        u1 = dist.sample_log_variance(u0, lam, chi, psi, w, self.rng)
        if adapt:
            self.widths[key] = min(max(0.9 * w + 0.3 * abs(u1 - u0), 0.05), 10.0)
        return math.exp(u1)

    def _half_normal_variance(self, key, v, n, ss, prior_scale, adapt):
        """Variance whose SD has a ``N+(0, prior_scale^2)`` prior, given ``n`` normal terms."""
        return self._slice_variance(key, v, -0.5 * (n + 1), ss, 1.0 / prior_scale ** 2, adapt)

    def _interweave_scale(self, scale, prior_scale, method=None):
        """Redraw a scale with ``z = coef / scale`` held fixed; rescales ``coef`` in place.

        The scale has a ``N+(0, prior_scale^2)`` prior. ``method`` restricts the
        scale to one method's coefficients.
        """
        st, lay = self.state, self.layout
        if scale <= 0.0 or "coef" in self.fixed:
            return scale
        z = st.coef / scale if method is None else st.coef[:, method] / scale
        sel = slice(None) if method is None else lay.obs_method == method
        r, m = lay.obs_region[sel], lay.obs_method[sel]
        rows = self.rows[sel]
        zr = z[r, m] if method is None else z[r]
        b = np.einsum("nd,nd->n", rows[:, 1:], zr)
        resid = lay.y[sel] - rows[:, 0] * st.alpha[r, m]
        w = self.obs_w[sel]
        prec = 1.0 / prior_scale ** 2 + float(np.sum(w * b * b))
        mean = float(np.sum(w * b * resid)) / prec
        new = dist.sample_positive_normal(mean, 1.0 / math.sqrt(prec), self.rng)
        if method is None:
            st.coef = z * new
        else:
            st.coef[:, method] = z * new
        return new

    # -- intercept hierarchy ------------------------------------------------
    def update_intercepts(self, adapt):
        st, layout, rng = self.state, self.layout, self.rng
        rc, M, C, P = layout.region_country, layout.M, layout.C, layout.P
        alpha_sum = self.onehot @ st.alpha
        if self.spec.intercept == "mvn":
            if "theta" not in self.fixed:
                lt = np.linalg.inv(st.sigma_theta)
                la = np.linalg.inv(st.sigma_alpha)
                q = lt[None] + self.n_country[:, None, None] * la[None]
                r = alpha_sum @ la
                st.theta = sample_blocks(q, r, rng.standard_normal((C, M)))
            if "sigma_alpha" not in self.fixed:
                dev = st.alpha - st.theta[rc]
                st.sigma_alpha = dist.sample_inverse_wishart(np.eye(M) + dev.T @ dev, M + 1 + P, rng)
            if "sigma_theta" not in self.fixed:
                st.sigma_theta = dist.sample_inverse_wishart(np.eye(M) + st.theta.T @ st.theta,
                                                            M + 1 + C, rng)
            return
        va = np.diag(st.sigma_alpha).copy()
        vt = np.diag(st.sigma_theta).copy()
        if "theta" not in self.fixed:
            q = 1.0 / vt[None, :] + self.n_country[:, None] / va[None, :]
            mean = (alpha_sum / va[None, :]) / q
            st.theta = mean + rng.standard_normal((C, M)) / np.sqrt(q)
        if "sigma_alpha" not in self.fixed:
            dev = st.alpha - st.theta[rc]
            ss = np.sum(dev ** 2, axis=0)
            for m in range(M):
                va[m] = self._half_normal_variance(f"sigma_alpha[{m}]", va[m], P, ss[m],
                                                   INTERCEPT_SD_SCALE, adapt)
            st.sigma_alpha = np.diag(va)
        if "sigma_theta" not in self.fixed:
            ss = np.sum(st.theta ** 2, axis=0)
            if self.spec.intercept_sd_prior == "cauchy_normal":
                aux = st.hyper["_hc_aux"]
                for m in range(M):
                    vt[m] = 1.0 / rng.gamma(0.5 * (C + 1), 1.0 / (1.0 / aux[m] + 0.5 * ss[m]))
                    aux[m] = 1.0 / rng.gamma(1.0, 1.0 / (1.0 / COUNTRY_CAUCHY_SCALE ** 2 + 1.0 / vt[m]))
            else:
                for m in range(M):
                    vt[m] = self._half_normal_variance(f"sigma_theta[{m}]", vt[m], C, ss[m],
                                                       INTERCEPT_SD_SCALE, adapt)
            st.sigma_theta = np.diag(vt)

    # -- coefficient hyperparameters ---------------------------------------
    def update_coef_hyper(self, adapt):
        st, layout, rng, h = self.state, self.layout, self.rng, self.state.hyper
        kind, M = self.spec.coefficients, layout.M
        if kind == "anchored_iid":
            if "sigma_delta" in self.fixed:
                return
            n = M * int(layout.n_coef.sum())
            v = self._half_normal_variance("sigma_delta", float(h["sigma_delta"]) ** 2, n,
                                           float(np.sum(st.coef ** 2)), DELTA_SD_PRIOR_SCALE, adapt)
            h["sigma_delta"] = np.array(self._interweave_scale(math.sqrt(v), DELTA_SD_PRIOR_SCALE))
            return
        if kind == "anchored_mvn":
            if "sigma_delta_cov" not in self.fixed:
                ss = np.einsum("pmk,pjk->mj", st.coef, st.coef)
                h["sigma_delta_cov"] = dist.sample_inverse_wishart(
                    np.eye(M) + ss, M + 1 + int(layout.n_coef.sum()), rng)
            return
        inc = np.einsum("pkl,pjl->pjk", self.dif, st.coef)
        n_free = int(np.sum(layout.n_coef - 1))
        if kind == "ar1_mvn":
            if "sigma_beta_cov" not in self.fixed:
                ss = np.einsum("pmk,pjk->mj", inc, inc)
                h["sigma_beta_cov"] = dist.sample_inverse_wishart(np.eye(M) + ss, M + 1 + n_free, rng)
            return
        ss = np.sum(inc ** 2, axis=(0, 2))
        sb = h["sigma_beta"]
        if kind == "ar1_half_normal":
            if "sigma_beta" not in self.fixed:
                for m in range(M):
                    sb[m] = math.sqrt(self._half_normal_variance(
                        f"sigma_beta[{m}]", sb[m] ** 2, n_free, ss[m], SIGMA_BETA_PLAIN_SCALE, adapt))
                    sb[m] = self._interweave_scale(sb[m], SIGMA_BETA_PLAIN_SCALE, m)
            return
        self._update_triple_gamma(ss, n_free, adapt)

    def _update_triple_gamma(self, ss, n_free, adapt):
        h, rng, M = self.state.hyper, self.rng, self.layout.M
        sb, xi2, kappa2 = h["sigma_beta"], h["xi2"], h["kappa2"]
        a, c = float(h["a_xi"]), float(h["c_xi"])
        for m in range(M):
            if "sigma_beta" not in self.fixed:
                sb[m] = math.sqrt(self._slice_variance(f"sigma_beta[{m}]", sb[m] ** 2, -0.5 * (n_free + 1),
                                                       ss[m], 1.0 / xi2[m], adapt))
                sb[m] = self._interweave_scale(sb[m], math.sqrt(xi2[m]), m)
            xi2[m] = self._slice_variance(f"xi2[{m}]", xi2[m], a - 1.5, sb[m] ** 2,
                                          a * kappa2[m], adapt)
            kappa2[m] = rng.gamma(c + a, 1.0 / (c / float(h["kappa_b2"]) + 0.5 * a * xi2[m]))
        d = float(h["_f_aux"])
        w = self._slice_variance("kappa_b2", 0.5 * float(h["kappa_b2"]), -0.5 - M * c,
                                 c * float(np.sum(kappa2)), 2.0 * d, adapt)
        h["kappa_b2"] = np.array(2.0 * w)
        h["_f_aux"] = np.array(rng.gamma(1.0, 1.0 / (1.0 + w)))
        kb2 = float(h["kappa_b2"])

        def log_target_a(a_):
            return (float(np.sum(dist.gamma_logpdf(xi2, a_, 0.5 * a_ * kappa2)))
                    + A_XI_BETA[0] * math.log(2 * a_) + A_XI_BETA[1] * math.log1p(-2 * a_))

        def log_target_c(c_):
            return (float(np.sum(dist.gamma_logpdf(kappa2, c_, c_ / kb2)))
                    + C_XI_BETA[0] * math.log(2 * c_) + C_XI_BETA[1] * math.log1p(-2 * c_))

        h["a_xi"] = np.array(self._mh_half_unit("a_xi", a, log_target_a, adapt))
        h["c_xi"] = np.array(self._mh_half_unit("c_xi", c, log_target_c, adapt))

    def _mh_half_unit(self, key, x, log_target, adapt):
        """Random-walk Metropolis on ``logit(2 x)`` for a parameter in (0, 1/2).

        ``log_target`` must already include the Jacobian of the logit map.
        """
        if key in self.fixed:
            return x
        eta = math.log(2 * x / (1 - 2 * x))
        eta_new = eta + self.mh_step[key] * self.rng.standard_normal()
        x_new = 0.5 / (1.0 + math.exp(-eta_new))
        accept = False
        if 0.0 < x_new < 0.5:
            log_ratio = log_target(x_new) - log_target(x)
            accept = math.log1p(-self.rng.random()) < log_ratio
        self.mh_tries[key] += 1
        if accept:
            self.mh_accepts[key] += 1
            x = x_new
        if adapt:
            gain = 1.0 / math.sqrt(self.n_adapt + 1.0)
            self.mh_step[key] *= math.exp(gain * ((1.0 if accept else 0.0) - 0.44))
        return x

    def sweep(self, adapt=False):
        self.update_blocks()
        self.update_intercepts(adapt)
        self.update_coef_hyper(adapt)
        if adapt:
            self.n_adapt += 1

    def reset_counters(self):
        self.mh_tries = {k: 0 for k in self.mh_tries}
        self.mh_accepts = {k: 0 for k in self.mh_accepts}

    def acceptance(self) -> dict:
        out = {}
        for k, n in self.mh_tries.items():
            if n:
                out[k] = self.mh_accepts[k] / n
        return out


def _run_one_chain(spec, layout, init_state, cfg, chain, fixed):
    seed = cfg.seed + chain
    rng = np.random.default_rng(seed)
    runner = GibbsChain(spec, layout, init_state.copy(), rng, cfg.step_sizes, fixed)
    keys = [k for k in runner.state.arrays() if not k.startswith("_")]
    out = {k: np.empty((cfg.kept,) + np.shape(runner.state.arrays()[k])) for k in keys}
    kept = 0
    for it in range(1, cfg.iterations + 1):
        burning = it <= cfg.burn_in
        runner.sweep(adapt=burning)
        if it == cfg.burn_in:
            runner.reset_counters()
        if not burning and (it - cfg.burn_in) % cfg.thin == 0:
            arrays = runner.state.arrays()
            for k in keys:
                out[k][kept] = arrays[k]
            kept += 1
    return out, runner.acceptance(), dict(runner.widths, **runner.mh_step)


def run_chains(model, train, cfg: SamplerConfig = SamplerConfig(), *, basis: BasisConfig = BasisConfig(),
               fixed: Mapping | None = None, n_jobs: int = 1) -> "DrawStore":
    """Run ``cfg.chains`` independent chains (seeded ``cfg.seed + chain``).

    Parameters
    ----------
    model : str or ModelSpec
    train : Dataset, LogitData or ModelLayout
    cfg : SamplerConfig
    fixed : mapping, optional
        Parameters held at the given values (e.g. ``{"sigma_delta": 0.3}``).
    n_jobs : int
        Run chains in that many worker processes; results are identical to
        the sequential run.
    """
    spec = get_model(model)
    layout = make_layout(spec, train, basis)
    fixed = dict(fixed or {})
    init = initialize(spec, layout, fixed)
    check_initial_state(spec, init, layout)
    args = [(spec, layout, init, cfg, c, tuple(fixed)) for c in range(cfg.chains)]
    if n_jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one_chain, *zip(*args)))
    else:
        results = [_run_one_chain(*a) for a in args]
    draws = {k: np.stack([r[0][k] for r in results]) for k in results[0][0]}
    acceptance = {}
    for k in results[0][1]:
        acceptance[k] = float(np.mean([r[1][k] for r in results]))
    return DrawStore(spec, layout, draws, cfg, tuple(cfg.seed + c for c in range(cfg.chains)),
                     acceptance, [r[2] for r in results])


@dataclass
class DrawStore:
    """Thinned post-burn-in draws, each array shaped ``(chains, kept, ...)``.

    Latent trajectories are not stored; :meth:`psi` rebuilds them exactly from
    the coefficient draws.
    """

    model: ModelSpec
    layout: ModelLayout
    draws: dict
    config: SamplerConfig
    seeds: tuple
    acceptance: dict = field(default_factory=dict)
    step_sizes: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws["alpha"].shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws["alpha"].shape[1]

    def psi(self) -> np.ndarray:
        """Latent logit trajectories, ``(chains, kept, P, M, T)``."""
        return self.layout.psi(self.draws["alpha"], self.draws["coef"])

    def beta(self) -> np.ndarray:
        return self.layout.beta(self.draws["alpha"], self.draws["coef"])

    def parameter(self, name: str) -> np.ndarray:
        """Draws of one scalar parameter as ``(chains, kept)``.

        ``name`` is an array key with an optional index, e.g. ``"sigma_delta"``
        or ``"alpha[3,1]"``.
        """
        base, _, rest = name.partition("[")
        if base not in self.draws:
            raise KeyError(f"unknown parameter {name!r}")
        arr = self.draws[base]
        if rest:
            idx = tuple(int(i) for i in rest.rstrip("]").split(","))
            arr = arr[(slice(None), slice(None)) + idx]
        if arr.ndim != 2:
            raise KeyError(f"{name!r} is not a scalar parameter; add an index")
        return arr

    def scalar_names(self) -> list:
        """Names of every scalar parameter (padding and duplicate symmetric entries skipped)."""
        names = []
        for key, arr in self.draws.items():
            shape = arr.shape[2:]
            if key == "coef":
                for p, n in enumerate(self.layout.n_coef):
                    names += [f"coef[{p},{m},{k}]" for m in range(shape[1]) for k in range(n)]
                continue
            if key.startswith("sigma") and len(shape) == 2:
                diag_only = key in ("sigma_theta", "sigma_alpha") and self.model.intercept == "diagonal"
                names += [f"{key}[{i},{j}]" for i in range(shape[0]) for j in range(i, shape[1])
                          if not diag_only or i == j]
                continue
            if not shape:
                names.append(key)
            else:
                names += [f"{key}[{','.join(map(str, ix))}]" for ix in np.ndindex(*shape)]
        return names

    # -- persistence ------------------------------------------------------
    def _meta(self) -> dict:
        spec = self.model
        return {
            "model": spec.name,
            "coefficients": spec.coefficients,
            "config": {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in asdict(self.config).items()},
            "seeds": list(self.seeds),
            "acceptance": self.acceptance,
            "step_sizes": self.step_sizes,
            "regions": list(self.layout.regions),
            "countries": list(self.layout.countries),
            "methods": [m.value for m in self.layout.methods],
            "additive": self.layout.additive,
            "degree": self.layout.knots[0].degree,
        }

    def _layout_arrays(self) -> dict:
        lay = self.layout
        nk = max(len(k.interior_knots) for k in lay.knots)
        knots = np.full((lay.P, nk), np.nan)
        for p, kv in enumerate(lay.knots):
            knots[p, : len(kv.interior_knots)] = kv.interior_knots
        return {
            "layout__region_country": lay.region_country, "layout__grid": lay.grid,
            "layout__knots": knots,
            "layout__k_star": np.array([k.k_star_index for k in lay.knots]),
            "layout__n_basis": lay.n_basis, "layout__n_coef": lay.n_coef,
            "layout__basis": lay.basis, "layout__design": lay.design,
            "layout__obs_region": lay.obs_region, "layout__obs_method": lay.obs_method,
            "layout__obs_time": lay.obs_time, "layout__y": lay.y, "layout__se": lay.se,
        }

    def save(self, directory, fmt: str = "npz") -> Path:
        """Write the draws to ``directory`` atomically.

        ``fmt="npz"`` writes ``draws.npz``; ``fmt="csv"`` writes a long
        ``draws.csv`` (chain, draw, parameter, value) plus ``layout.npz``.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = np.array(json.dumps(self._meta()))
        if fmt == "npz":
            arrays = {f"draw__{k}": v for k, v in self.draws.items()}
            arrays.update(self._layout_arrays(), meta=meta)
            return atomic_write(directory / "draws.npz", lambda f: write_npz(f, arrays), binary=True)
        if fmt != "csv":
            raise ConfigError(f"unknown draw format {fmt!r}; use npz or csv")
        arrays = dict(self._layout_arrays(), meta=meta)
        atomic_write(directory / "layout.npz", lambda f: write_npz(f, arrays), binary=True)
        frames = []
        for name in self.scalar_names():
            vals = self.parameter(name)
            frames.append(pd.DataFrame({
                "chain": np.repeat(np.arange(vals.shape[0]), vals.shape[1]),
                "draw": np.tile(np.arange(vals.shape[1]), vals.shape[0]),
                "parameter": name,
                "value": vals.ravel(),
            }))
        table = pd.concat(frames, ignore_index=True)
        return atomic_write(directory / "draws.csv",
                            lambda f: table.to_csv(f, index=False, float_format="%.17g"))

    @classmethod
    def load(cls, directory) -> "DrawStore":
        directory = Path(directory)
        npz, csv = directory / "draws.npz", directory / "draws.csv"
        if npz.exists():
            src = np.load(npz, allow_pickle=False)
        elif csv.exists() and (directory / "layout.npz").exists():
            src = np.load(directory / "layout.npz", allow_pickle=False)
        else:
            raise MissingArtifactError(f"no draws found in {directory}")
        meta = json.loads(str(src["meta"]))
        spec = (build_shrinkage(triple_gamma=False)
                if meta["coefficients"] == "ar1_half_normal" else get_model(meta["model"]))
        layout = _layout_from_arrays(src, meta)
        if npz.exists():
            draws = {k[len("draw__"):]: src[k] for k in src.files if k.startswith("draw__")}
        else:
            draws = _draws_from_csv(csv, layout, spec, meta)
        cfg_d = dict(meta["config"])
        cfg = SamplerConfig(**cfg_d)
        return cls(spec, layout, draws, cfg, tuple(meta["seeds"]), meta["acceptance"], meta["step_sizes"])


def _layout_from_arrays(src, meta) -> ModelLayout:
    g = lambda k: src[f"layout__{k}"]
    degree = int(meta["degree"])
    knots = tuple(
        KnotVector(tuple(float(v) for v in row[~np.isnan(row)]), int(ks), degree)
        for row, ks in zip(g("knots"), g("k_star"))
    )
    return ModelLayout(
        countries=tuple(meta["countries"]), regions=tuple(meta["regions"]),
        region_country=g("region_country"), methods=tuple(Method(m) for m in meta["methods"]),
        grid=g("grid"), knots=knots, n_basis=g("n_basis"), n_coef=g("n_coef"),
        additive=bool(meta["additive"]), basis=g("basis"), design=g("design"),
        obs_region=g("obs_region"), obs_method=g("obs_method"), obs_time=g("obs_time"),
        y=g("y"), se=g("se"),
    )


def _draws_from_csv(path, layout, spec, meta):
    table = pd.read_csv(path, float_precision="round_trip")
    n_chains = int(table["chain"].max()) + 1
    n_draws = int(table["draw"].max()) + 1
    M, P, C = layout.M, layout.P, layout.C
    shapes = {"sigma_theta": (M, M), "sigma_alpha": (M, M), "theta": (C, M), "alpha": (P, M),
              "coef": (P, M, layout.D - 1), "sigma_delta": (), "sigma_delta_cov": (M, M),
              "sigma_beta_cov": (M, M), "sigma_beta": (M,), "xi2": (M,), "kappa2": (M,),
              "kappa_b2": (), "a_xi": (), "c_xi": ()}
    draws = {}
    for name, grp in table.groupby("parameter", sort=False):
        base, _, rest = name.partition("[")
        if base not in draws:
            draws[base] = np.zeros((n_chains, n_draws) + shapes[base])
        vals = np.zeros((n_chains, n_draws))
        vals[grp["chain"].to_numpy(), grp["draw"].to_numpy()] = grp["value"].to_numpy()
        if rest:
            idx = tuple(int(i) for i in rest.rstrip("]").split(","))
            draws[base][(slice(None), slice(None)) + idx] = vals
            if base.startswith("sigma") and len(idx) == 2:
                draws[base][:, :, idx[1], idx[0]] = vals
        else:
            draws[base][:] = vals
    return draws


def write_npz(fileobj, arrays: Mapping[str, np.ndarray]):
    """Compressed ``.npz`` with fixed entry timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(fileobj, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def atomic_write(path, writer, binary=False) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w", newline=None if binary else "") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
