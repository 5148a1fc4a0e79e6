"""Synthetic data from the generative model and brute-force reference samplers.

Used as test oracles: datasets with known truth, exact prior draws for
simulation-based calibration, and a plain random-walk Metropolis sampler over
the full joint posterior to check the Gibbs sampler against.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import stats
from scipy.special import expit

from . import distributions as dist
from .basis import BasisConfig
from .data import DEFAULT_WINDOW, Dataset, LogitData, Method, Observation
from .diagnostics import ess_mean
from .layout import ModelLayout, build_layout
from .process import DELTA_SD_PRIOR_SCALE, ParameterState
from .sampler import (
    STATE_FIELDS, SamplerConfig, _apply_fixed, atomic_write, check_initial_state, initialize, make_layout,
    run_chains,
)
from .variants import (
    A_XI_BETA, C_XI_BETA, COUNTRY_CAUCHY_SCALE, INTERCEPT_SD_SCALE, SIGMA_BETA_PLAIN_SCALE,
    ModelSpec, get_model,
)

DESK_METHODS = (Method.STERILIZATION, Method.PILL)
DESK_SURVEY_YEARS = (2000, 2005, 2010, 2015)
DESK_FIXED = {
    "sigma_theta": [[0.5, 0.2], [0.2, 0.5]],
    "sigma_alpha": [[0.2, 0.12], [0.12, 0.2]],
    "sigma_delta": 0.15,
}


@dataclass(frozen=True)
class SimulationTruth:
    """Everything needed to generate one synthetic dataset.

    ``fixed`` holds parameter values (e.g. ``sigma_alpha``, ``sigma_delta``,
    ``coef``); anything not fixed is drawn from its prior. ``anchor_year``
    overrides the knot anchor of every region (default: its last survey year).
    """

    n_countries: int = 3
    regions_per_country: int = 4
    methods: tuple = DESK_METHODS
    survey_years: tuple = DESK_SURVEY_YEARS
    se_logit: float = 0.2
    time_window: tuple = DEFAULT_WINDOW
    model: str = "multivariate_intercept"
    fixed: Mapping = field(default_factory=lambda: dict(DESK_FIXED))
    anchor_year: int | None = None
    basis: BasisConfig = BasisConfig()
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "n_countries": self.n_countries, "regions_per_country": self.regions_per_country,
            "methods": [Method.parse(m).value for m in self.methods],
            "survey_years": list(self.survey_years), "se_logit": self.se_logit,
            "time_window": list(self.time_window), "model": self.model,
            "fixed": {k: np.asarray(v).tolist() for k, v in self.fixed.items()},
            "anchor_year": self.anchor_year,
            "basis": {"degree": self.basis.degree, "spacing": self.basis.spacing},
            "seed": self.seed,
        }


def desk_truth(seed: int = 0, **overrides) -> SimulationTruth:
    """Default desk-scale scenario: 3 countries x 4 regions x 2 methods x 4 surveys."""
    return SimulationTruth(seed=seed, **overrides)


@dataclass
class SimulationResult:
    dataset: Dataset
    logit_data: LogitData
    layout: ModelLayout
    state: ParameterState
    psi: np.ndarray       # (P, M, T) latent truth on the annual grid


def _design(truth: SimulationTruth):
    methods = tuple(Method.parse(m) for m in truth.methods)
    region_index = {}
    for c in range(truth.n_countries):
        for r in range(truth.regions_per_country):
            region_index[f"c{c}_r{r}"] = f"c{c}"
    cells = [(reg, k, int(y)) for reg in region_index for k in range(len(methods))
             for y in truth.survey_years]
    last = max(truth.survey_years) if truth.anchor_year is None else truth.anchor_year
    data = LogitData(
        region_index=region_index, methods=methods, time_window=tuple(truth.time_window),
        anchor_year={reg: int(last) for reg in region_index},
        region=np.array([c[0] for c in cells], dtype=object),
        method=np.array([c[1] for c in cells], dtype=int),
        year=np.array([c[2] for c in cells], dtype=int),
        y=np.zeros(len(cells)), se=np.full(len(cells), float(truth.se_logit)),
        observed=frozenset(region_index),
    )
    return data


def _positive_normal_sd(scale, rng, size=None):
    return np.abs(rng.normal(0.0, scale, size))


def _constrained_rw(n, sd, rng):
    """AR(1) random walk started at ``N(0, sd^2)`` and conditioned to sum to zero."""
    dif = np.eye(n) - np.eye(n, k=-1)
    e = rng.standard_normal(n) * sd
    beta = np.cumsum(e)
    cov_dir = np.linalg.solve(dif.T @ dif, np.ones(n))
    return beta - cov_dir * beta.sum() / cov_dir.sum()


def sample_prior(model, layout: ModelLayout, rng: np.random.Generator,
                 fixed: Mapping | None = None) -> ParameterState:
    """Exact joint prior draw of every parameter (values in ``fixed`` are conditioned on)."""
    spec = get_model(model)
    fixed = dict(fixed or {})
    M, C, P = layout.M, layout.C, layout.P
    eye = np.eye(M)

    def pick(name, draw):
        return np.array(fixed[name], dtype=float) if name in fixed else draw()

    hyper = {}
    if spec.intercept == "mvn":
        sig_t = pick("sigma_theta", lambda: dist.sample_inverse_wishart(eye, M + 1, rng))
        sig_a = pick("sigma_alpha", lambda: dist.sample_inverse_wishart(eye, M + 1, rng))
    else:
        if spec.intercept_sd_prior == "cauchy_normal":
            sig_t = pick("sigma_theta",
                         lambda: np.diag((COUNTRY_CAUCHY_SCALE * rng.standard_cauchy(M)) ** 2))
            hyper["_hc_aux"] = 1.0 / rng.gamma(
                1.0, 1.0 / (1.0 / COUNTRY_CAUCHY_SCALE ** 2 + 1.0 / np.diag(sig_t)))
        else:
            sig_t = pick("sigma_theta", lambda: np.diag(_positive_normal_sd(INTERCEPT_SD_SCALE, rng, M) ** 2))
        sig_a = pick("sigma_alpha", lambda: np.diag(_positive_normal_sd(INTERCEPT_SD_SCALE, rng, M) ** 2))
    theta = pick("theta", lambda: rng.multivariate_normal(np.zeros(M), sig_t, size=C, method="cholesky"))
    alpha = pick("alpha", lambda: theta[layout.region_country]
                 + rng.multivariate_normal(np.zeros(M), sig_a, size=P, method="cholesky"))
    coef = np.zeros((P, M, layout.D - 1))
    kind = spec.coefficients
    if kind == "anchored_iid":
        sd = float(pick("sigma_delta", lambda: _positive_normal_sd(DELTA_SD_PRIOR_SCALE, rng)))
        hyper["sigma_delta"] = np.array(sd)
        for p, n in enumerate(layout.n_coef):
            coef[p, :, :n] = rng.normal(0.0, sd, (M, n))
    elif kind in ("anchored_mvn", "ar1_mvn"):
        key = "sigma_delta_cov" if kind == "anchored_mvn" else "sigma_beta_cov"
        cov = pick(key, lambda: dist.sample_inverse_wishart(eye, M + 1, rng))
        hyper[key] = cov
        chol = np.linalg.cholesky(cov)
        for p, n in enumerate(layout.n_coef):
            if kind == "anchored_mvn":
                coef[p, :, :n] = chol @ rng.standard_normal((M, n))
            else:
                e = chol @ rng.standard_normal((M, n))
                beta = np.cumsum(e, axis=1)
                dif = np.eye(n) - np.eye(n, k=-1)
                u = np.linalg.solve(dif.T @ dif, np.ones(n))
                coef[p, :, :n] = beta - np.outer(beta.sum(axis=1), u) / u.sum()
    else:
        if kind == "ar1_triple_gamma":
            a = float(pick("a_xi", lambda: 0.5 * rng.beta(*A_XI_BETA)))
            c = float(pick("c_xi", lambda: 0.5 * rng.beta(*C_XI_BETA)))
            w = 0.5 * float(pick("kappa_b2", lambda: 2.0 * rng.chisquare(1) / rng.chisquare(1)))
            kb2 = 2.0 * w
            kappa2 = pick("kappa2", lambda: rng.gamma(c, kb2 / c, M))
            xi2 = pick("xi2", lambda: rng.gamma(a, 2.0 / (a * kappa2)))
            sb = pick("sigma_beta", lambda: _positive_normal_sd(np.sqrt(xi2), rng))
            hyper.update(xi2=np.asarray(xi2, float), kappa2=np.asarray(kappa2, float),
                         kappa_b2=np.array(kb2), a_xi=np.array(a), c_xi=np.array(c),
                         _f_aux=np.array(rng.gamma(1.0, 1.0 / (1.0 + w))))
        else:
            sb = pick("sigma_beta", lambda: _positive_normal_sd(SIGMA_BETA_PLAIN_SCALE, rng, M))
        sb = np.broadcast_to(np.asarray(sb, float), (M,)).copy()
        hyper = {"sigma_beta": sb, **hyper}
        for p, n in enumerate(layout.n_coef):
            for m in range(M):
                coef[p, m, :n] = _constrained_rw(n, sb[m], rng)
    state = ParameterState(np.asarray(sig_t, float), np.asarray(sig_a, float), np.asarray(theta, float),
                           np.asarray(alpha, float), coef, hyper)
    rest = {k: v for k, v in fixed.items() if k not in state.hyper and k not in
            ("sigma_theta", "sigma_alpha", "theta", "alpha")}
    _apply_fixed(state, rest)
    return state


def simulate(truth: SimulationTruth) -> SimulationResult:
    """Draw the latent truth and noisy observations for ``truth``."""
    rng = np.random.default_rng(truth.seed)
    spec = get_model(truth.model)
    skeleton = _design(truth)
    layout = build_layout(skeleton, spec.additive, truth.basis)
    state = sample_prior(spec, layout, rng, truth.fixed)
    psi = layout.psi(state.alpha, state.coef)
    mu = psi[layout.obs_region, layout.obs_method, layout.obs_time]
    se = layout.se
    y = mu + se * rng.standard_normal(mu.size)
    layout.y = y
    regions = np.asarray(layout.regions, dtype=object)[layout.obs_region]
    ordered = LogitData(
        region_index=skeleton.region_index, methods=skeleton.methods, time_window=skeleton.time_window,
        anchor_year=skeleton.anchor_year, region=regions, method=layout.obs_method.copy(),
        year=layout.obs_time + int(layout.grid[0]), y=y, se=se.copy(), observed=skeleton.observed,
    )
    prop = expit(y)
    obs = [
        Observation(skeleton.region_index[r], r, skeleton.methods[m], int(yr), float(p),
                    float(s * p * (1.0 - p)) if 0.0 < p < 1.0 else float(s))
        for r, m, yr, p, s in zip(regions, ordered.method, ordered.year, prop, se)
    ]
    ds = Dataset.from_observations(obs, region_index=skeleton.region_index, methods=skeleton.methods,
                                   time_window=skeleton.time_window)
    return SimulationResult(ds, ordered, layout, state, psi)


def simulate_dataset(truth: SimulationTruth):
    """``(Dataset, psi)``: proportion-scale observations and the latent logit truth."""
    res = simulate(truth)
    return res.dataset, res.psi


def write_simulation(truth: SimulationTruth, out_dir) -> dict:
    """Write ``data.csv`` and the ``truth.json`` sidecar (parameters and latent truth)."""
    res = simulate(truth)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = atomic_write(out_dir / "data.csv", lambda f: res.dataset.to_frame().to_csv(
        f, index=False, float_format="%.10g"))
    payload = {
        "truth": truth.to_json(),
        "regions": list(res.layout.regions),
        "methods": [m.value for m in res.layout.methods],
        "years": res.layout.grid.astype(int).tolist(),
        "parameters": {k: np.asarray(v).tolist() for k, v in res.state.arrays().items()
                       if not k.startswith("_")},
        "psi": res.psi.tolist(),
    }
    text = json.dumps(payload)
    truth_path = atomic_write(out_dir / "truth.json", lambda f: f.write(text))
    return {"data": data_path, "truth": truth_path}


# -- reference sampler -------------------------------------------------------

@dataclass
class ReferenceResult:
    names: list
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    ess: np.ndarray
    acceptance: float
    underpowered: bool
    draws: np.ndarray = field(repr=False, default=None)   # (chains, kept, d)

    def as_dict(self) -> dict:
        return {n: (m, s) for n, m, s in zip(self.names, self.mean, self.mcse)}


def random_walk_metropolis(logp: Callable, x0, n_iter: int, rng: np.random.Generator, *,
                           n_chains: int = 32, warmup: int | None = None, thin: int = 1,
                           init_scale: float = 0.1, min_ess: float = 400.0,
                           batched: bool = False) -> ReferenceResult:
    """Adaptive random-walk Metropolis over an unconstrained vector, chains in lockstep.

    ``n_iter`` iterations per chain. During ``warmup`` (default: first half)
    the Gaussian proposal covariance is learned from the pooled chain history
    and its scale is tuned towards 23.4% acceptance; both are frozen
    afterwards. ``logp`` maps ``(d,)`` to a float, or ``(n_chains, d)`` to
    ``(n_chains,)`` when ``batched``.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    warmup = n_iter // 2 if warmup is None else warmup
    if n_iter - warmup < 10 * thin:
        raise ValueError("budget leaves too few post-warmup iterations")
    f = logp if batched else (lambda xs: np.array([logp(x) for x in xs]))
    kept = (n_iter - warmup) // thin
    out = np.empty((n_chains, kept, d))
    x = x0 + init_scale * rng.standard_normal((n_chains, d))
    lp = f(x)
    chol = np.eye(d) * init_scale
    log_scale = 0.0
    start = warmup // 4
    s1, s2, n_mom = np.zeros(d), np.zeros((d, d)), 0
    accepted = 0
    k = 0
    for it in range(n_iter):
        prop = x + math.exp(log_scale) * (rng.standard_normal((n_chains, d)) @ chol.T)
        lp_prop = f(prop)
        with np.errstate(invalid="ignore"):
            acc = np.log1p(-rng.random(n_chains)) < lp_prop - lp
        x[acc] = prop[acc]
        lp[acc] = lp_prop[acc]
        if it < warmup:
            log_scale += (acc.mean() - 0.234) / math.sqrt(1.0 + it / 10.0)
            if it >= start:
                s1 += x.sum(axis=0)
                s2 += x.T @ x
                n_mom += n_chains
                if it % 100 == 99 and n_mom > 10 * d:
                    mean = s1 / n_mom
                    emp = (s2 - n_mom * np.outer(mean, mean)) / (n_mom - 1)
                    chol = np.linalg.cholesky(emp * 2.38 ** 2 / d + 1e-12 * np.eye(d))
                    log_scale = 0.0
        else:
            accepted += int(acc.sum())
            if (it - warmup) % thin == thin - 1:
                out[:, k] = x
                k += 1
    neff = np.array([ess_mean(out[:, :, j]) for j in range(d)])
    flat = out.reshape(-1, d)
    sd = flat.std(axis=0, ddof=1)
    under = bool(np.any(~np.isfinite(neff)) or np.min(neff) < min_ess)
    if under:
        warnings.warn("reference sampler budget too small for the MC SE target", RuntimeWarning,
                      stacklevel=2)
    return ReferenceResult([f"x[{j}]" for j in range(d)], flat.mean(axis=0), sd, sd / np.sqrt(neff),
                           neff, accepted / (n_chains * (n_iter - warmup)), under, out)


class JointParameterization:
    """Unconstrained vector <-> ParameterState for the full joint posterior.

    Full covariance matrices use a Cholesky factor with log-diagonal, diagonal
    variances and scales their log, (0, 1/2) parameters ``logit(2 x)``;
    everything else is left as is. Padding slots and fixed parameters are
    excluded.
    """

    def __init__(self, spec: ModelSpec, layout: ModelLayout, template: ParameterState, fixed=()):
        if spec.sum_to_zero:
            raise ValueError("reference parameterization does not support sum-to-zero models")
        self.spec, self.layout, self.template = spec, layout, template
        self.fixed = frozenset(fixed)
        self.blocks = []   # (key, kind, size)
        M = layout.M
        self.tril = np.tril_indices(M)
        for key, arr in template.arrays().items():
            if key in self.fixed or key.startswith("_"):
                continue
            arr = np.asarray(arr)
            if key in ("sigma_theta", "sigma_alpha", "sigma_delta_cov"):
                if spec.intercept == "diagonal" and key != "sigma_delta_cov":
                    self.blocks.append((key, "diag_var", M))
                else:
                    self.blocks.append((key, "cov", M * (M + 1) // 2))
            elif key == "coef":
                self.blocks.append((key, "coef", int(layout.n_coef.sum()) * M))
            elif key in ("sigma_delta", "sigma_beta", "xi2", "kappa2", "kappa_b2"):
                self.blocks.append((key, "log", arr.size))
            elif key in ("a_xi", "c_xi"):
                self.blocks.append((key, "half_logit", 1))
            else:
                self.blocks.append((key, "free", arr.size))
        self.size = sum(b[2] for b in self.blocks)
        self.rows = layout.obs_rows()

    def names(self) -> list:
        """Natural-scale names, matching DrawStore scalar names."""
        out = []
        for key, kind, n in self.blocks:
            if kind == "cov":
                out += [f"{key}[{j},{i}]" for i, j in zip(*self.tril)]
            elif kind == "diag_var":
                out += [f"{key}[{i},{i}]" for i in range(n)]
            elif kind == "coef":
                out += [f"coef[{p},{m},{k}]" for p, nk in enumerate(self.layout.n_coef)
                        for m in range(self.layout.M) for k in range(nk)]
            else:
                shape = np.shape(self.template.arrays()[key])
                out += [key] if not shape else [f"{key}[{','.join(map(str, ix))}]" for ix in np.ndindex(*shape)]
        return out

    def to_vector(self, state: ParameterState) -> np.ndarray:
        parts = []
        arrays = state.arrays()
        for key, kind, n in self.blocks:
            a = np.asarray(arrays[key], dtype=float)
            if kind == "cov":
                chol = np.linalg.cholesky(a)
                chol[np.diag_indices_from(chol)] = np.log(np.diag(chol))
                parts.append(chol[self.tril])
            elif kind == "diag_var":
                parts.append(np.log(np.diag(a)))
            elif kind == "coef":
                parts.append(self._pack_coef(a))
            elif kind == "log":
                parts.append(np.log(a).ravel())
            elif kind == "half_logit":
                parts.append(np.log(2 * a / (1 - 2 * a)).ravel())
            else:
                parts.append(a.ravel())
        return np.concatenate(parts)

    def _pack_coef(self, a):
        return np.concatenate([a[..., p, :, :nk].reshape(a.shape[:-3] + (-1,))
                               for p, nk in enumerate(self.layout.n_coef)], axis=-1)

    def _unpack_coef(self, v):
        M = self.layout.M
        out = np.zeros(v.shape[:-1] + (self.layout.P, M, self.layout.D - 1))
        j = 0
        for p, nk in enumerate(self.layout.n_coef):
            out[..., p, :, :nk] = v[..., j:j + M * nk].reshape(v.shape[:-1] + (M, nk))
            j += M * nk
        return out

    def _chol(self, v):
        M = self.layout.M
        chol = np.zeros(v.shape[:-1] + (M, M))
        chol[..., self.tril[0], self.tril[1]] = v
        idx = np.arange(M)
        d = np.exp(chol[..., idx, idx])
        chol[..., idx, idx] = d
        # Jacobian of Sigma = L L^T w.r.t. L, times that of the log-diagonal map
        log_j = M * math.log(2.0) + np.sum((M - idx + 1) * np.log(d), axis=-1)
        return chol, log_j

    def to_state(self, x):
        """State and log-Jacobian of the map from ``x``."""
        st = self.template.copy()
        log_j = 0.0
        i = 0
        for key, kind, n in self.blocks:
            v = np.asarray(x[i:i + n], dtype=float)
            i += n
            if kind == "cov":
                chol, lj = self._chol(v)
                val = chol @ chol.T
                log_j += float(lj)
            elif kind == "diag_var":
                # prior densities are over the SD, sqrt(exp(v))
                val = np.diag(np.exp(v))
                log_j += float(np.sum(0.5 * v - math.log(2.0)))
            elif kind == "coef":
                val = self._unpack_coef(v)
            elif kind == "log":
                val = np.exp(v).reshape(np.shape(st.arrays()[key]))
                log_j += float(np.sum(v))
            elif kind == "half_logit":
                val = np.array(0.5 * expit(v[0]))
                log_j += float(math.log(0.5) + v[0] - 2.0 * np.logaddexp(0.0, v[0]))
            else:
                val = v.reshape(np.shape(st.arrays()[key])).copy()
            if key in STATE_FIELDS:
                setattr(st, key, np.asarray(val, dtype=float))
            else:
                st.hyper[key] = np.asarray(val, dtype=float)
        return st, log_j

    def log_density(self, x) -> float:
        st, log_j = self.to_state(x)
        try:
            lp = self.spec.log_prior(st, self.layout)
        except np.linalg.LinAlgError:
            return -math.inf
        if not np.isfinite(lp):
            return -math.inf
        return lp + self.spec.log_likelihood(st, self.layout) + log_j

    @property
    def supports_batch(self) -> bool:
        return self.spec.coefficients == "anchored_iid"

    def batch_log_density(self, xs) -> np.ndarray:
        """Vectorised :meth:`log_density` over the rows of ``xs`` (anchored-iid models)."""
        if not self.supports_batch:
            return np.array([self.log_density(x) for x in xs])
        lay, M = self.layout, self.layout.M
        xs = np.asarray(xs, dtype=float)
        B = xs.shape[0]
        vals = {}
        lp = np.zeros(B)
        i = 0
        for key, kind, n in self.blocks:
            v = xs[:, i:i + n]
            i += n
            if kind == "cov":
                chol, lj = self._chol(v)
                vals[key] = ("chol", chol)
                lp += lj
            elif kind == "diag_var":
                vals[key] = ("sd", np.exp(0.5 * v))
                lp += np.sum(0.5 * v - math.log(2.0), axis=1)
            elif kind == "coef":
                vals[key] = self._unpack_coef(v)
            elif kind == "log":
                vals[key] = np.exp(v[:, 0])
                lp += v[:, 0]
            else:
                vals[key] = v.reshape((B,) + np.shape(self.template.arrays()[key]))
        tmpl = self.template

        def get(key):
            if key in vals:
                return vals[key]
            arr = np.asarray(tmpl.arrays()[key], dtype=float)
            if key in ("sigma_theta", "sigma_alpha"):
                if self.spec.intercept == "diagonal":
                    return ("sd", np.broadcast_to(np.sqrt(np.diag(arr)), (B, M)))
                return ("chol", np.broadcast_to(np.linalg.cholesky(arr), (B, M, M)))
            if key == "sigma_delta":
                return np.full(B, float(arr))
            return np.broadcast_to(arr, (B,) + arr.shape)

        theta, alpha, coef = get("theta"), get("alpha"), get("coef")
        mean_alpha = theta[:, lay.region_country]
        for key, x, mean in (("sigma_theta", theta, 0.0), ("sigma_alpha", alpha, mean_alpha)):
            form, par = get(key)
            dev = x - mean
            if form == "chol":
                lp += _batch_iw_identity(par, M + 1)
                lp += _batch_mvn(dev, par)
            else:
                if key == "sigma_theta" and self.spec.intercept_sd_prior == "cauchy_normal":
                    lp += np.sum(dist.half_cauchy_logpdf(par, COUNTRY_CAUCHY_SCALE), axis=1)
                else:
                    lp += np.sum(dist.half_normal_logpdf(par, INTERCEPT_SD_SCALE), axis=1)
                lp += np.sum(dist.normal_logpdf(dev, 0.0, par[:, None, :]), axis=(1, 2))
        sd = get("sigma_delta")
        mask = np.broadcast_to(lay.coef_mask[:, None, :], coef.shape[1:])
        n_delta = int(mask.sum())
        ss = np.sum((coef * mask) ** 2, axis=(1, 2, 3))
        lp += -0.5 * ss / sd ** 2 - n_delta * (np.log(sd) + 0.5 * dist.LOG_2PI)
        lp += dist.half_normal_logpdf(sd, DELTA_SD_PRIOR_SCALE)
        gamma = np.concatenate([alpha[..., None], coef], axis=-1)
        mu = np.einsum("nd,bnd->bn", self.rows, gamma[:, lay.obs_region, lay.obs_method])
        lp += np.sum(dist.normal_logpdf(lay.y, mu, lay.se), axis=1)
        return np.where(np.isfinite(lp), lp, -np.inf)

    def natural(self, xs) -> np.ndarray:
        """Natural-scale values (covariance entries, SDs, ...) for rows of ``xs``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        parts = []
        i = 0
        for key, kind, n in self.blocks:
            v = xs[:, i:i + n]
            i += n
            if kind == "cov":
                chol, _ = self._chol(v)
                parts.append((chol @ np.swapaxes(chol, -1, -2))[:, self.tril[0], self.tril[1]])
            elif kind in ("diag_var", "log"):
                parts.append(np.exp(v))
            elif kind == "half_logit":
                parts.append(0.5 * expit(v))
            else:
                parts.append(v)
        return np.concatenate(parts, axis=1)


def _batch_mvn(dev, chol):
    """Sum over rows of ``N(dev | 0, L L^T)``; ``dev`` is ``(B, n, M)``, ``chol`` ``(B, M, M)``."""
    inv = np.linalg.inv(chol)
    z = np.einsum("bij,bnj->bni", inv, dev)
    n, m = dev.shape[1], dev.shape[2]
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return -0.5 * np.sum(z * z, axis=(1, 2)) - 0.5 * n * (m * dist.LOG_2PI + logdet)


def _batch_iw_identity(chol, df):
    """``IW(I, df)`` log density of ``L L^T`` for a batch of Cholesky factors."""
    from scipy.special import multigammaln
    m = chol.shape[-1]
    inv = np.linalg.inv(chol)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    trace = np.sum(inv * inv, axis=(1, 2))
    return (-0.5 * df * m * math.log(2.0) - multigammaln(0.5 * df, m)
            - 0.5 * (df + m + 1) * logdet - 0.5 * trace)


def reference_posterior(model, data, budget: int = 1_000_000, *, seed: int = 0,
                        fixed: Mapping | None = None, n_chains: int = 32,
                        basis: BasisConfig = BasisConfig(), thin: int = 10,
                        max_parameters: int = 30) -> ReferenceResult:
    """Random-walk Metropolis over the full joint posterior, no conjugate updates.

    ``budget`` is the total number of iterations summed over chains. Reported
    moments refer to natural-scale parameters (covariance entries, SDs) and
    are named like DrawStore scalar parameters.
    """
    spec = get_model(model)
    layout = make_layout(spec, data, basis)
    fixed = dict(fixed or {})
    init = initialize(spec, layout, fixed)
    check_initial_state(spec, init, layout)
    par = JointParameterization(spec, layout, init, fixed)
    if par.size > max_parameters:
        raise ValueError(f"{par.size} free parameters exceed the reference limit of {max_parameters}")
    rng = np.random.default_rng(seed)
    raw = random_walk_metropolis(par.batch_log_density, par.to_vector(init), budget // n_chains, rng,
                                 n_chains=n_chains, thin=thin, batched=True)
    nat = par.natural(raw.draws.reshape(-1, par.size)).reshape(raw.draws.shape)
    neff = np.array([ess_mean(nat[:, :, j]) for j in range(nat.shape[2])])
    flat = nat.reshape(-1, nat.shape[2])
    sd = flat.std(axis=0, ddof=1)
    return ReferenceResult(par.names(), flat.mean(axis=0), sd, sd / np.sqrt(neff), neff, raw.acceptance,
                           raw.underpowered, nat)


# -- simulation-based calibration -------------------------------------------

@dataclass
class SBCResult:
    quantities: list
    ranks: np.ndarray        # (replicates, quantities)
    n_draws: int
    p_values: dict
    bins: int


def sbc_quantities(state: ParameterState) -> dict:
    """Default SBC targets: one intercept, the rate SD and one region-level correlation."""
    corr = dist.cov_to_corr(state.sigma_alpha)
    return {
        "alpha[0,0]": float(state.alpha[0, 0]),
        "sigma_delta": float(state.hyper["sigma_delta"]),
        "corr_alpha[0,1]": float(corr[0, 1]),
    }


def _store_quantities(store) -> dict:
    corr = dist.cov_to_corr(store.draws["sigma_alpha"])
    return {
        "alpha[0,0]": store.draws["alpha"][..., 0, 0].ravel(),
        "sigma_delta": store.draws["sigma_delta"].ravel(),
        "corr_alpha[0,1]": corr[..., 0, 1].ravel(),
    }


def rank_uniformity_pvalue(ranks, n_draws: int, bins: int = 10) -> float:
    """Chi-square test that ranks in ``0..n_draws`` are uniform over ``bins`` equal bins."""
    ranks = np.asarray(ranks)
    if (n_draws + 1) % bins:
        raise ValueError("n_draws + 1 must be divisible by the number of bins")
    counts = np.bincount(ranks * bins // (n_draws + 1), minlength=bins)
    return float(stats.chisquare(counts).pvalue)


def sbc_replicate(truth: SimulationTruth, cfg: SamplerConfig, rep: int):
    """One SBC replicate: prior draw, simulated logit data, fit, ranks of the truth."""
    rng = np.random.default_rng([truth.seed, rep])
    spec = get_model(truth.model)
    skeleton = _design(truth)
    layout = build_layout(skeleton, spec.additive, truth.basis)
    state = sample_prior(spec, layout, rng, truth.fixed)
    psi = layout.psi(state.alpha, state.coef)
    y = psi[layout.obs_region, layout.obs_method, layout.obs_time] + layout.se * rng.standard_normal(layout.n_obs)
    layout.y = y
    run_cfg = SamplerConfig(iterations=cfg.iterations, burn_in=cfg.burn_in, thin=cfg.thin,
                            chains=cfg.chains, seed=cfg.seed + 1000 * rep, step_sizes=cfg.step_sizes)
    store = run_chains(spec, layout, run_cfg)
    true_vals = sbc_quantities(state)
    draws = _store_quantities(store)
    return {k: int(np.sum(draws[k] < v)) for k, v in true_vals.items()}


def run_sbc(n_replicates: int = 200, truth: SimulationTruth | None = None,
            cfg: SamplerConfig | None = None, bins: int = 10, progress=None) -> SBCResult:
    """Simulation-based calibration of the multivariate-intercept sampler.

    Every replicate draws all parameters from the prior, simulates logit-scale
    data on the truth's survey design and ranks the true values among
    ``cfg.kept * cfg.chains`` posterior draws.
    """
    truth = truth or SimulationTruth(fixed={})
    cfg = cfg or SamplerConfig(iterations=8_960, burn_in=1_000, thin=40, chains=1)
    n_draws = cfg.kept * cfg.chains
    ranks = []
    for rep in range(n_replicates):
        ranks.append(sbc_replicate(truth, cfg, rep))
        if progress:
            progress(rep)
    names = list(ranks[0])
    arr = np.array([[r[k] for k in names] for r in ranks])
    pvals = {k: rank_uniformity_pvalue(arr[:, j], n_draws, bins) for j, k in enumerate(names)}
    return SBCResult(names, arr, n_draws, pvals, bins)
