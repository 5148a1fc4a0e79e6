import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from supplyshare import distributions as dist
from supplyshare.data import Dataset, Method, Observation
from supplyshare.process import (
    ParameterState, grad_log_posterior, latent_trajectory, log_likelihood, log_prior, reconstruct_beta,
)
from supplyshare.sampler import initialize, make_layout

import oracles


def _random_state(layout, rng):
    M, C, P = layout.M, layout.C, layout.P
    sig_t = dist.sample_inverse_wishart(np.eye(M), M + 3, rng)
    sig_a = dist.sample_inverse_wishart(np.eye(M), M + 3, rng)
    coef = rng.normal(0, 0.1, (P, M, layout.D - 1)) * layout.coef_mask[:, None, :]
    return ParameterState(sig_t, sig_a, rng.normal(size=(C, M)), rng.normal(size=(P, M)), coef,
                          {"sigma_delta": np.array(0.3)})


def test_reconstruct_beta_examples():
    assert np.all(reconstruct_beta(0.0, np.zeros(4), 2) == 0.0)
    # anchored at the second of three coefficients (0-based index 1)
    assert np.allclose(reconstruct_beta(1.0, [0.5, -0.25], 1), [0.5, 1.0, 0.75], atol=0, rtol=0)
    with pytest.raises(ValueError):
        reconstruct_beta(0.0, [0.1], 2)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.lists(st.floats(-5, 5), min_size=1, max_size=15), st.data())
def test_reconstruct_beta_identities(alpha, delta, data):
    k_star = data.draw(st.integers(0, len(delta)))
    beta = reconstruct_beta(alpha, delta, k_star)
    assert beta[k_star] == alpha
    assert np.max(np.abs(np.diff(beta) - delta)) < 1e-12


def test_latent_trajectory_constant_and_naive(tiny_dataset, rng):
    layout = make_layout("multivariate_intercept", tiny_dataset)
    state = initialize("multivariate_intercept", layout)
    state.alpha[:] = 0.7
    state.coef[:] = 0.0
    psi = latent_trajectory(state, layout)
    assert np.allclose(psi, 0.7, atol=1e-12)
    state = _random_state(layout, rng)
    psi = latent_trajectory(state, layout)
    beta = layout.beta(state.alpha, state.coef)
    for p in range(layout.P):
        k = layout.n_basis[p]
        b = layout.basis[p, :, :k]
        for m in range(layout.M):
            ks = layout.knots[p].anchor_basis
            assert beta[p, m, ks] == state.alpha[p, m]
            expect = reconstruct_beta(state.alpha[p, m], state.coef[p, m, : k - 1], ks)
            assert np.allclose(beta[p, m, :k], expect, atol=1e-13)
            assert np.allclose(psi[p, m], oracles.naive_psi(b, expect), atol=1e-12)


def test_latent_trajectory_shape_mismatch(tiny_dataset):
    layout = make_layout("multivariate_intercept", tiny_dataset)
    state = initialize("multivariate_intercept", layout)
    state.coef = state.coef[..., :-1]
    with pytest.raises(ValueError):
        latent_trajectory(state, layout)


def test_log_prior_matches_scipy(tiny_dataset, rng):
    layout = make_layout("multivariate_intercept", tiny_dataset)
    state = _random_state(layout, rng)
    M = layout.M
    expect = oracles.iw_logpdf(state.sigma_theta, np.eye(M), M + 1)
    expect += oracles.iw_logpdf(state.sigma_alpha, np.eye(M), M + 1)
    expect += sum(oracles.mvn_logpdf(t, np.zeros(M), state.sigma_theta) for t in state.theta)
    expect += sum(oracles.mvn_logpdf(a, state.theta[layout.region_country[p]], state.sigma_alpha)
                  for p, a in enumerate(state.alpha))
    for p, n in enumerate(layout.n_coef):
        expect += oracles.normal_logpdf(state.coef[p, :, :n], 0, 0.3).sum()
    expect += oracles.half_normal_logpdf(0.3, 2.0)
    assert log_prior(state, layout) == pytest.approx(expect, rel=1e-12)


def test_log_prior_one_method_is_scalar_normal():
    obs = [Observation("A", "a", "pill", 2010, 0.4, 0.05), Observation("A", "b", "pill", 2012, 0.6, 0.05)]
    ds = Dataset.from_observations(obs, methods=(Method.PILL,), time_window=(2000, 2020))
    layout = make_layout("multivariate_intercept", ds)
    state = initialize("multivariate_intercept", layout)
    state.theta[:] = 0.3
    state.alpha[:] = [[0.1], [-0.2]]
    full = log_prior(state, layout)
    state.alpha[:] = [[0.5], [-0.2]]
    shifted = log_prior(state, layout)
    sd = math.sqrt(state.sigma_alpha[0, 0])
    expect = stats.norm.logpdf(0.5, 0.3, sd) - stats.norm.logpdf(0.1, 0.3, sd)
    assert shifted - full == pytest.approx(expect, rel=1e-12)


def test_log_prior_support(tiny_dataset):
    layout = make_layout("multivariate_intercept", tiny_dataset)
    state = initialize("multivariate_intercept", layout)
    state.hyper["sigma_delta"] = np.array(0.0)
    assert log_prior(state, layout) == -math.inf
    state.hyper["sigma_delta"] = np.array(0.1)
    state.sigma_alpha = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError):
        log_prior(state, layout)


def _single_obs_layout(y, se):
    p = 1.0 / (1.0 + math.exp(-y))
    obs = [Observation("A", "a", "pill", 2010, p, se * p * (1 - p))]
    ds = Dataset.from_observations(obs, methods=(Method.PILL,), time_window=(2000, 2020))
    return make_layout("multivariate_intercept", ds)


def test_log_likelihood_examples():
    layout = _single_obs_layout(0.4, 0.4)
    state = initialize("multivariate_intercept", layout)
    state.alpha[:] = 0.0
    assert log_likelihood(state, layout) == pytest.approx(stats.norm.logpdf(0.4, 0, 0.4), rel=1e-12)
    layout = _single_obs_layout(0.4, 1.0)
    state.alpha[:] = 0.4
    assert log_likelihood(state, layout) == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-12)


def test_log_likelihood_se_shape(desk_sim):
    layout = desk_sim.layout
    state = desk_sim.state
    base = log_likelihood(state, layout)
    se = layout.se.copy()
    layout.se = 2 * se
    try:
        doubled = log_likelihood(state, layout)
    finally:
        layout.se = se
    # residuals here are about one SE, so doubling the SE lowers the fit
    assert doubled < base
    exact = state.copy()
    layout_y = layout.y.copy()
    psi = latent_trajectory(exact, layout)
    layout.y = psi[layout.obs_region, layout.obs_method, layout.obs_time]
    try:
        a = log_likelihood(exact, layout)
        layout.se = 2 * se
        assert log_likelihood(exact, layout) < a
        layout.se = 0.3 * se
        assert log_likelihood(exact, layout) > a
    finally:
        layout.y, layout.se = layout_y, se


def test_gradient_matches_finite_differences(tiny_dataset, rng):
    layout = make_layout("multivariate_intercept", tiny_dataset)
    state = _random_state(layout, rng)
    g_alpha, g_coef = grad_log_posterior(state, layout)

    def f(s):
        return log_prior(s, layout) + log_likelihood(s, layout)

    h = 1e-5
    for idx in np.ndindex(*state.alpha.shape):
        up, dn = state.copy(), state.copy()
        up.alpha[idx] += h
        dn.alpha[idx] -= h
        num = (f(up) - f(dn)) / (2 * h)
        assert g_alpha[idx] == pytest.approx(num, rel=1e-5, abs=1e-7)
    for p, m, k in np.ndindex(*state.coef.shape):
        if k >= layout.n_coef[p]:
            continue
        up, dn = state.copy(), state.copy()
        up.coef[p, m, k] += h
        dn.coef[p, m, k] -= h
        num = (f(up) - f(dn)) / (2 * h)
        assert g_coef[p, m, k] == pytest.approx(num, rel=1e-5, abs=1e-7)
