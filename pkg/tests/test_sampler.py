import math

import numpy as np
import pytest

from supplyshare.data import Dataset, Method, Observation, prepare_logit_data
from supplyshare.diagnostics import mcse_mean
from supplyshare.errors import ConfigError, DataError, MissingArtifactError
from supplyshare.process import log_likelihood, log_prior
from supplyshare.sampler import (
    DrawStore, SamplerConfig, check_initial_state, initialize, make_layout, run_chains,
)
from supplyshare.variants import get_model


def test_default_schedule():
    cfg = SamplerConfig()
    assert (cfg.iterations, cfg.burn_in, cfg.thin, cfg.chains) == (80_000, 10_000, 35, 4)
    assert cfg.kept == 2000


@pytest.mark.parametrize("kwargs", [
    dict(iterations=1000, burn_in=1000),
    dict(iterations=1000, burn_in=1200),
    dict(iterations=1000, burn_in=0, thin=11),
    dict(iterations=0),
    dict(chains=0),
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SamplerConfig(**kwargs)


def test_kept_draw_count(tiny_dataset):
    cfg = SamplerConfig(iterations=757, burn_in=50, thin=7, chains=2, seed=3)
    store = run_chains("multivariate_intercept", tiny_dataset, cfg)
    assert store.draws["alpha"].shape[:2] == (2, (757 - 50) // 7)


def test_initialize_rules():
    obs = [
        Observation("A", "a1", "pill", 2005, 0.3, 0.05),
        Observation("A", "a1", "pill", 2010, 1 / (1 + math.exp(-0.8)), 0.05),
        Observation("A", "a2", "pill", 2008, 0.5, 0.05),
        Observation("A", "a2", "sterilization", 2008, 0.7, 0.05),
    ]
    ds = Dataset.from_observations(obs, region_index={"a1": "A", "a2": "A", "b1": "B"},
                                   methods=(Method.STERILIZATION, Method.PILL), time_window=(2000, 2020))
    layout = make_layout("multivariate_intercept", ds)
    state = initialize("multivariate_intercept", layout)
    r = {name: i for i, name in enumerate(layout.regions)}
    ster, pill = 0, 1
    assert state.alpha[r["a1"], pill] == pytest.approx(0.8, abs=1e-12)
    # no sterilization data in a1: borrow the country mean of the starts
    assert state.alpha[r["a1"], ster] == pytest.approx(math.log(0.7 / 0.3))
    # a country without data falls back to 0
    assert np.all(state.alpha[r["b1"]] == 0.0)
    assert np.all(state.coef == 0.0)
    assert np.array_equal(state.sigma_alpha, np.eye(2)) and np.array_equal(state.sigma_theta, np.eye(2))
    assert state.sigma_delta == 0.1
    assert np.isfinite(log_prior(state, layout) + log_likelihood(state, layout))


def test_initial_state_error_names_parameter(tiny_dataset):
    layout = make_layout("multivariate_intercept", tiny_dataset)
    spec_state = initialize("multivariate_intercept", layout)
    spec_state.theta[0, 0] = np.nan
    with pytest.raises(DataError, match="theta"):
        check_initial_state(get_model("multivariate_intercept"), spec_state, layout)
    with pytest.raises(ConfigError, match="unknown"):
        initialize("multivariate_intercept", layout, fixed={"nonsense": 1.0})


def test_determinism_and_parallel_identity(tiny_dataset, short_cfg):
    a = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    b = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    c = run_chains("multivariate_intercept", tiny_dataset, short_cfg, n_jobs=2)
    for k in a.draws:
        assert np.array_equal(a.draws[k], b.draws[k])
        assert np.array_equal(a.draws[k], c.draws[k])
    assert a.seeds == (11, 12)
    d = run_chains("multivariate_intercept", tiny_dataset,
                   SamplerConfig(**{**short_cfg.__dict__, "seed": 99}))
    assert not np.array_equal(a.draws["alpha"], d.draws["alpha"])


def test_normal_normal_conjugate_oracle():
    y, se, theta0, s_alpha = 0.6, 0.3, -0.2, 0.5
    p = 1 / (1 + math.exp(-y))
    ds = Dataset.from_observations([Observation("A", "a", "pill", 2010, p, se * p * (1 - p))],
                                   methods=(Method.PILL,), time_window=(2000, 2020))
    layout = make_layout("multivariate_intercept", ds)
    fixed = {"theta": [[theta0]], "sigma_alpha": [[s_alpha ** 2]], "sigma_theta": [[1.0]],
             "sigma_delta": 0.1, "coef": np.zeros((1, 1, layout.D - 1))}
    cfg = SamplerConfig(iterations=20_200, burn_in=200, thin=1, chains=2, seed=5)
    store = run_chains("multivariate_intercept", ds, cfg, fixed=fixed)
    prec = 1 / s_alpha ** 2 + 1 / se ** 2
    mean, var = (theta0 / s_alpha ** 2 + y / se ** 2) / prec, 1 / prec
    draws = store.parameter("alpha[0,0]")
    assert abs(draws.mean() - mean) < 3 * mcse_mean(draws)
    sq = (draws - mean) ** 2
    assert abs(sq.mean() - var) < 3 * mcse_mean(sq)
    assert np.all(store.draws["theta"] == theta0)


def test_inverse_wishart_update_mean():
    rng = np.random.default_rng(8)
    C, M = 60, 3
    theta = rng.multivariate_normal(np.zeros(M), [[1, .4, 0], [.4, 1, .3], [0, .3, 1]], size=C)
    obs = [Observation(f"c{c}", f"r{c}", Method.PILL, 2010, 0.5, 0.05) for c in range(C)]
    methods = (Method.STERILIZATION, Method.PILL, Method.IUD)
    ds = Dataset.from_observations(obs, methods=methods, time_window=(2000, 2020))
    layout = make_layout("multivariate_intercept", ds)
    fixed = {"theta": theta, "alpha": theta, "sigma_alpha": np.eye(M), "sigma_delta": 0.1,
             "coef": np.zeros((C, M, layout.D - 1))}
    cfg = SamplerConfig(iterations=10_050, burn_in=50, thin=1, chains=1, seed=2)
    store = run_chains("multivariate_intercept", ds, cfg, fixed=fixed)
    expect = (np.eye(M) + theta.T @ theta) / (M + 1 + C - M - 1)
    got = store.draws["sigma_theta"][0].mean(axis=0)
    assert np.max(np.abs(got - expect)) < 0.02 * np.max(np.abs(expect))
    assert np.allclose(np.diag(got), np.diag(expect), rtol=0.02)


@pytest.mark.parametrize("fmt", ["npz", "csv"])
def test_drawstore_round_trip(tmp_path, tiny_dataset, short_cfg, fmt):
    store = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    store.save(tmp_path, fmt)
    back = DrawStore.load(tmp_path)
    assert back.model.name == store.model.name and back.config == store.config
    for k, v in store.draws.items():
        assert np.allclose(back.draws[k], v, rtol=1e-15, atol=0), k
    assert np.allclose(back.psi(), store.psi(), atol=1e-12)
    assert back.layout.regions == store.layout.regions


def test_drawstore_npz_bytes_identical(tmp_path, tiny_dataset, short_cfg):
    a = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    b = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    pa = a.save(tmp_path / "a")
    pb = b.save(tmp_path / "b")
    assert pa.read_bytes() == pb.read_bytes()


def test_drawstore_missing(tmp_path):
    with pytest.raises(MissingArtifactError):
        DrawStore.load(tmp_path)


def test_scalar_names_and_parameter(tiny_dataset, short_cfg):
    store = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    names = store.scalar_names()
    assert "sigma_alpha[0,1]" in names and "sigma_alpha[1,0]" not in names
    assert "sigma_delta" in names
    n_coef = int(store.layout.n_coef.sum()) * store.layout.M
    assert sum(n.startswith("coef[") for n in names) == n_coef
    assert store.parameter("alpha[1,0]").shape == (2, short_cfg.kept)
    with pytest.raises(KeyError):
        store.parameter("alpha")


def test_anchor_identity_every_draw(tiny_dataset, short_cfg):
    store = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    beta = store.beta()
    for p, kv in enumerate(store.layout.knots):
        assert np.array_equal(beta[:, :, p, :, kv.anchor_basis], store.draws["alpha"][:, :, p, :])


def test_accepts_logit_data(tiny_dataset, short_cfg):
    a = run_chains("multivariate_intercept", tiny_dataset, short_cfg)
    b = run_chains("multivariate_intercept", prepare_logit_data(tiny_dataset), short_cfg)
    assert np.array_equal(a.draws["alpha"], b.draws["alpha"])


def test_recovers_strong_signal():
    # flat truth with tight SEs: the posterior median trajectory should sit on it
    obs = [Observation("A", f"a{r}", m, y, p, 0.01)
           for r in range(3) for m, p in (("pill", 0.3), ("sterilization", 0.8))
           for y in (2000, 2005, 2010, 2015)]
    ds = Dataset.from_observations(obs, methods=(Method.STERILIZATION, Method.PILL), time_window=(1995, 2025))
    store = run_chains("multivariate_intercept", ds, SamplerConfig(iterations=3000, burn_in=1000, thin=10,
                                                                    chains=2, seed=1))
    psi = np.median(store.psi().reshape((-1,) + store.psi().shape[2:]), axis=0)
    t = np.searchsorted(store.layout.grid, [2000, 2005, 2010, 2015])
    assert np.allclose(1 / (1 + np.exp(-psi[:, 0, t])), 0.8, atol=0.01)
    assert np.allclose(1 / (1 + np.exp(-psi[:, 1, t])), 0.3, atol=0.01)
