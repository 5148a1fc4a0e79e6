from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from supplyshare.errors import DataError
from supplyshare.posterior import (
    CLOSURE_NOTE, correlation_summary, summarize_trajectories, write_outputs, year_summary,
)
from supplyshare.sampler import DrawStore, SamplerConfig, run_chains
from supplyshare.simulation import SimulationTruth, simulate

CFG = SamplerConfig(iterations=600, burn_in=100, thin=5, chains=2, seed=4)


@pytest.fixture(scope="module")
def store(request):
    ds = request.getfixturevalue("desk_data")
    return run_chains("multivariate_intercept", ds, CFG)


def _with_psi(store, psi_draws):
    """A store whose latent trajectories equal ``psi_draws`` (chains, kept) in every cell.

    ``alpha = value`` with zero rates of change is a flat trajectory at ``value``.
    """
    alpha = np.broadcast_to(psi_draws[:, :, None, None], store.draws["alpha"].shape).copy()
    draws = dict(store.draws, alpha=alpha, coef=np.zeros_like(store.draws["coef"]))
    return replace(store, draws=draws)


def test_constant_draws(store):
    s = _with_psi(store, np.zeros((2, CFG.kept)))
    out = summarize_trajectories(s)
    assert np.allclose(out["public_median"], 0.5)
    assert np.allclose(out["public_upper_97_5"] - out["public_lower_2_5"], 0.0)


def test_symmetric_draws_mirror(store, rng):
    x = rng.standard_normal(CFG.kept)
    s = _with_psi(store, np.stack([x, -x]))
    out = summarize_trajectories(s, years=[2010])
    assert np.allclose(out["public_median"], 0.5, atol=1e-12)
    assert np.allclose(out["public_lower_2_5"], out["private_lower_2_5"], atol=1e-12)
    assert np.allclose(out["public_upper_97_5"], out["private_upper_97_5"], atol=1e-12)


def test_known_normal_quantiles(store):
    mu, sd = 0.4, 0.7
    grid = stats.norm.ppf((np.arange(2 * CFG.kept) + 0.5) / (2 * CFG.kept), mu, sd)
    s = _with_psi(store, grid.reshape(2, CFG.kept))
    out = summarize_trajectories(s, years=[2000]).iloc[0]
    for col, q in (("public_lower_2_5", 0.025), ("public_median", 0.5), ("public_upper_97_5", 0.975)):
        assert out[col] == pytest.approx(expit(stats.norm.ppf(q, mu, sd)), abs=0.01)


def test_closure_and_monotonicity(store):
    out = summarize_trajectories(store)
    assert len(out) == store.layout.P * store.layout.M * store.layout.T
    for sector in ("public", "private"):
        assert np.all(out[f"{sector}_lower_2_5"] <= out[f"{sector}_median"])
        assert np.all(out[f"{sector}_median"] <= out[f"{sector}_upper_97_5"])
    # per-draw closure makes the private quantiles mirror the public ones
    assert np.allclose(out["public_median"] + out["private_median"], 1.0, atol=1e-12)
    assert np.allclose(out["public_lower_2_5"] + out["private_upper_97_5"], 1.0, atol=1e-12)


def test_correlation_summary(store):
    for level in ("national", "subnational"):
        c = correlation_summary(store, level)
        assert np.allclose(c, c.T) and np.allclose(np.diag(c), 1.0) and np.all(np.abs(c) <= 1)
    fixed = np.array([[4.0, 1.2], [1.2, 1.0]])
    draws = dict(store.draws, sigma_alpha=np.broadcast_to(fixed, store.draws["sigma_alpha"].shape))
    assert np.allclose(correlation_summary(replace(store, draws=draws)), [[1, 0.6], [0.6, 1]])
    draws = dict(store.draws, sigma_theta=np.broadcast_to(np.eye(2), store.draws["sigma_theta"].shape))
    assert np.array_equal(correlation_summary(replace(store, draws=draws), "national"), np.eye(2))
    with pytest.raises(ValueError):
        correlation_summary(store, "global")


def test_year_summary(store):
    table = year_summary(store, 2025)
    assert list(table.columns) == ["method", "public_median", "public_sd", "private_median", "private_sd"]
    assert list(table["method"]) == [m.value for m in store.layout.methods]
    with pytest.raises(DataError):
        year_summary(store, 2031)


def test_year_summary_two_regions(store):
    # two-point median and single-region SD
    keep = [0, 1]
    lay = store.layout
    sub_layout = replace(lay, regions=lay.regions[:2], region_country=lay.region_country[:2],
                         design=lay.design[keep], basis=lay.basis[keep], n_basis=lay.n_basis[keep],
                         n_coef=lay.n_coef[keep], knots=lay.knots[:2])
    alpha = np.zeros(store.draws["alpha"].shape[:2] + (2, lay.M))
    alpha[:, :, 0] = np.log(0.4 / 0.6)
    alpha[:, :, 1] = np.log(0.6 / 0.4)
    draws = dict(store.draws, alpha=alpha, coef=np.zeros(alpha.shape + (lay.D - 1,)))
    table = year_summary(replace(store, layout=sub_layout, draws=draws), 2020)
    assert np.allclose(table["public_median"], 0.5)
    one = replace(sub_layout, regions=lay.regions[:1], region_country=lay.region_country[:1],
                  design=lay.design[:1])
    draws1 = dict(draws, alpha=alpha[:, :, :1], coef=draws["coef"][:, :, :1])
    assert np.all(year_summary(replace(store, layout=one, draws=draws1), 2020)["public_sd"] == 0.0)


def test_write_outputs(store, tmp_path):
    paths = write_outputs(store, tmp_path, year=2025)
    assert set(paths) == {"trajectories", "correlations", "plot_data", "year_summary"}
    text = (tmp_path / "trajectories.csv").read_text()
    assert text.startswith(CLOSURE_NOTE)
    header = text.splitlines()[1]
    assert header == "region,method,year,sector,median,lo,hi"
    with pytest.raises(DataError):
        write_outputs(store, tmp_path / "bad", year=1900)


def test_recovers_region_correlation():
    # strong truth correlation 0.8 at the region level, many regions
    fixed = {"sigma_theta": [[0.3, 0.0], [0.0, 0.3]], "sigma_alpha": [[0.5, 0.4], [0.4, 0.5]],
             "sigma_delta": 0.05}
    sim = simulate(SimulationTruth(n_countries=4, regions_per_country=10, fixed=fixed, se_logit=0.1,
                                   seed=12))
    s = run_chains("multivariate_intercept", sim.dataset,
                   SamplerConfig(iterations=3000, burn_in=1000, thin=10, chains=2, seed=3))
    assert correlation_summary(s, "subnational")[0, 1] == pytest.approx(0.8, abs=0.15)


def test_store_loaded_from_disk_summarises(store, tmp_path):
    store.save(tmp_path)
    back = DrawStore.load(tmp_path)
    a = summarize_trajectories(store, years=[2015])
    b = summarize_trajectories(back, years=[2015])
    assert np.allclose(a["public_median"], b["public_median"])
