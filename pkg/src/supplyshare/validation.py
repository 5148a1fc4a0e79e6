"""Out-of-sample validation: metrics and the model comparison report.

Point predictions are medians of the posterior predictive distribution of the
public share; the predictive distribution adds Normal observation noise with
the test cell's own logit SE to every draw of the latent trajectory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from .basis import BasisConfig
from .data import Dataset, prepare_logit_data, split_train_test
from .errors import DataError
from .sampler import DrawStore, SamplerConfig, atomic_write, run_chains
from .variants import get_model

SAPE_CONSTANT = 1.4826


def _pair(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"observations {y.shape} and predictions {yhat.shape} are not aligned")
    if y.size == 0:
        raise DataError("empty test set")
    return y, yhat


def mare(y, yhat) -> float:
    """Mean absolute error relative to the prediction, in percent."""
    y, yhat = _pair(y, yhat)
    if np.any(yhat == 0):
        raise DataError("prediction of exactly 0 makes MARE undefined")
    return float(100.0 * np.mean(np.abs(y - yhat) / yhat))


def sape(y, yhat, sd) -> float:
    """``1.4826 * median(|y - yhat| / sd)``; about 1 for calibrated predictive spread."""
    y, yhat = _pair(y, yhat)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), y.shape)
    if np.any(sd <= 0):
        raise DataError("predictive SD must be positive")
    return float(SAPE_CONSTANT * np.median(np.abs(y - yhat) / sd))


def rmse(y, yhat) -> float:
    """Root mean square error in percentage points."""
    y, yhat = _pair(y, yhat)
    return float(100.0 * np.sqrt(np.mean((y - yhat) ** 2)))


def coverage(y, lo, hi):
    """Percent of ``y`` inside ``[lo, hi]``, above ``hi`` and below ``lo``."""
    y = np.asarray(y, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if y.size == 0:
        raise DataError("empty test set")
    if np.any(lo > hi):
        raise ValueError("interval with lower bound above upper bound")
    n = y.size
    above = int(np.sum(y > hi))
    below = int(np.sum(y < lo))
    inside = n - above - below
    return 100.0 * inside / n, 100.0 * above / n, 100.0 * below / n


def pi_width(lo, hi) -> float:
    """Median interval width in percentage points."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.size == 0:
        raise DataError("no intervals")
    return float(100.0 * np.median(hi - lo))


@dataclass
class MetricReport:
    model_name: str
    mare_pct: float
    sape: float
    coverage_80_pct: float
    coverage_95_pct: float
    rmse_pct: float
    median_pi_width_95_pct: float
    pct_above_95_pi: float
    pct_below_95_pi: float
    n_test: int
    n_train: int = 0


REPORT_ROWS = (
    ("MARE (%)", "mare_pct"),
    ("SAPE", "sape"),
    ("80% coverage (%)", "coverage_80_pct"),
    ("95% coverage (%)", "coverage_95_pct"),
    ("RMSE (%)", "rmse_pct"),
    ("Median 95% PI width (%)", "median_pi_width_95_pct"),
    ("Above the 95% PI (%)", "pct_above_95_pi"),
    ("Below the 95% PI (%)", "pct_below_95_pi"),
    ("Test N", "n_test"),
    ("Train N", "n_train"),
)


def predictive_draws(store: DrawStore, test: Dataset, rng: np.random.Generator):
    """Posterior-predictive logit draws ``(S, N)`` for every test observation.

    Returns the draws and the logit-scale test data (clamped, SE-floored).
    """
    lay = store.layout
    tl = prepare_logit_data(test)
    ridx = {r: i for i, r in enumerate(lay.regions)}
    try:
        p = np.array([ridx[r] for r in tl.region], dtype=int)
    except KeyError as exc:
        raise DataError(f"test region {exc.args[0]} was not part of the fitted model") from None
    midx = {m: i for i, m in enumerate(lay.methods)}
    m = np.array([midx[tl.methods[k]] for k in tl.method], dtype=int)
    t = np.asarray(tl.year, dtype=int) - int(lay.grid[0])
    if np.any((t < 0) | (t >= lay.T)):
        raise DataError("test year outside the fitted projection grid")
    psi = store.psi()
    psi = psi.reshape((-1,) + psi.shape[2:])[:, p, m, t]
    se = np.asarray(tl.se, dtype=float)
    return psi + rng.standard_normal(psi.shape) * se, tl


def evaluate(store: DrawStore, test: Dataset, rng: np.random.Generator, model_name=None,
             n_train: int = 0) -> MetricReport:
    draws, tl = predictive_draws(store, test, rng)
    y = np.array([o.proportion_public for o in test.observations])
    shares = expit(draws)
    yhat = np.median(shares, axis=0)
    lo95, hi95 = np.quantile(shares, [0.025, 0.975], axis=0)
    lo80, hi80 = np.quantile(shares, [0.10, 0.90], axis=0)
    cov80, _, _ = coverage(y, lo80, hi80)
    cov95, above, below = coverage(y, lo95, hi95)
    # dispersion is judged on the logit scale
    sd_logit = np.std(draws, axis=0, ddof=1)
    return MetricReport(
        model_name=model_name or store.model.name,
        mare_pct=mare(y, yhat),
        sape=sape(np.asarray(tl.y), np.median(draws, axis=0), sd_logit),
        coverage_80_pct=cov80,
        coverage_95_pct=cov95,
        rmse_pct=rmse(y, yhat),
        median_pi_width_95_pct=pi_width(lo95, hi95),
        pct_above_95_pi=above,
        pct_below_95_pi=below,
        n_test=int(y.size),
        n_train=n_train,
    )


def run_validation(model_names, ds: Dataset, cutoff: int = 2015, cfg: SamplerConfig = SamplerConfig(),
                   basis: BasisConfig = BasisConfig(), n_jobs: int = 1) -> list[MetricReport]:
    """Fit every model on observations before ``cutoff`` and score the rest."""
    specs = [get_model(n) for n in model_names]
    train, test = split_train_test(ds, cutoff)
    if len(test) == 0:
        raise DataError(f"no test observations at or after {cutoff}")
    reports = []
    for i, spec in enumerate(specs):
        store = run_chains(spec, train, cfg, basis=basis, n_jobs=n_jobs)
        rng = np.random.default_rng([cfg.seed, 7919, i])
        reports.append(evaluate(store, test, rng, spec.name, n_train=len(train)))
    return reports


def report_frame(reports) -> pd.DataFrame:
    """Metrics as rows, models as columns."""
    data = {"metric": [label for label, _ in REPORT_ROWS]}
    for r in reports:
        data[r.model_name] = [getattr(r, key) for _, key in REPORT_ROWS]
    return pd.DataFrame(data)


def write_reports(reports, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = json.dumps([asdict(r) for r in reports], indent=2)
    csv_text = report_frame(reports).to_csv(index=False, float_format="%.2f")
    return {
        "json": atomic_write(out_dir / "validation_report.json", lambda f: f.write(payload)),
        "csv": atomic_write(out_dir / "validation_report.csv", lambda f: f.write(csv_text)),
    }


__all__ = ["mare", "sape", "rmse", "coverage", "pi_width", "MetricReport", "predictive_draws",
           "evaluate", "run_validation", "report_frame", "write_reports"]
