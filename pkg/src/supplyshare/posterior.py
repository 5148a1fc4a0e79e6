"""Posterior summaries: trajectories, cross-method correlations and cross-region tables.

Every summary transforms each draw first and aggregates afterwards, so the
public and private shares of a draw always sum to one.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from .distributions import cov_to_corr
from .errors import DataError
from .sampler import DrawStore, atomic_write

QUANTILES = (0.025, 0.5, 0.975)
CLOSURE_NOTE = ("# public and private shares sum to 1 in every posterior draw; "
                "their medians and interval bounds need not sum to 1")


def _public_draws(store: DrawStore) -> np.ndarray:
    """Public share per draw, ``(S, P, M, T)`` with chains pooled."""
    if store.n_draws == 0:
        raise DataError("draw store is empty")
    psi = store.psi()
    return expit(psi.reshape((-1,) + psi.shape[2:]))


def _grid_index(store: DrawStore, years) -> np.ndarray:
    grid = store.layout.grid
    years = np.atleast_1d(np.asarray(years, dtype=int))
    idx = years - int(grid[0])
    bad = (idx < 0) | (idx >= grid.size)
    if np.any(bad):
        raise DataError(f"year {int(years[bad][0])} outside the projection grid "
                        f"{int(grid[0])}-{int(grid[-1])}")
    return idx


def summarize_trajectories(store: DrawStore, years=None) -> pd.DataFrame:
    """Median and central 95% interval of public and private shares.

    Returns one row per (region, method, year) with columns
    ``public_median, public_lower_2_5, public_upper_97_5`` and the matching
    ``private_*`` columns, where the private share is ``1 - public`` per draw.
    """
    lay = store.layout
    idx = np.arange(lay.T) if years is None else _grid_index(store, years)
    public = _public_draws(store)[..., idx]
    q_pub = np.quantile(public, QUANTILES, axis=0)
    q_priv = np.quantile(1.0 - public, QUANTILES, axis=0)
    P, M, T = public.shape[1:]
    reg, meth, yr = np.meshgrid(np.arange(P), np.arange(M), np.arange(T), indexing="ij")
    frame = pd.DataFrame({
        "region_id": np.asarray(lay.regions, dtype=object)[reg.ravel()],
        "method_id": np.array([m.value for m in lay.methods], dtype=object)[meth.ravel()],
        "year": lay.grid[idx][yr.ravel()].astype(int),
    })
    for prefix, q in (("public", q_pub), ("private", q_priv)):
        frame[f"{prefix}_median"] = q[1].ravel()
        frame[f"{prefix}_lower_2_5"] = q[0].ravel()
        frame[f"{prefix}_upper_97_5"] = q[2].ravel()
    return frame


def correlation_summary(store: DrawStore, level: str = "subnational") -> np.ndarray:
    """Elementwise posterior median of the cross-method correlation matrix.

    ``level="national"`` uses the country-level covariance, ``"subnational"``
    the region-level one.
    """
    key = {"national": "sigma_theta", "subnational": "sigma_alpha"}.get(level)
    if key is None:
        raise ValueError(f"level must be 'national' or 'subnational', not {level!r}")
    sig = store.draws[key]
    corr = cov_to_corr(sig.reshape((-1,) + sig.shape[2:]))
    med = np.median(corr, axis=0)
    med = 0.5 * (med + med.T)
    np.fill_diagonal(med, 1.0)
    return med


def year_summary(store: DrawStore, year: int) -> pd.DataFrame:
    """Cross-region median and SD of per-region posterior-median shares in ``year``."""
    idx = _grid_index(store, year)[0]
    public = _public_draws(store)[..., idx]
    med_pub = np.median(public, axis=0)
    med_priv = np.median(1.0 - public, axis=0)
    rows = []
    for m, method in enumerate(store.layout.methods):
        rows.append({
            "method": method.value,
            "public_median": float(np.median(med_pub[:, m])),
            "public_sd": float(np.std(med_pub[:, m], ddof=1)) if med_pub.shape[0] > 1 else 0.0,
            "private_median": float(np.median(med_priv[:, m])),
            "private_sd": float(np.std(med_priv[:, m], ddof=1)) if med_priv.shape[0] > 1 else 0.0,
        })
    return pd.DataFrame(rows)


def trajectories_long(summary: pd.DataFrame) -> pd.DataFrame:
    """Long table ``region, method, year, sector, median, lo, hi``."""
    parts = []
    for sector in ("public", "private"):
        parts.append(pd.DataFrame({
            "region": summary["region_id"], "method": summary["method_id"], "year": summary["year"],
            "sector": sector, "median": summary[f"{sector}_median"],
            "lo": summary[f"{sector}_lower_2_5"], "hi": summary[f"{sector}_upper_97_5"],
        }))
    return pd.concat(parts, ignore_index=True).sort_values(
        ["region", "method", "sector", "year"], kind="stable").reset_index(drop=True)


def plot_frame(store: DrawStore, summary: pd.DataFrame) -> pd.DataFrame:
    """Plot-ready long table: one row per region, method, year, sector and statistic."""
    long = trajectories_long(summary)
    country = dict(zip(store.layout.regions, np.asarray(store.layout.countries)[store.layout.region_country]))
    long.insert(0, "country", long["region"].map(country))
    return long.melt(id_vars=["country", "region", "method", "year", "sector"],
                     value_vars=["median", "lo", "hi"], var_name="statistic", value_name="share")


def _csv_with_note(frame: pd.DataFrame, note: str | None = None) -> str:
    buf = io.StringIO()
    if note:
        buf.write(note + "\n")
    frame.to_csv(buf, index=False, float_format="%.6f")
    return buf.getvalue()


def write_outputs(store: DrawStore, out_dir, year: int | None = None) -> dict:
    """Write ``trajectories.csv``, ``correlations.csv``, ``plot_data.csv`` and, when
    ``year`` is given, ``year_summary.csv``. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if year is not None:
        _grid_index(store, year)
    summary = summarize_trajectories(store)
    written = {}
    text = _csv_with_note(trajectories_long(summary), CLOSURE_NOTE)
    written["trajectories"] = atomic_write(out_dir / "trajectories.csv", lambda f: f.write(text))
    methods = [m.value for m in store.layout.methods]
    rows = []
    for level in ("national", "subnational"):
        mat = correlation_summary(store, level)
        for i, a in enumerate(methods):
            for j, b in enumerate(methods):
                rows.append({"level": level, "method_a": a, "method_b": b, "correlation": mat[i, j]})
    text = _csv_with_note(pd.DataFrame(rows))
    written["correlations"] = atomic_write(out_dir / "correlations.csv", lambda f: f.write(text))
    text = _csv_with_note(plot_frame(store, summary), CLOSURE_NOTE)
    written["plot_data"] = atomic_write(out_dir / "plot_data.csv", lambda f: f.write(text))
    if year is not None:
        text = _csv_with_note(year_summary(store, year), CLOSURE_NOTE)
        written["year_summary"] = atomic_write(out_dir / "year_summary.csv", lambda f: f.write(text))
    return written
