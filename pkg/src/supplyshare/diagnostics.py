"""Convergence diagnostics: rank-normalized split-R-hat, bulk ESS and MC standard errors."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import ConvergenceWarning

RHAT_THRESHOLD = 1.01
MIN_DRAWS = 50


def _as_chains(draws, parameter=None) -> np.ndarray:
    if parameter is not None:
        draws = draws.parameter(parameter)
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected (chains, draws) array, got shape {x.shape}")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    n = x.shape[1]
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def r_hat(draws, parameter: str | None = None) -> float:
    """Rank-normalized split-R-hat: the larger of the bulk and folded versions.

    ``draws`` is a ``(chains, draws)`` array, or a DrawStore together with a
    ``parameter`` name. A chain without variation gives ``inf`` and a
    :class:`ConvergenceWarning`.
    """
    x = _as_chains(draws, parameter)
    if x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    s = _split(x)
    if np.any(np.ptp(s, axis=1) == 0.0):
        warnings.warn(f"constant chain for {parameter or 'parameter'}; R-hat undefined",
                      ConvergenceWarning, stacklevel=2)
        return float("inf")
    bulk = _rhat_basic(_rank_normalize(s))
    folded = _rhat_basic(_rank_normalize(np.abs(s - np.median(s))))
    return max(bulk, folded)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance of each row via FFT (biased estimator)."""
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def _ess_raw(x: np.ndarray) -> float:
    """ESS of a ``(chains, draws)`` array with Geyer's initial monotone sequence."""
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float("nan")
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum of consecutive pairs, truncated at the first negative pair, made monotone
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    neg = np.nonzero(pairs < 0)[0]
    pairs = pairs[: neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess(draws, parameter: str | None = None) -> float:
    """Bulk effective sample size (rank-normalized split chains)."""
    x = _as_chains(draws, parameter)
    s = _split(x)
    if np.any(np.ptp(s, axis=1) == 0.0):
        return float("nan")
    return _ess_raw(_rank_normalize(s))


def ess_mean(draws, parameter: str | None = None) -> float:
    """ESS for the posterior mean (split chains, no rank transform)."""
    x = _as_chains(draws, parameter)
    s = _split(x)
    if np.any(np.ptp(s, axis=1) == 0.0):
        return float("nan")
    return _ess_raw(s)


def mcse_mean(draws, parameter: str | None = None) -> float:
    """Monte Carlo standard error of the posterior mean."""
    x = _as_chains(draws, parameter)
    return float(x.std(ddof=1) / np.sqrt(ess_mean(x)))


def mcse_quantile(draws, prob: float, parameter: str | None = None) -> float:
    """Monte Carlo SE of a posterior quantile (indicator-ESS method)."""
    x = _as_chains(draws, parameter)
    flat = np.sort(x.ravel())
    ind = (x <= np.quantile(flat, prob)).astype(float)
    if np.ptp(ind) == 0.0:
        return 0.0
    n_eff = _ess_raw(_split(ind))
    half = 1.959964 * np.sqrt(prob * (1 - prob) / n_eff)
    s = flat.size
    lo = flat[max(int(np.floor(s * (prob - half))), 0)]
    hi = flat[min(int(np.ceil(s * (prob + half))), s - 1)]
    return float((hi - lo) / (2 * 1.959964))


def convergence_report(store, threshold: float = RHAT_THRESHOLD) -> list[dict]:
    """One record per scalar parameter: ``parameter, r_hat, ess, acceptance_rate, flagged``.

    Gibbs and slice updates always accept, so their acceptance rate is 1;
    Metropolis-updated parameters report their post-burn-in rate.
    """
    if store.n_draws < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} kept draws for diagnostics")
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for name in store.scalar_names():
            x = store.parameter(name)
            rh = r_hat(x)
            base = name.partition("[")[0]
            out.append({
                "parameter": name,
                "r_hat": rh if np.isfinite(rh) else None,
                "ess": ess(x) if np.isfinite(rh) else None,
                "acceptance_rate": float(store.acceptance.get(base, 1.0)),
                "flagged": bool(not np.isfinite(rh) or rh > threshold),
            })
    return out
