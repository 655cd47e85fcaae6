"""Forecast scoring and latent-factor diagnostics.

CAPE and LPDR curves, strict 95% interval coverage, Monte Carlo empirical
R-squared of one agent's latent factor against the others, and the
(level, roughness) series profile used to characterise clusters.
"""

from dataclasses import dataclass, field

import numpy as np


def cape(actuals, point_forecasts):
    """Running sum of absolute prediction errors."""
    actuals = np.asarray(actuals, dtype=float)
    point_forecasts = np.asarray(point_forecasts, dtype=float)
    if actuals.shape != point_forecasts.shape:
        raise ValueError("actuals and forecasts must be aligned")
    return np.cumsum(np.abs(actuals - point_forecasts))


def lpdr(reference_log_pmfs, candidate_log_pmfs):
    """Pointwise candidate - reference log predictive mass at the outcomes.

    Entries where either side underflowed (non-finite) are NaN, marking the
    curve unavailable there rather than propagating -inf.
    """
    ref = np.asarray(reference_log_pmfs, dtype=float)
    cand = np.asarray(candidate_log_pmfs, dtype=float)
    if ref.shape != cand.shape:
        raise ValueError("log pmf sequences must be aligned")
    out = cand - ref
    out[~np.isfinite(ref) | ~np.isfinite(cand)] = np.nan
    return out


def interval_coverage(actuals, intervals):
    """Fraction of outcomes strictly inside their (L, U) interval."""
    actuals = np.asarray(actuals, dtype=float)
    intervals = np.asarray(intervals, dtype=float)
    L, U = intervals[..., 0], intervals[..., 1]
    if np.any(L > U):
        raise ValueError("intervals must satisfy L <= U")
    inside = (L < actuals) & (actuals < U)
    return float(inside.mean())


@dataclass
class R2Result:
    r2: np.ndarray            # (J,) per-agent values
    paired_r2: np.ndarray     # (J, J) symmetric, NaN diagonal
    collinear: np.ndarray     # (J,) flags where the regression was degenerate


def _r2_of_regression(target, X):
    """R-squared of an intercept-augmented least squares fit; flags rank loss."""
    L = target.shape[0]
    Xa = np.column_stack([np.ones(L), X])
    coef, _, rank, _ = np.linalg.lstsq(Xa, target, rcond=None)
    resid = target - Xa @ coef
    tss = np.sum((target - target.mean()) ** 2)
    if tss <= 0.0 or rank < Xa.shape[1]:
        return 1.0, True
    r2 = 1.0 - np.sum(resid**2) / tss
    return float(np.clip(r2, 0.0, 1.0)), False


def mc_empirical_r2(factor_draws):
    """Agent redundancy across posterior draws of the latent factors.

    factor_draws has shape (L, J): L Monte Carlo draws of the J latent
    factors at one (series, time). For each agent j the R-squared of the
    regression of its draws on all other agents' draws is returned, plus
    the squared-correlation matrix of agent pairs.
    """
    f = np.asarray(factor_draws, dtype=float)
    if f.ndim != 2:
        raise ValueError("factor_draws must be (L, J)")
    L, J = f.shape
    if L < J + 2:
        raise ValueError(f"need at least J + 2 = {J + 2} draws, got {L}")
    r2 = np.empty(J)
    collinear = np.zeros(J, dtype=bool)
    for j in range(J):
        others = np.delete(f, j, axis=1)
        r2[j], collinear[j] = _r2_of_regression(f[:, j], others)
    corr = np.corrcoef(f.T)
    paired = corr**2
    np.fill_diagonal(paired, np.nan)
    return R2Result(r2=r2, paired_r2=paired, collinear=collinear)


def panel_average_r2(factor_draws_panel):
    """Series-averaged per-agent and paired R-squared.

    factor_draws_panel has shape (L, n, J) for one time point.
    """
    f = np.asarray(factor_draws_panel, dtype=float)
    L, n, J = f.shape
    r2 = np.zeros(J)
    paired = np.zeros((J, J))
    for i in range(n):
        res = mc_empirical_r2(f[:, i, :])
        r2 += res.r2
        paired += np.nan_to_num(res.paired_r2)
    paired /= n
    np.fill_diagonal(paired, np.nan)
    return r2 / n, paired


@dataclass
class SeriesProfile:
    log_mean_level: float
    mean_abs_change_rate: float
    skipped_rates: int = 0   # change-rate terms dropped for zero denominators


def series_profile(y):
    """(log average level, mean absolute rate of change) of one series."""
    y = np.asarray(y, dtype=float)
    log_mean = float(np.log(y.mean()))
    prev = y[:-1]
    cur = y[1:]
    ok = prev > 0
    rates = np.abs(cur[ok] - prev[ok]) / prev[ok]
    denom = len(prev)
    rate = float(rates.sum() / denom) if denom else 0.0
    return SeriesProfile(
        log_mean_level=log_mean,
        mean_abs_change_rate=rate,
        skipped_rates=int((~ok).sum()),
    )
