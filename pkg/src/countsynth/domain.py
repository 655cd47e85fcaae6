"""Core data model: count panels, agent predictive moments, configuration."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# continuity correction guarding log(0) in the infected-count transform
LOG_GUARD = 0.5


class Frequency(str, Enum):
    DAILY = "daily"
    WEEKLY = "weekly"


#: default (ma_window, lag) of the infected-count transform per frequency
DEFAULT_COVARIATE_WINDOWS = {
    Frequency.WEEKLY: (2, 1),
    Frequency.DAILY: (14, 7),
}


@dataclass
class CountPanel:
    """Balanced panel of n count series with an infected-count covariate."""

    y: np.ndarray          # (n, T_total) non-negative integer counts
    infected: np.ndarray   # (n, T_total) non-negative integer covariate
    labels: list           # n region identifiers
    calendar: list         # T_total ordered time stamps
    frequency: Frequency = Frequency.WEEKLY

    def __post_init__(self):
        self.y = np.asarray(self.y)
        self.infected = np.asarray(self.infected)
        self.frequency = Frequency(self.frequency)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def T_total(self):
        return self.y.shape[1]


@dataclass
class AgentPredictive:
    """Log-scale predictive moments per (series, time, agent) at one horizon.

    Entry (i, t, j) must be computed from information up to time t - horizon.
    """

    m: np.ndarray    # (n, T, J)
    s2: np.ndarray   # (n, T, J), strictly positive
    horizon: int = 1

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.s2 = np.asarray(self.s2, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not np.all(np.isfinite(self.m)):
            raise ValueError("predictive means must be finite")
        if not np.all(np.isfinite(self.s2)) or np.any(self.s2 <= 0.0):
            raise ValueError("predictive variances must be positive and finite")

    @property
    def J(self):
        return self.m.shape[2]


@dataclass
class SynthesisConfig:
    """Knobs of the synthesis Gibbs samplers."""

    K: int = 8
    a0: float = 0.01
    r: float = 1000.0
    delta_Sigma: float = 0.95
    beta_tau: float = 0.95
    m0: np.ndarray | None = None   # prior mean for theta_0k, default (0, 1/J, ...)
    C0: np.ndarray | None = None   # prior covariance, default identity
    tau2_prior_shape: float = 1.0  # gamma prior a_0 on the intercept precision
    tau2_prior_rate: float = 1.0   # gamma prior b_0
    n_iter: int = 2000
    n_burn: int = 2000
    thin: int = 2
    seed: int = 0
    variance_inflation: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.delta_Sigma <= 1.0):
            raise ValueError("delta_Sigma must be in (0, 1]")
        if not (0.0 < self.beta_tau <= 1.0):
            raise ValueError("beta_tau must be in (0, 1]")
        if self.a0 <= 0.0:
            raise ValueError("a0 must be positive")
        if self.r < 1.0:
            raise ValueError("dispersion r must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.variance_inflation <= 0.0:
            raise ValueError("variance_inflation must be positive")

    def prior_state(self, J):
        m0 = self.m0
        if m0 is None:
            m0 = np.concatenate([[0.0], np.full(J, 1.0 / J if J else 0.0)])
        C0 = self.C0 if self.C0 is not None else np.eye(J + 1)
        return np.asarray(m0, dtype=float), np.asarray(C0, dtype=float)


def covariate_transform(infected, ma_window, lag):
    """Log of the lagged trailing moving average of the infected counts.

    Returns (values, available): values[t] = log(max(LOG_GUARD, MA)) where MA
    is the ma_window-point trailing moving average of `infected` at t - lag;
    available[t] is False for the prefix with insufficient history
    (t < lag + ma_window - 1, zero-based).
    """
    infected = np.asarray(infected, dtype=float)
    if ma_window < 1 or lag < 1:
        raise ValueError("ma_window and lag must be positive")
    T = infected.shape[-1]
    if T <= lag + ma_window:
        raise ValueError(
            f"series length {T} too short for ma_window={ma_window}, lag={lag}"
        )
    if np.any(infected < 0) or not np.all(np.isfinite(infected)):
        raise ValueError("infected counts must be non-negative and finite")

    kernel = np.full(ma_window, 1.0 / ma_window)
    if infected.ndim == 1:
        ma = np.convolve(infected, kernel, mode="full")[: T]
    else:
        ma = np.stack(
            [np.convolve(row, kernel, mode="full")[: T] for row in infected]
        )
    # ma[..., t] now averages infected[..., t-ma_window+1 : t+1]
    values = np.full(infected.shape, np.nan)
    available = np.zeros(T, dtype=bool)
    first = lag + ma_window - 1
    available[first:] = True
    values[..., first:] = np.log(np.maximum(LOG_GUARD, ma[..., first - lag : T - lag]))
    return values, available


@dataclass
class PanelViolation:
    kind: str
    series: int | None = None
    time: int | None = None
    detail: str = ""

    def __str__(self):
        where = []
        if self.series is not None:
            where.append(f"series={self.series}")
        if self.time is not None:
            where.append(f"time={self.time}")
        loc = f" ({', '.join(where)})" if where else ""
        return f"{self.kind}{loc}: {self.detail}" if self.detail else f"{self.kind}{loc}"


def _calendar_step(frequency):
    import datetime

    return datetime.timedelta(days=7 if frequency == Frequency.WEEKLY else 1)


def validate_panel(panel):
    """Report-only check of the CountPanel invariants; empty list iff valid."""
    violations = []
    for name, arr in (("count", panel.y), ("infected", panel.infected)):
        values = np.asarray(arr, dtype=float)
        bad = ~np.isfinite(values) | (values < 0)
        for i, t in zip(*np.nonzero(bad)):
            violations.append(
                PanelViolation(
                    kind=f"negative_or_nonfinite_{name}",
                    series=int(i),
                    time=int(t),
                    detail=f"value {arr[i, t]!r}",
                )
            )
    if panel.y.shape != panel.infected.shape:
        violations.append(
            PanelViolation(kind="shape_mismatch", detail="y and infected differ")
        )
    if len(panel.labels) != panel.n:
        violations.append(
            PanelViolation(kind="label_count", detail=f"{len(panel.labels)} labels for {panel.n} series")
        )
    if len(panel.calendar) != panel.T_total:
        violations.append(
            PanelViolation(
                kind="calendar_length",
                detail=f"{len(panel.calendar)} stamps for {panel.T_total} columns",
            )
        )
    else:
        step = _calendar_step(panel.frequency)
        for t in range(1, len(panel.calendar)):
            prev, cur = panel.calendar[t - 1], panel.calendar[t]
            if cur <= prev:
                violations.append(
                    PanelViolation(
                        kind="calendar_not_increasing",
                        time=t,
                        detail=f"{prev} !< {cur}",
                    )
                )
            elif hasattr(cur, "toordinal") and cur - prev != step:
                violations.append(
                    PanelViolation(
                        kind="calendar_gap",
                        time=t,
                        detail=f"between {prev} and {cur}",
                    )
                )
    return violations
