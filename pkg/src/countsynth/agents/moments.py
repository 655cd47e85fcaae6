"""Uniform production of log-scale predictive moments from every agent.

A SeriesForecaster wraps one (series, agent kind, horizon) combination and
returns (m, s^2) for any forecast origin, using only data up to the origin.
Covariate values must already be horizon-lagged by the caller so that the
value at a target time is observable at origin = target - horizon.
"""

from dataclasses import dataclass, replace

import numpy as np

from countsynth.agents.bootstrap import bootstrap_log_moments
from countsynth.agents.dglm import DGLM
from countsynth.agents.errors import FitError
from countsynth.agents.gam import SplineSpec, gam_fit
from countsynth.agents.inar import inar_fit
from countsynth.agents.sihr import SIHRConfig, sihr_power_weighted_fit

AGENT_KINDS = ("DGLM", "GAM", "INAR", "SIHR")
_S2_FLOOR = 1e-6


@dataclass
class AgentSpec:
    kind: str
    covariate_recipe: str = "quadratic_infected"
    discount: float = 0.95
    bootstrap_reps: int = 1000

    def __post_init__(self):
        if self.kind not in AGENT_KINDS + ("FMPR",):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.bootstrap_reps < 100:
            raise ValueError("bootstrap_reps must be at least 100")


def default_agent_specs(discount=0.95):
    return tuple(AgentSpec(kind=k, discount=discount) for k in AGENT_KINDS)


def quadratic_design(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return np.column_stack([np.ones_like(c), c, c * c])


class _PointSimulator:
    """Adapts a GAM fit to simulate(rng, horizon, size) at one target point."""

    def __init__(self, fit, covariates):
        self.fit = fit
        self.covariates = covariates

    def simulate(self, rng, horizon, size):
        return self.fit.simulate(rng, self.covariates, size)[:, 0]


class _PathSimulator:
    """Adapts an INAR fit: recursive simulation from the last observed count."""

    def __init__(self, fit, y_last, x_future):
        self.fit = fit
        self.y_last = y_last
        self.x_future = x_future

    def simulate(self, rng, horizon, size):
        return self.fit.simulate_path(rng, self.y_last, self.x_future, size)


class SeriesForecaster:
    """Log-moment forecasts for one series under one agent and horizon.

    y and cov are the full series arrays; every method touches only indices
    up to the forecast origin (plus horizon-lagged covariates at the target,
    which are observable at the origin by construction).
    """

    def __init__(self, spec, y, cov, start, horizon, rng,
                 sihr_config=None, gam_spec=None):
        self.spec = spec
        self.y = np.asarray(y, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.start = int(start)
        self.horizon = int(horizon)
        self.rng = rng
        self.sihr_config = sihr_config or SIHRConfig()
        self.gam_spec = gam_spec or SplineSpec()
        if spec.kind == "DGLM":
            self._dglm = DGLM(dim=3, discount=spec.discount)
            self._next = self.start
        self._sihr_warm = None

    def moments(self, origin):
        """(m, s2) for the target time origin + horizon."""
        target = origin + self.horizon
        kind = self.spec.kind
        if kind == "DGLM":
            m, s2 = self._dglm_moments(origin, target)
        elif kind == "GAM":
            m, s2 = self._gam_moments(origin, target)
        elif kind == "INAR":
            m, s2 = self._inar_moments(origin, target)
        elif kind == "SIHR":
            m, s2 = self._sihr_moments(origin)
        else:
            raise ValueError(f"{kind} does not produce log moments")
        if not (np.isfinite(m) and np.isfinite(s2)):
            raise FitError(f"{kind} produced non-finite moments at origin {origin}")
        return float(m), float(max(s2, _S2_FLOOR))

    def _dglm_moments(self, origin, target):
        for u in range(self._next, origin + 1):
            self._dglm.update(self.y[u], quadratic_design(self.cov[u])[0])
        self._next = max(self._next, origin + 1)
        x = quadratic_design(self.cov[target])[0]
        return self._dglm.forecast_moments(x, self.horizon)

    def _gam_moments(self, origin, target):
        sl = slice(self.start, origin + 1)
        times = np.arange(self.start, origin + 1, dtype=float)
        fit = gam_fit(self.y[sl], [self.cov[sl], times], self.gam_spec)
        sim = _PointSimulator(fit, [[self.cov[target]], [float(target)]])
        return bootstrap_log_moments(
            self.rng, sim, self.horizon, self.spec.bootstrap_reps
        )

    def _inar_moments(self, origin, target):
        sl = slice(self.start, origin + 1)
        fit = inar_fit(self.y[sl], quadratic_design(self.cov[sl]))
        x_future = quadratic_design(self.cov[origin + 1:target + 1])
        sim = _PathSimulator(fit, self.y[origin], x_future)
        return bootstrap_log_moments(
            self.rng, sim, self.horizon, self.spec.bootstrap_reps
        )

    def _sihr_moments(self, origin):
        cfg = replace(self.sihr_config, init_params=self._sihr_warm)
        try:
            fit = sihr_power_weighted_fit(self.y[: origin + 1], self.spec.discount, cfg)
        except FitError as exc:
            if exc.fit is None:
                raise
            fit = exc.fit
        self._sihr_warm = fit.transformed
        return bootstrap_log_moments(
            self.rng, fit, self.horizon, self.spec.bootstrap_reps
        )
