"""Compartment-model agent: susceptible / infected / hospitalised / recovered.

dS/dt = -alpha I S / N          dI/dt = alpha I S / N - (beta + delta_I) I
dH/dt = beta I - delta_H H      dR/dt = delta_I I + delta_H H

Solved by fixed-step RK4; parameters and initial conditions are fitted by
maximizing a power-weighted Poisson likelihood of the counts against the
H compartment, with older observations discounted by a_s = delta^(t-s).
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize
from scipy.special import expit, logit

from countsynth.agents.errors import FitError


@njit(cache=True)
def _rk4_core(s0, i0, h0, r0, N, alpha, beta, delta_I, delta_H, dt, steps):
    out = np.empty((steps + 1, 4))
    s, i, h, r = s0, i0, h0, r0
    out[0, 0], out[0, 1], out[0, 2], out[0, 3] = s, i, h, r
    for n in range(steps):
        ks = np.empty((4, 4))
        xs, xi, xh, xr = s, i, h, r
        for stage in range(4):
            ds = -alpha * xi * xs / N
            di = alpha * xi * xs / N - (beta + delta_I) * xi
            dh = beta * xi - delta_H * xh
            dr = delta_I * xi + delta_H * xh
            ks[stage, 0], ks[stage, 1], ks[stage, 2], ks[stage, 3] = ds, di, dh, dr
            if stage == 0 or stage == 1:
                frac = 0.5
            elif stage == 2:
                frac = 1.0
            else:
                frac = 0.0
            xs = s + frac * dt * ds
            xi = i + frac * dt * di
            xh = h + frac * dt * dh
            xr = r + frac * dt * dr
        s += dt * (ks[0, 0] + 2 * ks[1, 0] + 2 * ks[2, 0] + ks[3, 0]) / 6.0
        i += dt * (ks[0, 1] + 2 * ks[1, 1] + 2 * ks[2, 1] + ks[3, 1]) / 6.0
        h += dt * (ks[0, 2] + 2 * ks[1, 2] + 2 * ks[2, 2] + ks[3, 2]) / 6.0
        r += dt * (ks[0, 3] + 2 * ks[1, 3] + 2 * ks[2, 3] + ks[3, 3]) / 6.0
        out[n + 1, 0], out[n + 1, 1], out[n + 1, 2], out[n + 1, 3] = s, i, h, r
    return out


@dataclass
class SIHRState:
    S: float
    I: float
    H: float
    R: float
    alpha: float
    beta: float
    delta_I: float
    delta_H: float

    def __post_init__(self):
        for name in ("S", "I", "H", "R"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"compartment {name} must be non-negative")
        for name in ("alpha", "beta", "delta_I", "delta_H"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"rate {name} must lie in (0, 1)")

    @property
    def N(self):
        return self.S + self.I + self.H + self.R


def sihr_solve(state, dt, steps):
    """RK4 trajectory, shape (steps + 1, 4) with columns (S, I, H, R)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    traj = _rk4_core(
        state.S, state.I, state.H, state.R, state.N,
        state.alpha, state.beta, state.delta_I, state.delta_H, dt, steps,
    )
    if traj.min() < -1e-9 * max(state.N, 1.0):
        raise ValueError("negative compartment: decrease the step size dt")
    return traj


def power_weights(t, delta):
    """a_s = delta^(t-s) for s = 1..t (most recent weight 1)."""
    return delta ** np.arange(t - 1, -1, -1, dtype=float)


def power_weighted_mean(y, delta):
    """Closed-form common-mean fit: sum a_s y_s / sum a_s."""
    y = np.asarray(y, dtype=float)
    a = power_weights(y.shape[0], delta)
    return float(a @ y / a.sum())


@dataclass
class SIHRConfig:
    N: float = 1e6
    dt: float = 0.25
    max_iter: int = 200
    init_params: np.ndarray | None = None   # warm start in transformed space


@dataclass
class SIHRFit:
    state0: SIHRState        # fitted initial conditions and rates at time 0
    config: SIHRConfig
    t_fit: int               # number of observations used
    lambda_path: np.ndarray  # fitted H at times 1..t_fit
    transformed: np.ndarray  # optimizer point, for warm starts
    converged: bool

    def forecast(self, steps_ahead):
        """H at time t_fit + steps_ahead."""
        per = int(round(1.0 / self.config.dt))
        total = (self.t_fit + steps_ahead) * per
        traj = sihr_solve(self.state0, self.config.dt, total)
        return float(traj[-1, 2])

    def simulate(self, rng, steps_ahead, size):
        lam = max(self.forecast(steps_ahead), 1e-10)
        return rng.poisson(lam, size=size)


def _unpack(params, N):
    alpha, beta, delta_I, delta_H = expit(params[:4])
    i0 = N * expit(params[4])
    h0 = N * expit(params[5])
    return alpha, beta, delta_I, delta_H, i0, h0


def _h_path(params, N, t, dt):
    alpha, beta, delta_I, delta_H, i0, h0 = _unpack(params, N)
    s0 = max(N - i0 - h0, 0.0)
    per = int(round(1.0 / dt))
    traj = _rk4_core(s0, i0, h0, 0.0, N, alpha, beta, delta_I, delta_H, dt, t * per)
    return traj[per::per, 2]    # H at integer times 1..t


# Optimizer box in transformed space; keeps expit strictly inside (0, 1)
# so the fitted rates always satisfy the SIHRState constraints.
_PARAM_BOUND = 12.0


def sihr_power_weighted_fit(y, delta, config=None):
    """Fit the compartment model to one series by discounted Poisson likelihood."""
    config = config or SIHRConfig()
    y = np.asarray(y, dtype=float)
    t = y.shape[0]
    if t < 8:
        raise ValueError(f"need at least 8 observations, got {t}")
    a = power_weights(t, delta)

    def negloglik(params):
        lam = np.maximum(_h_path(params, config.N, t, config.dt), 1e-10)
        return -float(a @ (y * np.log(lam) - lam))

    if config.init_params is not None:
        x0 = np.asarray(config.init_params, dtype=float)
    else:
        level = max(y.mean(), 1.0)
        x0 = np.array([
            logit(0.3), logit(0.1), logit(0.1), logit(0.1),
            logit(min(10.0 * level / config.N, 0.4)),
            logit(min(level / config.N, 0.4)),
        ])
    x0 = np.clip(x0, -_PARAM_BOUND, _PARAM_BOUND)
    res = minimize(
        negloglik, x0, method="L-BFGS-B",
        bounds=[(-_PARAM_BOUND, _PARAM_BOUND)] * x0.shape[0],
        options={"maxiter": config.max_iter, "ftol": 1e-10},
    )
    alpha, beta, delta_I, delta_H, i0, h0 = _unpack(res.x, config.N)
    state0 = SIHRState(
        S=max(config.N - i0 - h0, 0.0), I=i0, H=h0, R=0.0,
        alpha=alpha, beta=beta, delta_I=delta_I, delta_H=delta_H,
    )
    fit = SIHRFit(
        state0=state0, config=config, t_fit=t,
        lambda_path=_h_path(res.x, config.N, t, config.dt),
        transformed=res.x.copy(), converged=bool(res.success),
    )
    if not np.isfinite(res.fun):
        raise FitError("compartment fit diverged", fit=fit)
    return fit
