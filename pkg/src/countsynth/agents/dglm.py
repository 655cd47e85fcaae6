"""Poisson dynamic GLM agent with discount-factor updating.

The state is a Gaussian on the log-rate regression coefficients. Each step
moment-matches the linear predictor to a conjugate gamma prior on the
Poisson rate (digamma/trigamma inversion), applies the closed-form gamma
update, and maps the posterior moments back by linear Bayes.
"""

import numpy as np
from scipy.special import digamma, polygamma

from countsynth.ssm import GaussianState, NumericalConditioningError


def moments_from_gamma(shape, rate):
    """(E log rate, Var log rate) of a Gamma(shape, rate) variable."""
    return float(digamma(shape) - np.log(rate)), float(polygamma(1, shape))


def gamma_from_moments(f, q, max_iter=100, tol=1e-12):
    """Invert moments_from_gamma: find (shape, rate) matching (f, q).

    Solves trigamma(shape) = q by Newton (trigamma is strictly decreasing),
    then rate = exp(digamma(shape) - f).
    """
    if not np.isfinite(f) or not (q > 0.0 and np.isfinite(q)):
        raise ValueError(f"invalid linear predictor moments ({f}, {q})")
    # trigamma(a) ~ 1/a for large a and ~ 1/a^2 near zero
    a = max(1.0 / q, 1.0 / np.sqrt(q), 1e-3)
    for _ in range(max_iter):
        g = polygamma(1, a) - q
        step = g / polygamma(2, a)
        a_new = a - step
        if a_new <= 0.0:
            a_new = 0.5 * a
        if abs(a_new - a) < tol * max(1.0, a):
            a = a_new
            break
        a = a_new
    else:
        raise NumericalConditioningError(
            f"trigamma inversion did not converge for q={q} (last shape {a})"
        )
    rate = np.exp(digamma(a) - f)
    return float(a), float(rate)


def dglm_update(state, y_t, x_t, discount):
    """One DGLM step; returns (posterior state, (f_t, q_t)).

    (f_t, q_t) are the prior predictive log-rate moments at this step and
    serve directly as the agent's log-scale predictive moments.
    """
    x = np.asarray(x_t, dtype=float)
    a_vec = state.mean
    R = state.cov / discount
    Rx = R @ x
    f = float(x @ a_vec)
    q = float(x @ Rx)
    shape, rate = gamma_from_moments(f, q)
    shape_post, rate_post = shape + y_t, rate + 1.0
    g, p = moments_from_gamma(shape_post, rate_post)
    m = a_vec + Rx * (g - f) / q
    C = R - np.outer(Rx, Rx) * (1.0 - p / q) / q
    C = 0.5 * (C + C.T)
    return GaussianState(mean=m, cov=C), (f, q)


def dglm_forecast_moments(state, x_future, discount, steps):
    """s-step extrapolated log-rate moments: a = m_t, R = C_t / delta^s."""
    x = np.asarray(x_future, dtype=float)
    R = state.cov / discount**steps
    return float(x @ state.mean), float(x @ R @ x)


class DGLM:
    """Stateful wrapper holding the coefficient posterior over one series."""

    def __init__(self, dim, discount, prior_scale=4.0):
        self.discount = discount
        self.state = GaussianState(mean=np.zeros(dim), cov=prior_scale * np.eye(dim))

    def update(self, y_t, x_t):
        self.state, fq = dglm_update(self.state, y_t, x_t, self.discount)
        return fq

    def forecast_moments(self, x_future, steps):
        return dglm_forecast_moments(self.state, x_future, self.discount, steps)
