"""Discount-factor forward filtering / backward sampling.

Gaussian FFBS for the random-walk synthesis weights driven by Polya-Gamma
pseudo-observations, and gamma FFBS for the time-varying intercept precision
of the heterogeneous-intercept variant.
"""

from dataclasses import dataclass

import numpy as np

_JITTER = 1e-10


class NumericalConditioningError(RuntimeError):
    pass


@dataclass
class GaussianState:
    mean: np.ndarray   # (p,)
    cov: np.ndarray    # (p, p) symmetric PSD

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)


@dataclass
class PseudoObservation:
    """One time slice of stacked pseudo-data: d = F theta + N(0, Omega^-1)."""

    d: np.ndarray       # (n_k,)
    F: np.ndarray       # (n_k, p)
    omega: np.ndarray   # (n_k,) strictly positive precisions

    def __post_init__(self):
        self.d = np.atleast_1d(np.asarray(self.d, dtype=float))
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if self.d.shape[0] != self.F.shape[0] or self.d.shape[0] != self.omega.shape[0]:
            raise ValueError("inconsistent pseudo-observation row dimensions")
        if np.any(self.omega <= 0.0):
            raise ValueError("pseudo-observation precisions must be positive")

    @classmethod
    def empty(cls, p):
        return cls(d=np.empty(0), F=np.empty((0, p)), omega=np.empty(0))


@dataclass
class GammaState:
    shape: float   # a_t, halved in the Ga(a/2, b/2) parameterisation
    rate: float    # b_t


def _symmetrize(C):
    return 0.5 * (C + C.T)


def _check_psd(C):
    w = np.linalg.eigvalsh(C)
    if w.min() < -1e-8:
        raise NumericalConditioningError(
            f"covariance lost positive semidefiniteness (min eigenvalue {w.min():.3e})"
        )


def forward_filter(prior, obs, delta):
    """Run the discounted Kalman recursion over a sequence of pseudo-observations.

    The state follows a random walk whose innovation is implied by the
    discount: R_t = C_{t-1} / delta. Returns (filtered, predictive) where
    filtered[t] is the posterior GaussianState at time t and predictive[t]
    is the one-step (g_t, Q_t) pair for the observed slice (None for an
    empty slice).
    """
    if not (0.0 < delta <= 1.0):
        raise ValueError("discount must be in (0, 1]")
    m, C = prior.mean.copy(), _symmetrize(prior.cov)
    p = m.shape[0]
    filtered = []
    predictive = []
    for ob in obs:
        a = m
        R = _symmetrize(C / delta)
        if ob.d.shape[0] == 0:
            m, C = a, R
            predictive.append(None)
        else:
            F = ob.F
            if F.shape[1] != p:
                raise ValueError("design matrix dimension mismatch")
            g = F @ a
            RFt = R @ F.T                      # (p, n_k)
            Q = F @ RFt + np.diag(1.0 / ob.omega)
            Q = _symmetrize(Q)
            # A = R F' Q^{-1} via a solve; Q is SPD
            try:
                A = np.linalg.solve(Q, RFt.T).T    # (p, n_k)
            except np.linalg.LinAlgError as exc:
                raise NumericalConditioningError("predictive covariance singular") from exc
            m = a + A @ (ob.d - g)
            C = _symmetrize(R - A @ Q @ A.T)
            if np.any(np.diag(C) < -_JITTER):
                _check_psd(C)
            predictive.append((g, Q))
        filtered.append(GaussianState(mean=m.copy(), cov=C.copy()))
    return filtered, predictive


def _draw_gaussian(rng, mean, cov):
    p = mean.shape[0]
    C = _symmetrize(cov)
    try:
        L = np.linalg.cholesky(C + _JITTER * np.eye(p))
    except np.linalg.LinAlgError:
        # fall back on an eigendecomposition for semi-definite C
        w, V = np.linalg.eigh(C)
        w = np.clip(w, 0.0, None)
        L = V * np.sqrt(w)
    return mean + L @ rng.standard_normal(p)


def backward_sample(rng, filtered, delta):
    """Draw a state trajectory from the smoothing distribution.

    theta_T ~ N(m_T, C_T); for t < T, theta_t ~ N(m_t + delta (theta_{t+1}
    - a_{t+1}), (1 - delta) C_t) with a_{t+1} = m_t under the random walk.
    Returns an array of shape (T, p).
    """
    if not filtered:
        raise ValueError("filtered sequence is empty")
    T = len(filtered)
    p = filtered[-1].mean.shape[0]
    theta = np.empty((T, p))
    theta[-1] = _draw_gaussian(rng, filtered[-1].mean, filtered[-1].cov)
    for t in range(T - 2, -1, -1):
        m_t, C_t = filtered[t].mean, filtered[t].cov
        mean = m_t + delta * (theta[t + 1] - m_t)
        cov = (1.0 - delta) * C_t
        theta[t] = _draw_gaussian(rng, mean, cov)
    return theta


def beta_gamma_ffbs(rng, residual_sums, beta_tau, prior):
    """FFBS for a discounted gamma precision process.

    residual_sums is a sequence of (n_t, ss_t) pairs: member count and sum
    of squared intercept deviations at each time. Forward: a_t = beta_tau
    a_{t-1} + n_t, b_t = beta_tau b_{t-1} + ss_t. Backward: phi2_T ~
    Ga(a_T/2, b_T/2) and phi2_t = phi2_{t+1} + Ga((1-beta_tau) a_t/2, b_t/2).
    Returns the precision path phi2 of shape (T,).
    """
    if not (0.0 < beta_tau <= 1.0):
        raise ValueError("beta_tau must be in (0, 1]")
    a, b = float(prior.shape), float(prior.rate)
    a_path, b_path = [], []
    for n_t, ss_t in residual_sums:
        if ss_t < 0.0:
            raise ValueError("residual sums must be non-negative")
        a = beta_tau * a + n_t
        b = beta_tau * b + ss_t
        a_path.append(a)
        b_path.append(b)
    T = len(a_path)
    if T == 0:
        raise ValueError("residual_sums is empty")
    if a_path[-1] <= 0.0 or b_path[-1] <= 0.0:
        raise ValueError("degenerate gamma state: zero shape or rate at T")
    phi2 = np.empty(T)
    phi2[-1] = rng.gamma(0.5 * a_path[-1], 2.0 / b_path[-1])
    for t in range(T - 2, -1, -1):
        shape = 0.5 * (1.0 - beta_tau) * a_path[t]
        e_t = rng.gamma(shape, 2.0 / b_path[t]) if shape > 0.0 else 0.0
        phi2[t] = phi2[t + 1] + e_t
    return phi2
