"""Log-linear conditional Poisson autoregression agent.

y_t | y_{t-1} ~ Poisson(exp(x_t' beta + gamma y_{t-1})), fit by Newton
iterations on the conditional log likelihood.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from countsynth.agents.errors import FitError, IdentifiabilityError

_ETA_CLAMP = 30.0


@dataclass
class INARFit:
    coef: np.ndarray     # (p + 1,): regression beta then lag coefficient gamma
    cov: np.ndarray      # observed-information covariance
    loglik: float

    @property
    def beta(self):
        return self.coef[:-1]

    @property
    def gamma(self):
        return float(self.coef[-1])

    def conditional_rate(self, x, y_prev):
        eta = np.asarray(x, float) @ self.beta + self.gamma * y_prev
        return np.exp(np.minimum(eta, _ETA_CLAMP))

    def simulate_path(self, rng, y_last, x_future, size):
        """Recursive forecasts: size replicate paths over len(x_future) steps."""
        x_future = np.atleast_2d(np.asarray(x_future, dtype=float))
        y_prev = np.full(size, float(y_last))
        for x_t in x_future:
            lam = self.conditional_rate(x_t, y_prev)
            y_prev = rng.poisson(lam).astype(float)
        return y_prev


def _loglik(target, Z, coef):
    eta = np.minimum(Z @ coef, _ETA_CLAMP)
    return float(np.sum(target * eta - np.exp(eta) - gammaln(target + 1.0)))


def inar_fit(y, x, max_iter=100, tol=1e-10):
    """MLE of (beta, gamma) from one series; x holds rows aligned with y."""
    y = np.asarray(y, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != y.shape[0]:
        raise ValueError("covariate rows must align with y")
    Z = np.column_stack([x[1:], y[:-1]])
    target = y[1:]
    dim = Z.shape[1]
    if target.shape[0] < 5 * dim:
        raise ValueError(f"need at least {5 * dim} transitions, got {target.shape[0]}")
    coef = np.zeros(dim)
    coef[0] = np.log(max(target.mean(), 0.1))
    ll = _loglik(target, Z, coef)
    for _ in range(max_iter):
        eta = np.minimum(Z @ coef, _ETA_CLAMP)
        lam = np.exp(eta)
        score = Z.T @ (target - lam)
        info = (Z.T * lam) @ Z
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise IdentifiabilityError(f"singular information matrix: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise IdentifiabilityError("non-finite Newton step")
        # halve until the likelihood improves
        scale = 1.0
        for _ in range(40):
            trial = coef + scale * step
            ll_new = _loglik(target, Z, trial)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            raise FitError("Newton step failed to improve the likelihood")
        moved = np.max(np.abs(scale * step))
        coef, ll = trial, ll_new
        if np.max(np.abs(score)) < 1e-8 and moved < tol * (1.0 + np.max(np.abs(coef))):
            break
    else:
        raise FitError("Newton iterations did not converge")
    lam = np.exp(np.minimum(Z @ coef, _ETA_CLAMP))
    info = (Z.T * lam) @ Z
    if np.linalg.cond(info) > 1e12:
        raise IdentifiabilityError("information matrix numerically singular")
    return INARFit(coef=coef, cov=np.linalg.inv(info), loglik=ll)
