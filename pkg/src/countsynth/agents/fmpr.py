"""Finite mixture of Poisson regressions: the static-coefficient baseline.

Series share one of K static coefficient vectors beta_k ~ N(0, 100 I) on
x_it = (1, covariate, covariate^2, y_{i,t-1}); the same negative binomial /
Polya-Gamma approximation as the synthesis module makes the Gibbs sampler
conditionally Gaussian.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from countsynth import polya_gamma
from countsynth.synthesis import DegenerateAssignmentError, nb_log_pmf

_EXP_CLAMP = 30.0


@dataclass
class FMPRDraws:
    beta: np.ndarray   # (L, K, p)
    z: np.ndarray      # (L, n)
    pi: np.ndarray     # (L, K)
    r: float

    @property
    def L(self):
        return self.beta.shape[0]


def _sample_beta(rng, y, x, omega, z, K, prior_var, r):
    n, T, p = x.shape
    kappa = (y - r) / 2.0
    beta = np.empty((K, p))
    logr = np.log(r)
    for k in range(K):
        mask = z == k
        prec = np.eye(p) / prior_var
        rhs = np.zeros(p)
        if np.any(mask):
            xk = x[mask].reshape(-1, p)
            wk = omega[mask].reshape(-1)
            yk = kappa[mask].reshape(-1)
            prec = prec + (xk.T * wk) @ xk
            rhs = xk.T @ (yk + wk * logr)
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ rhs
        beta[k] = mean + np.linalg.cholesky(cov) @ rng.standard_normal(p)
    return beta


def _sample_z(rng, y, x, beta, pi, r):
    psi = np.einsum("kp,ntp->knt", beta, x) - np.log(r)
    loglik = nb_log_pmf(y[None], psi, r).sum(axis=2)       # (K, n)
    with np.errstate(divide="ignore"):
        logits = np.log(pi)[:, None] + loglik
    if not np.all(np.isfinite(logits).any(axis=0)):
        raise DegenerateAssignmentError("no cluster carries finite mass")
    probs = np.exp(logits - logsumexp(logits, axis=0, keepdims=True))
    cum = np.cumsum(probs, axis=0)
    u = rng.random(y.shape[0]) * cum[-1]
    return (u[None, :] < cum).argmax(axis=0)


def fmpr_fit(y, x, K, rng, prior_var=100.0, a0=0.01, r=1000.0,
             n_burn=500, n_iter=500, thin=1):
    """Gibbs sampler for the mixture of static Poisson regressions.

    y (n, T) counts; x (n, T, p) regressors already containing the lagged
    count; returns thinned post-burn-in draws.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.size == 0:
        raise ValueError("empty panel")
    n, T = y.shape
    p = x.shape[2]
    z = rng.integers(0, K, size=n)
    pi = np.full(K, 1.0 / K)
    beta = np.zeros((K, p))
    beta[:, 0] = np.log(max(y.mean(), 0.5))
    kept_beta, kept_z, kept_pi = [], [], []
    total = n_burn + n_iter * thin
    for scan in range(total):
        psi = np.einsum("ntp,np->nt", x, beta[z]) - np.log(r)
        omega = polya_gamma.pg_sample(rng, r + y, psi)
        beta = _sample_beta(rng, y, x, omega, z, K, prior_var, r)
        if K > 1:
            z = _sample_z(rng, y, x, beta, pi, r)
            pi = rng.dirichlet(a0 + np.bincount(z, minlength=K))
        if scan >= n_burn and (scan - n_burn) % thin == 0:
            kept_beta.append(beta.copy())
            kept_z.append(z.copy())
            kept_pi.append(pi.copy())
    return FMPRDraws(
        beta=np.stack(kept_beta), z=np.stack(kept_z), pi=np.stack(kept_pi), r=r
    )


def fmpr_forecast(rng, draws, i, cov_future, y_last, n_draws=4000):
    """Recursive horizon-s forecast draws for series i.

    cov_future holds the covariate value at each step ahead; each emission
    rebuilds x = (1, c, c^2, y_prev) from the previously emitted count.
    """
    cov_future = np.atleast_1d(np.asarray(cov_future, dtype=float))
    sel = rng.integers(0, draws.L, size=n_draws)
    beta = draws.beta[sel, draws.z[sel, i]]               # (n_draws, p)
    y_prev = np.full(n_draws, float(y_last))
    log_rate = None
    for c in cov_future:
        x = np.column_stack([np.ones(n_draws), np.full(n_draws, c),
                             np.full(n_draws, c * c), y_prev])
        log_rate = np.minimum(np.einsum("bp,bp->b", beta, x), _EXP_CLAMP)
        y_prev = rng.poisson(np.exp(log_rate)).astype(float)
    return y_prev.astype(np.int64), log_rate
