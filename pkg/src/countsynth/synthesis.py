"""Gibbs samplers for Poisson predictive synthesis of count panels.

Three variants share one sweep: BPS (single component), MBPS (finite
mixture over series with a sparse Dirichlet prior), and MBPSH (MBPS plus
per-series intercept deviations with discounted time-varying variance).
The Poisson synthesis mass is approximated by a negative binomial with a
large dispersion r, which makes every conditional Gaussian or standard
after Polya-Gamma augmentation.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from countsynth import polya_gamma
from countsynth.ssm import (
    GammaState,
    GaussianState,
    PseudoObservation,
    backward_sample,
    beta_gamma_ffbs,
    forward_filter,
)

VARIANTS = ("BPS", "MBPS", "MBPSH")

_EXP_CLAMP = 30.0  # caps the synthesis log-rate when emitting Poisson draws


class DegenerateAssignmentError(RuntimeError):
    pass


def nb_log_pmf(y, psi, r):
    """Log mass of the negative binomial surrogate at logit-rate psi.

    log Gamma(y+r) - log Gamma(r) - log y! + y psi - (y+r) log(1 + e^psi);
    for r large this approximates Poisson(r e^psi) closely.
    """
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float)
    out = (
        gammaln(y + r)
        - gammaln(r)
        - gammaln(y + 1.0)
        + y * psi
        - (y + r) * np.logaddexp(0.0, psi)
    )
    return float(out) if out.ndim == 0 else out


def sample_omega(rng, y, theta_tz, F, r):
    """PG auxiliary for one cell: PG(r + y, theta'F - log r)."""
    psi = float(np.dot(theta_tz, F)) - np.log(r)
    return polya_gamma.pg_sample(rng, r + y, psi)


def _sample_omega_batch(rng, y, psi, r):
    return polya_gamma.pg_sample(rng, r + y, psi)


def sample_factors(rng, y, omega, theta_tz, m, s2, r):
    """Draw the latent factor vector for one cell from its full conditional.

    theta_tz includes the intercept; m, s2 are the agent moments (J,).
    """
    theta0 = theta_tz[0]
    th = np.asarray(theta_tz[1:], dtype=float)
    m = np.asarray(m, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    kappa = (y - r) / 2.0
    prec = omega * np.outer(th, th) + np.diag(1.0 / s2)
    Shat = np.linalg.inv(prec)
    Shat = 0.5 * (Shat + Shat.T)
    rhs = (omega * (np.log(r) - theta0) + kappa) * th + m / s2
    mhat = Shat @ rhs
    L = np.linalg.cholesky(Shat)
    return mhat + L @ rng.standard_normal(th.shape[0])


def _sample_factors_batch(rng, y, omega, theta_cells, m, s2, r, u=None):
    """Vectorised factor draw for all (i, t) cells.

    theta_cells is (n, T, J+1) holding theta_{t, z_i}; u shifts the
    intercept under the heterogeneous variant.
    """
    n, T, J = m.shape
    theta0 = theta_cells[..., 0]
    if u is not None:
        theta0 = theta0 + u
    th = theta_cells[..., 1:]                       # (n, T, J)
    kappa = (y - r) / 2.0
    prec = omega[..., None, None] * th[..., :, None] * th[..., None, :]
    idx = np.arange(J)
    prec[..., idx, idx] += 1.0 / s2
    Shat = np.linalg.inv(prec.reshape(n * T, J, J))
    Shat = 0.5 * (Shat + np.transpose(Shat, (0, 2, 1)))
    rhs = (omega * (np.log(r) - theta0) + kappa)[..., None] * th + m / s2
    mhat = np.einsum("bij,bj->bi", Shat, rhs.reshape(n * T, J))
    L = np.linalg.cholesky(Shat)
    eps = rng.standard_normal((n * T, J))
    f = mhat + np.einsum("bij,bj->bi", L, eps)
    return f.reshape(n, T, J)


def sample_assignments(rng, y, theta, pi, f, r, u=None, tau2=None):
    """Draw cluster labels from their categorical full conditional.

    y (n, T); theta (K, T, J+1); f (n, T, J). Under MBPSH the intercept
    deviations u (n, T) enter the likelihood and their prior variances
    tau2 (K, T) contribute a density term per candidate cluster.
    """
    n, T = y.shape
    K = theta.shape[0]
    F = np.concatenate([np.ones((n, T, 1)), f], axis=2)       # (n, T, J+1)
    psi = np.einsum("ktp,ntp->knt", theta, F) - np.log(r)      # (K, n, T)
    if u is not None:
        psi = psi + u[None, :, :]
    loglik = nb_log_pmf(y[None, :, :], psi, r).sum(axis=2)     # (K, n)
    if u is not None and tau2 is not None:
        u_prior = -0.5 * (
            np.log(2.0 * np.pi * tau2)[:, None, :]
            + u[None, :, :] ** 2 / tau2[:, None, :]
        ).sum(axis=2)                                          # (K, n)
        loglik = loglik + u_prior
    with np.errstate(divide="ignore"):
        logits = np.log(pi)[:, None] + loglik                  # (K, n)
    finite = np.isfinite(logits).any(axis=0)
    if not np.all(finite):
        raise DegenerateAssignmentError(
            f"all-cluster log mass degenerate for series {np.nonzero(~finite)[0]}"
        )
    logits = logits - logsumexp(logits, axis=0, keepdims=True)
    probs = np.exp(logits)                                     # (K, n)
    cum = np.cumsum(probs, axis=0)
    udraw = rng.random(n) * cum[-1]
    return (udraw[None, :] < cum).argmax(axis=0)


def sample_mixture_weights(rng, z, a0, K):
    counts = np.bincount(np.asarray(z), minlength=K)
    return rng.dirichlet(a0 + counts)


def sample_weights_block(rng, y_k, omega_k, f_k, delta_Sigma, prior, r, u_k=None):
    """FFBS draw of one cluster's weight trajectory theta_{1:T,k}.

    y_k, omega_k (n_k, T); f_k (n_k, T, J). Empty clusters (n_k = 0) draw
    from the discounted prior evolution alone. Returns (theta (T, J+1),
    final filtered GaussianState).
    """
    J = f_k.shape[2] if f_k.ndim == 3 else 0
    p = J + 1
    n_k, T = (y_k.shape if y_k.size else (0, y_k.shape[1]))
    obs = []
    for t in range(T):
        if n_k == 0:
            obs.append(PseudoObservation.empty(p))
            continue
        d = (y_k[:, t] - r) / (2.0 * omega_k[:, t]) + np.log(r)
        if u_k is not None:
            d = d - u_k[:, t]
        F = np.column_stack([np.ones(n_k), f_k[:, t, :]])
        obs.append(PseudoObservation(d=d, F=F, omega=omega_k[:, t]))
    filtered, _ = forward_filter(prior, obs, delta_Sigma)
    theta = backward_sample(rng, filtered, delta_Sigma)
    return theta, filtered[-1]


def sample_intercept_deviation(rng, y, omega, theta_tz, F, tau2, r):
    """Intercept deviation for one cell: N(u_hat, v_hat^2)."""
    vhat2 = 1.0 / (omega + 1.0 / tau2)
    uhat = vhat2 * (omega * (np.log(r) - float(np.dot(theta_tz, F))) + (y - r) / 2.0)
    return uhat + np.sqrt(vhat2) * rng.standard_normal()


def _sample_u_batch(rng, y, omega, linpred, tau2_cells, r):
    vhat2 = 1.0 / (omega + 1.0 / tau2_cells)
    uhat = vhat2 * (omega * (np.log(r) - linpred) + (y - r) / 2.0)
    return uhat + np.sqrt(vhat2) * rng.standard_normal(y.shape)


@dataclass
class GibbsState:
    theta: np.ndarray   # (K, T, J+1)
    z: np.ndarray       # (n,) int labels in 0..K-1
    pi: np.ndarray      # (K,)
    f: np.ndarray       # (n, T, J)
    omega: np.ndarray   # (n, T)
    u: np.ndarray       # (n, T); zeros unless MBPSH
    tau2: np.ndarray    # (K, T); ones unless MBPSH
    CT: np.ndarray      # (K, J+1, J+1) final filtered covariances

    def copy(self):
        return GibbsState(
            theta=self.theta.copy(), z=self.z.copy(), pi=self.pi.copy(),
            f=self.f.copy(), omega=self.omega.copy(), u=self.u.copy(),
            tau2=self.tau2.copy(), CT=self.CT.copy(),
        )


@dataclass
class DrawCollection:
    """Stacked post-burn-in Gibbs draws plus per-scan alive-cluster counts."""

    variant: str
    theta: np.ndarray        # (L, K, T, J+1)
    z: np.ndarray            # (L, n)
    pi: np.ndarray           # (L, K)
    f: np.ndarray            # (L, n, T, J)
    u: np.ndarray | None     # (L, n, T) for MBPSH
    tau2: np.ndarray | None  # (L, K, T) for MBPSH
    CT: np.ndarray           # (L, K, J+1, J+1)
    alive_counts: np.ndarray  # (n_scans,)
    delta_Sigma: float
    r: float
    horizon: int

    @property
    def L(self):
        return self.theta.shape[0]


def _assigned_theta(theta, z):
    return theta[z]   # (n, T, p)


def gibbs_sweep(rng, state, y, m, s2, config, variant):
    """One full Gibbs scan; mutates and returns `state`."""
    n, T = y.shape
    J = m.shape[2]
    p = J + 1
    K = state.theta.shape[0]
    r = config.r
    logr = np.log(r)
    heterogeneous = variant == "MBPSH"
    u = state.u if heterogeneous else None

    if variant != "BPS":
        state.z = sample_assignments(
            rng, y, state.theta, state.pi, state.f, r,
            u=u, tau2=state.tau2 if heterogeneous else None,
        )
        state.pi = sample_mixture_weights(rng, state.z, config.a0, K)

    theta_cells = _assigned_theta(state.theta, state.z)       # (n, T, p)
    F = np.concatenate([np.ones((n, T, 1)), state.f], axis=2)
    linpred = np.einsum("ntp,ntp->nt", theta_cells, F)
    if heterogeneous:
        linpred = linpred + state.u
    state.omega = _sample_omega_batch(rng, y, linpred - logr, r)

    state.f = _sample_factors_batch(
        rng, y, state.omega, theta_cells, m, s2, r,
        u=state.u if heterogeneous else None,
    )

    prior_mean, prior_cov = config.prior_state(J)
    prior = GaussianState(mean=prior_mean, cov=prior_cov)
    for k in range(K):
        members = np.nonzero(state.z == k)[0]
        theta_k, last = sample_weights_block(
            rng,
            y[members], state.omega[members], state.f[members],
            config.delta_Sigma, prior, r,
            u_k=state.u[members] if heterogeneous else None,
        )
        state.theta[k] = theta_k
        state.CT[k] = last.cov

    if heterogeneous:
        theta_cells = _assigned_theta(state.theta, state.z)
        F = np.concatenate([np.ones((n, T, 1)), state.f], axis=2)
        linpred = np.einsum("ntp,ntp->nt", theta_cells, F)
        tau2_cells = state.tau2[state.z]                       # (n, T)
        state.u = _sample_u_batch(rng, y, state.omega, linpred, tau2_cells, r)
        gamma_prior = GammaState(
            shape=config.tau2_prior_shape, rate=config.tau2_prior_rate
        )
        for k in range(K):
            members = state.z == k
            n_k = int(members.sum())
            ss = (state.u[members] ** 2).sum(axis=0) if n_k else np.zeros(T)
            sums = [(n_k, float(ss[t])) for t in range(T)]
            phi2 = beta_gamma_ffbs(rng, sums, config.beta_tau, gamma_prior)
            # the discounted prior tail of an empty cluster can underflow
            # the precision draw; clamp so tau2 stays finite and positive
            state.tau2[k] = 1.0 / np.clip(phi2, 1e-12, 1e12)
    return state


def _profile_features(y):
    from countsynth.evaluation import series_profile

    feats = np.array(
        [
            (pr.log_mean_level, pr.mean_abs_change_rate)
            for pr in (series_profile(np.maximum(row, 0.5)) for row in y)
        ]
    )
    return feats


def _kmeans_init(rng, y, K):
    """Partition series by (log level, roughness) into min(8, K) groups."""
    n = y.shape[0]
    k = min(8, K, n)
    feats = _profile_features(y)
    std = feats.std(axis=0)
    std[std == 0.0] = 1.0
    X = (feats - feats.mean(axis=0)) / std
    centers = X[rng.choice(n, size=k, replace=False)]
    labels = np.zeros(n, dtype=int)
    for _ in range(25):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        for j in range(k):
            if np.any(labels == j):
                centers[j] = X[labels == j].mean(axis=0)
    return labels


def initial_state(rng, y, m, s2, config, variant):
    n, T = y.shape
    J = m.shape[2]
    p = J + 1
    K = 1 if variant == "BPS" else config.K
    prior_mean, prior_cov = config.prior_state(J)
    theta = np.tile(prior_mean, (K, T, 1))
    z = np.zeros(n, dtype=int) if K == 1 else _kmeans_init(rng, y, K)
    pi = np.full(K, 1.0 / K)
    f = m.copy()
    F = np.concatenate([np.ones((n, T, 1)), f], axis=2)
    theta_cells = theta[z]
    psi = np.einsum("ntp,ntp->nt", theta_cells, F) - np.log(config.r)
    omega = polya_gamma.pg_mean(config.r + y, psi)
    return GibbsState(
        theta=theta, z=z, pi=pi, f=f, omega=omega,
        u=np.zeros((n, T)), tau2=np.ones((K, T)),
        CT=np.tile(prior_cov, (K, 1, 1)),
    )


def run_sampler(y, agents, config, variant):
    """Run the Gibbs sampler and collect thinned post-burn-in draws.

    y is the (n, T) count window; agents an AgentPredictive whose moments
    cover the window at the fitted horizon.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    y = np.asarray(y, dtype=float)
    n, T = y.shape
    if agents.m.shape[:2] != (n, T):
        raise ValueError("agent moments do not cover the estimation window")
    m = agents.m
    s2 = agents.s2 * config.variance_inflation
    rng = np.random.default_rng(config.seed)
    state = initial_state(rng, y, m, s2, config, variant)
    heterogeneous = variant == "MBPSH"

    total = config.n_burn + config.n_iter * config.thin
    kept = []
    alive = np.empty(total, dtype=int)
    for scan in range(total):
        try:
            state = gibbs_sweep(rng, state, y, m, s2, config, variant)
        except Exception as exc:
            raise RuntimeError(f"Gibbs scan {scan} failed: {exc}") from exc
        alive[scan] = np.unique(state.z).size
        if scan >= config.n_burn and (scan - config.n_burn) % config.thin == 0:
            kept.append(state.copy())

    return DrawCollection(
        variant=variant,
        theta=np.stack([s.theta for s in kept]),
        z=np.stack([s.z for s in kept]),
        pi=np.stack([s.pi for s in kept]),
        f=np.stack([s.f for s in kept]),
        u=np.stack([s.u for s in kept]) if heterogeneous else None,
        tau2=np.stack([s.tau2 for s in kept]) if heterogeneous else None,
        CT=np.stack([s.CT for s in kept]),
        alive_counts=alive,
        delta_Sigma=config.delta_Sigma,
        r=config.r,
        horizon=agents.horizon,
    )


@dataclass
class ForecastDistribution:
    """Monte Carlo sample of one synthesized predictive distribution."""

    draws: np.ndarray
    log_rates: np.ndarray   # per-emission synthesis log-rates (Rao-Blackwell)
    series: int

    @property
    def mean(self):
        return float(self.draws.mean())

    @property
    def median(self):
        return float(np.median(self.draws))

    @property
    def interval(self):
        """Central 95% interval with a half-count continuity correction.

        The half-count widening makes the strict-inequality coverage of a
        discrete outcome include both endpoint integers of the central
        quantile range.
        """
        lo = float(np.quantile(self.draws, 0.025)) - 0.5
        hi = float(np.quantile(self.draws, 0.975)) + 0.5
        return lo, hi

    def log_pmf(self, y):
        """Rao-Blackwellised Poisson predictive log mass at y."""
        lam = np.exp(self.log_rates)
        terms = y * self.log_rates - lam - gammaln(y + 1.0)
        return float(logsumexp(terms) - np.log(terms.size))


def predictive_simulate(rng, draws, agents_at_horizon, i, t, n_draws=4000):
    """Simulate the synthesized predictive distribution of series i at time t.

    `draws` must come from a sampler fitted with moments at the same horizon
    as `agents_at_horizon`; t indexes the target time in the agent arrays.
    Per emission: pick a posterior draw, evolve its final weight state one
    step through the discounted random walk, draw the latent factor vector
    from the horizon-s agent predictive, and emit a Poisson count.
    """
    if agents_at_horizon.horizon != draws.horizon:
        raise ValueError(
            f"horizon mismatch: sampler fitted at {draws.horizon}, "
            f"agent moments at {agents_at_horizon.horizon}"
        )
    m_next = agents_at_horizon.m[i, t]     # (J,)
    s2_next = agents_at_horizon.s2[i, t]
    J = m_next.shape[0]
    p = J + 1
    L = draws.L
    sel = rng.integers(0, L, size=n_draws)
    k_sel = draws.z[sel, i]
    theta_T = draws.theta[sel, k_sel, -1, :]           # (n_draws, p)
    delta = draws.delta_Sigma
    if delta < 1.0:
        W = draws.CT[sel, k_sel] * (1.0 / delta - 1.0)
        Lw = np.linalg.cholesky(W + 1e-12 * np.eye(p))
        theta_next = theta_T + np.einsum(
            "bij,bj->bi", Lw, rng.standard_normal((n_draws, p))
        )
    else:
        theta_next = theta_T
    f = m_next + np.sqrt(s2_next) * rng.standard_normal((n_draws, J))
    log_rate = theta_next[:, 0] + np.einsum("bj,bj->b", theta_next[:, 1:], f)
    if draws.u is not None:
        tau2_T = draws.tau2[sel, k_sel, -1]
        log_rate = log_rate + np.sqrt(tau2_T) * rng.standard_normal(n_draws)
    log_rate = np.minimum(log_rate, _EXP_CLAMP)
    y_draws = rng.poisson(np.exp(log_rate))
    return ForecastDistribution(draws=y_draws, log_rates=log_rate, series=i)


# ------------------------------------------------------------------ simulation


def simulate_counts(rng, theta, z, f, r, u=None, emission="nb"):
    """Emit counts from the synthesis model given all latent quantities.

    theta (K, T, J+1); z (n,); f (n, T, J). emission "nb" uses the negative
    binomial surrogate the Gibbs sampler targets (via its Poisson-gamma
    mixture); "poisson" uses the exact Poisson synthesis function.
    """
    n, T, J = f.shape
    F = np.concatenate([np.ones((n, T, 1)), f], axis=2)
    linpred = np.einsum("ntp,ntp->nt", theta[z], F)
    if u is not None:
        linpred = linpred + u
    linpred = np.minimum(linpred, _EXP_CLAMP)
    if emission == "poisson":
        return rng.poisson(np.exp(linpred))
    if emission == "nb":
        lam = rng.gamma(r, np.exp(linpred - np.log(r)))
        return rng.poisson(lam)
    raise ValueError(f"unknown emission {emission!r}")


def draw_generative_state(rng, n, T, m, s2, config, variant):
    """Draw (state, y) jointly from the model the Gibbs sweep targets.

    Requires delta_Sigma = 1 and beta_tau = 1 so the weight and volatility
    processes have coherent joint laws (constant over time); used by the
    one-sweep stationarity check.
    """
    if config.delta_Sigma != 1.0 or config.beta_tau != 1.0:
        raise ValueError("generative draws require delta_Sigma = beta_tau = 1")
    J = m.shape[2]
    p = J + 1
    K = 1 if variant == "BPS" else config.K
    heterogeneous = variant == "MBPSH"
    prior_mean, prior_cov = config.prior_state(J)
    Lp = np.linalg.cholesky(prior_cov)
    theta0 = prior_mean + (Lp @ rng.standard_normal((K, p)).T).T   # (K, p)
    theta = np.repeat(theta0[:, None, :], T, axis=1)
    pi = rng.dirichlet(np.full(K, config.a0)) if K > 1 else np.ones(1)
    z = rng.choice(K, size=n, p=pi)
    f = m + np.sqrt(s2) * rng.standard_normal(m.shape)
    if heterogeneous:
        phi2 = rng.gamma(
            0.5 * config.tau2_prior_shape, 2.0 / config.tau2_prior_rate, size=K
        )
        tau2 = np.repeat((1.0 / phi2)[:, None], T, axis=1)
        u = np.sqrt(tau2[z]) * rng.standard_normal((n, T))
    else:
        tau2 = np.ones((K, T))
        u = np.zeros((n, T))
    y = simulate_counts(rng, theta, z, f, config.r, u=u if heterogeneous else None)
    F = np.concatenate([np.ones((n, T, 1)), f], axis=2)
    psi = np.einsum("ntp,ntp->nt", theta[z], F) + u - np.log(config.r)
    omega = polya_gamma.pg_sample(rng, config.r + y, psi)
    state = GibbsState(
        theta=theta, z=z, pi=pi, f=f, omega=omega, u=u, tau2=tau2,
        CT=np.tile(prior_cov, (K, 1, 1)),
    )
    return state, y.astype(float)
