"""End-to-end acceptance suite.

Each test checks one release gate: sampler exactness, approximation
quality, stationarity of the Gibbs kernel, cluster recovery, interval
calibration, metric oracles, compartment-model invariants, leakage
auditing, and the full CLI pipeline. Every test also enforces its own
wall-clock budget so regressions in runtime fail loudly.
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import gammaln
from sklearn.metrics import adjusted_rand_score

from countsynth.agents.sihr import SIHRState, power_weighted_mean, sihr_solve
from countsynth.cli import main
from countsynth.cli_io import (
    BacktestPlan,
    RunSettings,
    audit_manifest,
    run_backtest,
    simulate_panel,
)
from countsynth.clustering import (
    coclustering_mean,
    representative_draw,
)
from countsynth.domain import AgentPredictive, SynthesisConfig
from countsynth.evaluation import cape, interval_coverage, lpdr, series_profile
from countsynth.polya_gamma import pg_mean, pg_sample, pg_variance
from countsynth.ssm import GaussianState, backward_sample, forward_filter
from countsynth.synthesis import (
    draw_generative_state,
    gibbs_sweep,
    nb_log_pmf,
    predictive_simulate,
    run_sampler,
    simulate_counts,
)
from test_ssm import (
    discount_smoother_moments,
    kalman_filter_oracle,
    random_system,
)


@pytest.fixture(scope="module", autouse=True)
def _warm_jit():
    # compile the numba kernels outside any timed section
    rng = np.random.default_rng(0)
    pg_sample(rng, 1.0, 0.5, size=4)
    pg_sample(rng, 1000.0, 0.5, size=4)
    state = SIHRState(S=100.0, I=5.0, H=2.0, R=0.0,
                      alpha=0.3, beta=0.1, delta_I=0.1, delta_H=0.1)
    sihr_solve(state, 0.25, 8)


# ------------------------------------------------------- 1. PG sampler grid


def test_pg_sampler_moments_on_grid():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 100_000
    for b in (1.0, 5.0, 50.0, 1000.0):
        for c in (0.0, 0.5, 3.0, 10.0):
            x = pg_sample(rng, b, c, size=n)
            mu, var = pg_mean(b, c), pg_variance(b, c)
            se_mean = np.sqrt(var / n)
            assert abs(x.mean() - mu) < 4.0 * se_mean, (b, c)
            xc = x - x.mean()
            m4 = np.mean(xc**4)
            s2 = np.mean(xc**2)
            se_var = np.sqrt(max(m4 - s2**2, 0.0) / n)
            assert abs(s2 - var) < 4.0 * se_var, (b, c)
    assert time.perf_counter() - t0 < 10.0


# -------------------------------------------- 2. NB surrogate close to Poisson


def test_nb_surrogate_matches_poisson():
    t0 = time.perf_counter()
    r = 1000.0
    worst = 0.0
    for lam in (0.5, 5.0, 20.0, 50.0):
        y = np.arange(max(0, int(np.floor(lam - 6.0))),
                      int(np.ceil(lam + 6.0)) + 1, dtype=float)
        psi = np.log(lam) - np.log(r)
        nb = nb_log_pmf(y, psi, r)
        pois = y * np.log(lam) - lam - gammaln(y + 1.0)
        worst = max(worst, float(np.max(np.abs(nb - pois))))
        # in the tails the gap follows the analytic second-order
        # correction ((y - lam)^2 - y) / (2r); check it out to +-6 SD
        sd = np.sqrt(lam)
        y_wide = np.arange(max(0, int(np.floor(lam - 6 * sd))),
                           int(np.ceil(lam + 6 * sd)) + 1, dtype=float)
        gap = nb_log_pmf(y_wide, psi, r) - (
            y_wide * np.log(lam) - lam - gammaln(y_wide + 1.0)
        )
        corr = ((y_wide - lam) ** 2 - y_wide) / (2.0 * r)
        assert np.max(np.abs(gap - corr)) < 0.06
    assert worst < 0.05
    assert time.perf_counter() - t0 < 1.0


# --------------------------------------------------- 3. FFBS vs exact Kalman


def test_ffbs_matches_exact_kalman_and_smoother():
    t0 = time.perf_counter()
    # filtering: delta = 1 must agree with a textbook Kalman filter
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(1, 6))
        n_k = int(rng.integers(1, 11))
        T = int(rng.integers(2, 51))
        prior, obs = random_system(rng, p, n_k, T)
        filtered, _ = forward_filter(prior, obs, delta=1.0)
        Ws = [np.zeros((p, p))] * T
        oracle = kalman_filter_oracle(
            prior.mean, prior.cov,
            [o.d for o in obs], [o.F for o in obs], [o.omega for o in obs], Ws,
        )
        for got, (m, C) in zip(filtered, oracle):
            np.testing.assert_allclose(got.mean, m, atol=1e-10)
            np.testing.assert_allclose(got.cov, C, atol=1e-10)

    # smoothing: backward_sample moments must match the exact RTS smoother
    rng = np.random.default_rng(210)
    p, n_k, T = 3, 5, 20
    prior, obs = random_system(rng, p, n_k, T)
    delta = 0.9
    (s_mean, _), filtered = discount_smoother_moments(prior, obs, delta)
    n_pass = 10_000
    draws = np.empty((n_pass, T, p))
    for it in range(n_pass):
        draws[it] = backward_sample(rng, filtered, delta)
    emp_mean = draws.mean(axis=0)
    for t in range(T):
        se = draws[:, t, :].std(axis=0, ddof=1) / np.sqrt(n_pass)
        assert np.all(np.abs(emp_mean[t] - s_mean[t]) < 4.0 * se + 1e-12)
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------- 4. one-sweep stationarity


def _invariant_stats(state):
    """Label-permutation-invariant summaries of theta, pi and tau2."""
    th = state.theta[:, 0, :]           # constant over t when delta_Sigma = 1
    pi = state.pi
    tau2 = state.tau2[:, 0]
    return np.array([
        th[:, 0].mean(), th[:, 1].mean(), th[:, 2].mean(),
        (th**2).sum(axis=1).mean(),
        pi.max(), (pi**2).sum(),
        tau2.mean(), np.log(tau2).mean(),
    ])


def test_gibbs_one_sweep_stationarity():
    t0 = time.perf_counter()
    n, T, J, K = 4, 8, 2, 2
    rng_m = np.random.default_rng(99)
    m = rng_m.normal(np.log(3.0), 0.3, size=(n, T, J))
    s2 = np.full((n, T, J), 0.3)
    # delta = beta = 1 makes the weight and volatility processes constant,
    # so joint (state, data) draws and the sweep target the same law
    cfg = SynthesisConfig(K=K, a0=2.0, delta_Sigma=1.0, beta_tau=1.0,
                          C0=0.25 * np.eye(3),
                          tau2_prior_shape=6.0, tau2_prior_rate=6.0)
    n_stats = 8

    M1 = 50_000
    rng = np.random.default_rng(1)
    acc1 = np.zeros((M1, n_stats))
    for i in range(M1):
        st, _ = draw_generative_state(rng, n, T, m, s2, cfg, "MBPSH")
        acc1[i] = _invariant_stats(st)
    m1 = acc1.mean(axis=0)
    se1 = acc1.std(axis=0, ddof=1) / np.sqrt(M1)

    # successive-conditional chains: sweep the state, then regenerate the
    # data from the current state; independent replicates give honest SEs
    n_chain, burn, keep = 20, 300, 2500
    chain_means = np.zeros((n_chain, n_stats))
    for c in range(n_chain):
        rng = np.random.default_rng(100 + c)
        state, y = draw_generative_state(rng, n, T, m, s2, cfg, "MBPSH")
        acc = np.zeros((keep, n_stats))
        for it in range(burn + keep):
            state = gibbs_sweep(rng, state, y, m, s2, cfg, "MBPSH")
            y = simulate_counts(rng, state.theta, state.z, state.f, cfg.r,
                                u=state.u).astype(float)
            if it >= burn:
                acc[it - burn] = _invariant_stats(state)
        chain_means[c] = acc.mean(axis=0)
    m2 = chain_means.mean(axis=0)
    se2 = chain_means.std(axis=0, ddof=1) / np.sqrt(n_chain)

    z = (m1 - m2) / np.sqrt(se1**2 + se2**2)
    assert np.all(np.abs(z) < 4.0), z
    assert time.perf_counter() - t0 < 300.0


# ------------------------------------------------------ 5. cluster recovery


def _two_cluster_panel(seed):
    n, T, J = 10, 100, 2
    z_true = np.array([0] * 5 + [1] * 5)
    theta = np.stack([
        np.tile([0.2, 1.3, 0.1], (T, 1)),
        np.tile([0.2, 0.1, 1.3], (T, 1)),   # separation 1.2 per coordinate
    ])
    base = np.where(z_true == 0, 3.2, 2.4)
    rng = np.random.default_rng(1000 + seed)
    m = base[:, None, None] + rng.normal(0.0, 0.5, size=(n, T, J))
    s2 = np.full((n, T, J), 0.04)
    f = m + np.sqrt(s2) * rng.standard_normal(m.shape)
    y = simulate_counts(rng, theta, z_true, f, 1000.0)
    return y, m, s2, z_true


def test_mixture_cluster_recovery_and_shrinkage():
    t0 = time.perf_counter()
    recovered = 0
    for seed in range(10):
        y, m, s2, z_true = _two_cluster_panel(seed)
        cfg = SynthesisConfig(K=10, a0=0.5, n_burn=500, n_iter=300, thin=1,
                              seed=2000 + seed)
        draws = run_sampler(y, AgentPredictive(m, s2, horizon=1), cfg, "MBPS")
        rep = draws.z[representative_draw(draws.z)]
        if adjusted_rand_score(z_true, rep) >= 0.9:
            recovered += 1
    assert recovered >= 8, recovered

    # sparse prior: redundant components are shrunk to empty
    alive_means = []
    for seed in range(5):
        y, m, s2, _ = _two_cluster_panel(seed)
        cfg = SynthesisConfig(K=10, a0=0.01, n_burn=300, n_iter=200, thin=1,
                              seed=3000 + seed)
        draws = run_sampler(y, AgentPredictive(m, s2, horizon=1), cfg, "MBPS")
        alive_means.append(draws.alive_counts[cfg.n_burn:].mean())
    assert np.mean(alive_means) <= 4.0, alive_means
    assert time.perf_counter() - t0 < 900.0


# -------------------------------------------------- 6. interval calibration


def test_mbpsh_interval_calibration():
    t0 = time.perf_counter()
    n, T_fit, T_star, J = 8, 80, 20, 2
    T_total = T_fit + T_star
    z_true = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    theta = np.stack([
        np.tile([0.2, 1.1, 0.2], (T_total, 1)),
        np.tile([0.1, 0.3, 1.0], (T_total, 1)),
    ])
    tau2_true = np.array([0.05, 0.10])

    hits = total = 0
    for p in range(5):
        rng = np.random.default_rng(500 + p)
        m = rng.normal(3.0, 0.4, size=(n, T_total, J))
        s2 = np.full((n, T_total, J), 0.04)
        f = m + np.sqrt(s2) * rng.standard_normal(m.shape)
        u = np.sqrt(tau2_true[z_true])[:, None] * rng.standard_normal((n, T_total))
        y = simulate_counts(rng, theta, z_true, f, 1000.0, u=u,
                            emission="poisson")
        for q in range(T_star):
            t_tgt = T_fit + q
            cfg = SynthesisConfig(
                K=4, a0=0.5, delta_Sigma=1.0, beta_tau=1.0,
                tau2_prior_shape=6.0, tau2_prior_rate=6.0,
                n_burn=200, n_iter=150, thin=1, seed=7000 + 100 * p + q,
            )
            fit_agents = AgentPredictive(m[:, :t_tgt], s2[:, :t_tgt], horizon=1)
            draws = run_sampler(y[:, :t_tgt], fit_agents, cfg, "MBPSH")
            pred_agents = AgentPredictive(
                m[:, :t_tgt + 1], s2[:, :t_tgt + 1], horizon=1
            )
            rng_p = np.random.default_rng(9000 + 100 * p + q)
            for i in range(n):
                fd = predictive_simulate(rng_p, draws, pred_agents, i, t_tgt,
                                         n_draws=2000)
                lo, hi = fd.interval
                hits += lo < y[i, t_tgt] < hi
                total += 1
    coverage = hits / total
    assert 0.92 <= coverage <= 0.98, coverage
    assert time.perf_counter() - t0 < 1200.0


# ------------------------------------------------------- 7. metric oracles


def _brute_cape(actuals, forecasts):
    run, out = 0.0, []
    for a, f in zip(actuals, forecasts):
        run = run + abs(a - f)
        out.append(run)
    return np.array(out)


def _brute_lpdr(ref, cand):
    out = []
    for a, b in zip(ref, cand):
        if np.isfinite(a) and np.isfinite(b):
            out.append(b - a)
        else:
            out.append(np.nan)
    return np.array(out)


def _brute_coverage(actuals, intervals):
    inside = 0
    for a, (lo, hi) in zip(actuals, intervals):
        inside += lo < a < hi
    return inside / len(actuals)


def _brute_profile(y):
    yf = np.asarray([float(v) for v in y])
    log_mean = float(np.log(yf.mean()))
    rates, skipped = [], 0
    for prev, cur in zip(yf[:-1], yf[1:]):
        if prev > 0:
            rates.append(abs(cur - prev) / prev)
        else:
            skipped += 1
    denom = len(yf) - 1
    rate = float(np.asarray(rates).sum() / denom) if denom else 0.0
    return log_mean, rate, skipped


def _brute_coclustering_mean(z_draws):
    L, n = z_draws.shape
    acc = np.zeros((n, n))
    for z in z_draws:
        acc += (z[:, None] == z[None, :]).astype(float)
    return acc / L


def _brute_representative(z_draws):
    """Exact-rational Frobenius argmin over upper-triangle tie vectors."""
    L, n = z_draws.shape
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    counts = {
        p: sum(int(z_draws[l, p[0]] == z_draws[l, p[1]]) for l in range(L))
        for p in pairs
    }
    best, best_d = 0, None
    for l in range(L):
        d = sum(
            (Fraction(int(z_draws[l, i] == z_draws[l, j]))
             - Fraction(counts[(i, j)], L)) ** 2
            for (i, j) in pairs
        )
        if best_d is None or d < best_d:
            best, best_d = l, d
    return best


def test_metric_brute_force_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    for _ in range(100):
        T = int(rng.integers(2, 30))
        actuals = rng.poisson(8.0, size=T).astype(float)
        forecasts = actuals + rng.normal(0.0, 3.0, size=T)
        assert np.array_equal(cape(actuals, forecasts),
                              _brute_cape(actuals, forecasts))

        ref = rng.normal(-3.0, 1.0, size=T)
        cand = rng.normal(-3.0, 1.0, size=T)
        ref[rng.random(T) < 0.1] = -np.inf
        assert np.array_equal(lpdr(ref, cand), _brute_lpdr(ref, cand),
                              equal_nan=True)

        lo = forecasts - rng.uniform(1.0, 5.0, size=T)
        hi = forecasts + rng.uniform(1.0, 5.0, size=T)
        intervals = np.column_stack([lo, hi])
        assert interval_coverage(actuals, intervals) == _brute_coverage(
            actuals, intervals
        )

        y = rng.poisson(2.0, size=T) + (1 if T < 3 else 0)
        y = np.maximum(y, 1) if y.sum() == 0 else y
        prof = series_profile(y)
        log_mean, rate, skipped = _brute_profile(y)
        assert prof.log_mean_level == log_mean
        assert prof.mean_abs_change_rate == rate
        assert prof.skipped_rates == skipped

        L = int(rng.integers(2, 31))
        n = int(rng.integers(3, 9))
        z_draws = rng.integers(0, 3, size=(L, n))
        assert np.array_equal(coclustering_mean(z_draws),
                              _brute_coclustering_mean(z_draws))
        assert representative_draw(z_draws) == _brute_representative(z_draws)
    assert time.perf_counter() - t0 < 10.0


# ------------------------------------------------ 8. compartment invariants


def test_sihr_conservation_and_weighted_mean():
    t0 = time.perf_counter()
    state = SIHRState(S=9e5, I=5e4, H=3e4, R=2e4,
                      alpha=0.3, beta=0.1, delta_I=0.05, delta_H=0.1)
    traj = sihr_solve(state, 0.1, 10_000)
    N_path = traj.sum(axis=1)
    assert np.max(np.abs(N_path - state.N)) / state.N < 1e-8

    rng = np.random.default_rng(5)
    y = rng.poisson(20.0, size=40).astype(float)
    for delta in (0.7, 0.9, 0.99):
        num = den = 0.0
        T = len(y)
        for s in range(T):
            a = delta ** (T - 1 - s)
            num += a * y[s]
            den += a
        assert abs(power_weighted_mean(y, delta) - num / den) < 1e-10
    assert abs(power_weighted_mean(y, 1.0) - y.mean()) < 1e-10
    assert time.perf_counter() - t0 < 5.0


# ---------------------------------------------------- 9. leakage audit


def test_backtest_leakage_audit(tmp_path):
    t0 = time.perf_counter()
    panel = simulate_panel(seed=11, n=5, T_total=80)
    plan = BacktestPlan(
        fit_window_end=68, prediction_span=12, horizons=(1, 3, 7),
        models=("MBPS",), agent_warmup=36,
    )
    syn = SynthesisConfig(K=3, n_burn=40, n_iter=20, thin=1)
    settings = RunSettings(seed=0, bootstrap_reps=100, gam_grid_size=5,
                           population=1e5, n_predictive_draws=500)
    out = tmp_path / "run"
    run_backtest(panel, plan, syn, settings, out)

    assert audit_manifest(out) == []
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["errors"] == []
    assert manifest["completed_steps"] == plan.prediction_span
    assert len(manifest["cells"]) > 0
    # independent recomputation: every cell's newest input must be at
    # least `horizon` steps older than its target
    for cell in manifest["cells"]:
        assert cell["max_data_index"] <= cell["target_index"] - cell["horizon"]
    assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------- 10. end-to-end smoke


_E2E_CONFIG = """
[synthesis]
K = 4
a0 = 0.5
n_burn = 150
n_iter = 100
thin = 1

[plan]
fit_window_end = 100
prediction_span = 20
horizons = [1]
models = ["MBPSH", "FMPR"]
agent_warmup = 30

[run]
seed = 0
bootstrap_reps = 200
gam_grid_size = 5
population = 1e6
n_predictive_draws = 1000
"""


def test_cli_end_to_end_smoke(tmp_path):
    t0 = time.perf_counter()
    panel = tmp_path / "panel.csv"
    config = tmp_path / "config.toml"
    config.write_text(_E2E_CONFIG, encoding="utf-8")
    assert main(["simulate", "--out", str(panel), "--n", "8", "--T", "120",
                 "--seed", "0"]) == 0

    for run_name in ("run1", "run2"):
        out = tmp_path / run_name
        assert main(["backtest", "--panel", str(panel),
                     "--config", str(config), "--out", str(out)]) == 0
        assert main(["report", "--run", str(out)]) == 0

    expected = {
        "forecasts.csv", "profiles.csv", "manifest.json",
        "coclustering_MBPSH.csv", "alive_MBPSH.csv", "r2_MBPSH.csv",
        "coverage_table.csv", "cape.csv", "lpdr.csv", "summary.json",
    }
    names = sorted(p.name for p in (tmp_path / "run1").iterdir())
    assert set(names) == expected
    assert names == sorted(p.name for p in (tmp_path / "run2").iterdir())
    for name in names:
        a = (tmp_path / "run1" / name).read_bytes()
        b = (tmp_path / "run2" / name).read_bytes()
        assert a == b, f"{name} differs between identical reruns"
    assert time.perf_counter() - t0 < 900.0
