"""Panel ingestion, configuration, the expanding-window backtest, and reports.

The backtest protocol: starting from a fit window of length T, each step
refits the agents and the synthesis models on the window, forecasts each
horizon s, scores the realized outcome, then expands the window by one
observation. Covariates are lagged by max(lag, s) per horizon so every
horizon-s forecast of time t uses data observable at t - s; the manifest
records the newest data index behind every forecast cell for auditing.
"""

import csv
import datetime
import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from countsynth.agents import (
    AgentSpec,
    SIHRConfig,
    SeriesForecaster,
    SplineSpec,
    default_agent_specs,
    fmpr_fit,
    fmpr_forecast,
)
from countsynth.clustering import alive_cluster_counts, coclustering_mean
from countsynth.domain import (
    DEFAULT_COVARIATE_WINDOWS,
    CountPanel,
    Frequency,
    SynthesisConfig,
    covariate_transform,
    validate_panel,
)
from countsynth.evaluation import (
    interval_coverage,
    panel_average_r2,
    series_profile,
)
from countsynth.synthesis import (
    VARIANTS,
    ForecastDistribution,
    predictive_simulate,
    run_sampler,
)

REQUIRED_COLUMNS = ("date", "region", "count", "infected")
_MIN_FIT_OBS = 21   # transitions needed by the most demanding agent fit


class PanelFormatError(ValueError):
    """A row of the input table failed to parse; carries the line number."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ImbalanceError(ValueError):
    """The pivoted panel has missing (region, date) cells."""

    def __init__(self, missing):
        pairs = ", ".join(f"({r}, {d})" for r, d in missing[:20])
        more = "" if len(missing) <= 20 else f" and {len(missing) - 20} more"
        super().__init__(f"missing cells: {pairs}{more}")
        self.missing = missing


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ loading


def _parse_int(text, line, column):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        raise PanelFormatError(line, f"non-integer {column} {text!r}") from None


def load_panel(path, delimiter=","):
    """Read a (date, region, count, infected) table into a balanced panel."""
    cells = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError(1, "empty file") from None
        header = [h.strip().lower() for h in header]
        try:
            idx = [header.index(c) for c in REQUIRED_COLUMNS]
        except ValueError:
            raise PanelFormatError(
                1, f"header must contain columns {REQUIRED_COLUMNS}, got {header}"
            ) from None
        for line, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < len(header):
                raise PanelFormatError(line, f"expected {len(header)} fields")
            raw_date, region, count, infected = (row[i].strip() for i in idx)
            try:
                date = datetime.date.fromisoformat(raw_date)
            except ValueError:
                raise PanelFormatError(line, f"invalid date {raw_date!r}") from None
            key = (region, date)
            if key in cells:
                raise PanelFormatError(line, f"duplicate cell {key}")
            cells[key] = (
                _parse_int(count, line, "count"),
                _parse_int(infected, line, "infected"),
            )
    if not cells:
        raise PanelFormatError(2, "no data rows")
    regions = sorted({r for r, _ in cells})
    dates = sorted({d for _, d in cells})
    missing = [(r, d.isoformat()) for r in regions for d in dates
               if (r, d) not in cells]
    if missing:
        raise ImbalanceError(missing)
    y = np.array([[cells[(r, d)][0] for d in dates] for r in regions])
    infected = np.array([[cells[(r, d)][1] for d in dates] for r in regions])
    gap = (dates[1] - dates[0]).days if len(dates) > 1 else 7
    frequency = Frequency.DAILY if gap == 1 else Frequency.WEEKLY
    return CountPanel(
        y=y, infected=infected, labels=regions, calendar=dates, frequency=frequency
    )


def save_panel(panel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for i, region in enumerate(panel.labels):
            for t, date in enumerate(panel.calendar):
                writer.writerow(
                    [date.isoformat(), region,
                     int(panel.y[i, t]), int(panel.infected[i, t])]
                )


# ------------------------------------------------------------ configuration


@dataclass
class BacktestPlan:
    fit_window_end: int                  # T: length of the initial fit window
    prediction_span: int                 # T*: number of expanding steps
    horizons: tuple = (1,)
    agent_warmup: int = 30               # first time index with agent moments
    models: tuple = ("MBPS",)
    refit_policy: str = "expanding_refit_each_step"

    def __post_init__(self):
        self.horizons = tuple(sorted(set(int(s) for s in self.horizons)))
        if not self.horizons:
            raise ConfigError("at least one horizon is required")
        for s in self.horizons:
            if s < 1 or s > self.prediction_span:
                raise ConfigError(f"horizon {s} outside [1, {self.prediction_span}]")
        if self.refit_policy != "expanding_refit_each_step":
            raise ConfigError(f"unknown refit policy {self.refit_policy!r}")
        self.models = tuple(self.models)
        for m in self.models:
            if m not in VARIANTS + ("FMPR",):
                raise ConfigError(f"unknown model {m!r}")
        if self.agent_warmup >= self.fit_window_end:
            raise ConfigError("agent_warmup must precede fit_window_end")

    def check_panel(self, T_total):
        if self.fit_window_end + self.prediction_span > T_total:
            raise ConfigError(
                f"fit window {self.fit_window_end} + span {self.prediction_span} "
                f"exceeds panel length {T_total}"
            )


@dataclass
class RunSettings:
    seed: int = 0
    agent_discount: float = 0.95
    bootstrap_reps: int = 500
    population: float = 1e6
    sihr_max_iter: int = 60
    gam_grid_size: int = 9
    n_predictive_draws: int = 4000


_SECTION_TYPES = {
    "synthesis": SynthesisConfig,
    "plan": BacktestPlan,
    "run": RunSettings,
}


def load_config(path):
    """Parse the TOML config into (SynthesisConfig, BacktestPlan, RunSettings)."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    unknown = set(raw) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    if "plan" not in raw:
        raise ConfigError("config must contain a [plan] section")
    out = {}
    for section, cls in _SECTION_TYPES.items():
        values = raw.get(section, {})
        allowed = set(cls.__dataclass_fields__)
        bad = set(values) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
        try:
            out[section] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [{section}]: {exc}") from exc
    return out["synthesis"], out["plan"], out["run"]


# --------------------------------------------------------------- simulation


def simulate_panel(seed, n=8, T_total=120, n_clusters=2, frequency=Frequency.WEEKLY):
    """Generate a synthetic panel: clustered counts driven by infected levels."""
    rng = np.random.default_rng(seed)
    t = np.arange(T_total)
    base = rng.uniform(3.5, 4.5, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    ell = base[:, None] + 0.8 * np.sin(2 * np.pi * t[None, :] / 52.0 + phase[:, None])
    infected = rng.poisson(np.exp(ell))
    z = np.arange(n) % n_clusters
    intercept = np.linspace(0.4, -0.6, n_clusters)[z]
    slope = np.linspace(0.7, 1.1, n_clusters)[z]
    log_cov = np.log(np.maximum(0.5, infected))
    eta = intercept[:, None] + slope[:, None] * np.roll(log_cov, 1, axis=1)
    eta[:, 0] = eta[:, 1]
    y = rng.poisson(np.exp(np.minimum(eta, 20.0)))
    step = datetime.timedelta(days=7 if frequency == Frequency.WEEKLY else 1)
    start = datetime.date(2020, 1, 6)
    calendar = [start + k * step for k in range(T_total)]
    labels = [f"R{i + 1:02d}" for i in range(n)]
    return CountPanel(
        y=y, infected=infected, labels=labels, calendar=calendar, frequency=frequency
    )


# ----------------------------------------------------------------- backtest


def panel_content_hash(panel):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(panel.y, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(panel.infected, dtype=np.int64).tobytes())
    h.update("|".join(panel.labels).encode())
    h.update("|".join(d.isoformat() for d in panel.calendar).encode())
    h.update(panel.frequency.value.encode())
    return h.hexdigest()


class _MomentBank:
    """Caches per-(series, agent) log moments for one horizon.

    Separate forecaster instances serve in-window targets and prediction
    targets because the DGLM recursion must see origins in increasing order.
    """

    def __init__(self, panel, horizon, cov, start, specs, settings, seed_seq):
        self.horizon = horizon
        self.specs = specs
        self.cache = {}
        gam_spec = SplineSpec(
            lambda_grid=np.logspace(-2.0, 6.0, settings.gam_grid_size)
        )
        sihr_cfg = SIHRConfig(N=settings.population, max_iter=settings.sihr_max_iter)
        children = seed_seq.spawn(2 * panel.n * len(specs))
        self.banks = {}
        pos = 0
        for role in ("fit", "pred"):
            for i in range(panel.n):
                for j, spec in enumerate(specs):
                    fc = SeriesForecaster(
                        spec, panel.y[i], cov[i], start=start, horizon=horizon,
                        rng=np.random.default_rng(children[pos]),
                        sihr_config=sihr_cfg, gam_spec=gam_spec,
                    )
                    self.banks[(role, i, j)] = fc
                    pos += 1

    def moments(self, role, target):
        """(n, J) arrays of (m, s2) for one target time index."""
        key = (role, target)
        if key not in self.cache:
            n = max(i for _, i, _ in self.banks) + 1
            J = len(self.specs)
            m = np.empty((n, J))
            s2 = np.empty((n, J))
            for i in range(n):
                for j in range(J):
                    fc = self.banks[(role, i, j)]
                    m[i, j], s2[i, j] = fc.moments(target - self.horizon)
            self.cache[key] = (m, s2)
        return self.cache[key]

    def window(self, role, t_first, t_last):
        """(n, W, J) moment arrays covering targets t_first..t_last."""
        cols = [self.moments(role, t) for t in range(t_first, t_last + 1)]
        m = np.stack([c[0] for c in cols], axis=1)
        s2 = np.stack([c[1] for c in cols], axis=1)
        return m, s2


def _forecast_record(panel, fc, model, horizon, step, target):
    lo, hi = fc.interval
    actual = int(panel.y[fc.series, target])
    return {
        "model": model,
        "horizon": horizon,
        "step": step,
        "target_index": target,
        "target_date": panel.calendar[target].isoformat(),
        "series": panel.labels[fc.series],
        "actual": actual,
        "mean": fc.mean,
        "median": fc.median,
        "lo95": lo,
        "hi95": hi,
        "log_pmf_actual": fc.log_pmf(actual),
    }


def _fmpr_design(y, cov, t_first, t_last):
    """x_it = (1, c, c^2, y_{i,t-1}) for targets t_first..t_last."""
    c = cov[:, t_first:t_last + 1]
    y_prev = y[:, t_first - 1:t_last].astype(float)
    ones = np.ones_like(c)
    return np.stack([ones, c, c * c, y_prev], axis=2)


def run_backtest(panel, plan, syn_config, settings, out_dir):
    """Run the expanding-window protocol; returns the run directory path."""
    plan.check_panel(panel.T_total)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ma, lag = DEFAULT_COVARIATE_WINDOWS[panel.frequency]
    specs = default_agent_specs(settings.agent_discount)
    specs = tuple(replace(s, bootstrap_reps=settings.bootstrap_reps) for s in specs)
    agent_names = [s.kind for s in specs]
    root_seq = np.random.SeedSequence(settings.seed)
    bank_seq, mcmc_seq, pred_seq = root_seq.spawn(3)
    mcmc_rng_seed = np.random.default_rng(mcmc_seq)

    banks = {}
    cov_by_horizon = {}
    bank_children = bank_seq.spawn(len(plan.horizons))
    w0 = plan.agent_warmup
    for pos, s in enumerate(plan.horizons):
        lag_eff = max(lag, s)
        cov, available = covariate_transform(panel.infected, ma, lag_eff)
        start = int(np.argmax(available))
        if w0 - s < start + _MIN_FIT_OBS - 1:
            raise ConfigError(
                f"agent_warmup {w0} too small for horizon {s}: need at least "
                f"{start + _MIN_FIT_OBS - 1 + s}"
            )
        cov_by_horizon[s] = (cov, lag_eff)
        banks[s] = _MomentBank(panel, s, cov, start, specs, settings,
                               bank_children[pos])

    records = []
    cells = []
    errors = []
    cluster_art = {}
    pred_children = pred_seq.spawn(
        plan.prediction_span * len(plan.horizons) * len(plan.models)
    )
    mcmc_seeds = mcmc_rng_seed.integers(
        0, 2**31 - 1,
        size=(plan.prediction_span, len(plan.horizons), len(plan.models)),
    )
    completed = 0
    for step in range(plan.prediction_span):
        E = plan.fit_window_end + step          # window is [w0, E)
        for hi_idx, s in enumerate(plan.horizons):
            target = E - 1 + s
            if target >= panel.T_total:
                continue
            cov, lag_eff = cov_by_horizon[s]
            bank = banks[s]
            y_win = panel.y[:, w0:E].astype(float)
            for m_idx, model in enumerate(plan.models):
                flat = (step * len(plan.horizons) + hi_idx) * len(plan.models) + m_idx
                pred_rng = np.random.default_rng(pred_children[flat])
                try:
                    if model == "FMPR":
                        fcs = _run_fmpr(
                            pred_rng, panel, cov, w0, E, target, syn_config,
                            settings, int(mcmc_seeds[step, hi_idx, m_idx]),
                        )
                    else:
                        fcs, draws = _run_synthesis(
                            pred_rng, panel, bank, w0, E, target, s, model,
                            syn_config, settings,
                            int(mcmc_seeds[step, hi_idx, m_idx]),
                        )
                        if step == plan.prediction_span - 1 and s == plan.horizons[0]:
                            cluster_art[model] = draws
                except Exception as exc:   # noqa: BLE001 - recorded, not fatal
                    errors.append(
                        {"step": step, "horizon": s, "model": model,
                         "error": f"{type(exc).__name__}: {exc}"}
                    )
                    continue
                for fc in fcs:
                    records.append(
                        _forecast_record(panel, fc, model, s, step, target)
                    )
                cells.append(
                    {
                        "step": step, "horizon": s, "model": model,
                        "target_index": target,
                        "target_date": panel.calendar[target].isoformat(),
                        "max_count_index": E - 1,
                        "max_infected_index": target - lag_eff,
                        "max_data_index": max(E - 1, target - lag_eff),
                        "max_data_date": panel.calendar[
                            max(E - 1, target - lag_eff)
                        ].isoformat(),
                    }
                )
        completed += 1

    _write_outputs(
        panel, plan, syn_config, settings, out_dir,
        records, cells, errors, cluster_art, agent_names, completed,
    )
    return out_dir


def _run_synthesis(pred_rng, panel, bank, w0, E, target, s, variant,
                   syn_config, settings, seed):
    m_fit, s2_fit = bank.window("fit", w0, E - 1)
    from countsynth.domain import AgentPredictive

    agents_fit = AgentPredictive(m=m_fit, s2=s2_fit, horizon=s)
    config = replace(syn_config, seed=seed)
    draws = run_sampler(panel.y[:, w0:E].astype(float), agents_fit, config, variant)
    m_pred, s2_pred = bank.moments("pred", target)
    agents_pred = AgentPredictive(
        m=m_pred[:, None, :], s2=s2_pred[:, None, :], horizon=s
    )
    fcs = [
        predictive_simulate(
            pred_rng, draws, agents_pred, i, 0,
            n_draws=settings.n_predictive_draws,
        )
        for i in range(panel.n)
    ]
    return fcs, draws


def _run_fmpr(pred_rng, panel, cov, w0, E, target, syn_config, settings, seed):
    x = _fmpr_design(panel.y, cov, w0, E - 1)
    y_win = panel.y[:, w0:E].astype(float)
    rng = np.random.default_rng(seed)
    draws = fmpr_fit(
        y_win, x, K=min(syn_config.K, panel.n), rng=rng,
        a0=syn_config.a0, r=syn_config.r,
        n_burn=syn_config.n_burn, n_iter=syn_config.n_iter,
        thin=syn_config.thin,
    )
    cov_path = [cov[:, t] for t in range(E, target + 1)]
    fcs = []
    for i in range(panel.n):
        y_draws, log_rate = fmpr_forecast(
            pred_rng, draws, i, [c[i] for c in cov_path],
            y_last=panel.y[i, E - 1], n_draws=settings.n_predictive_draws,
        )
        fcs.append(
            ForecastDistribution(draws=y_draws, log_rates=log_rate, series=i)
        )
    return fcs


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, Frequency):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj)}")


def _write_outputs(panel, plan, syn_config, settings, out_dir, records,
                   cells, errors, cluster_art, agent_names, completed):
    pd.DataFrame.from_records(records).to_csv(out_dir / "forecasts.csv", index=False)

    prof_rows = []
    for i, label in enumerate(panel.labels):
        pr = series_profile(np.maximum(panel.y[i, :plan.fit_window_end], 0.5))
        prof_rows.append(
            {"series": label, "log_mean_level": pr.log_mean_level,
             "mean_abs_change_rate": pr.mean_abs_change_rate}
        )
    pd.DataFrame(prof_rows).to_csv(out_dir / "profiles.csv", index=False)

    for model, draws in cluster_art.items():
        mean = coclustering_mean(draws.z)
        rows = [
            {"series_a": panel.labels[i], "series_b": panel.labels[j],
             "tie_frequency": mean[i, j]}
            for i in range(panel.n) for j in range(panel.n)
        ]
        pd.DataFrame(rows).to_csv(
            out_dir / f"coclustering_{model}.csv", index=False
        )
        alive = alive_cluster_counts(draws.z)
        pd.DataFrame(
            {"draw": np.arange(len(alive)), "alive_clusters": alive}
        ).to_csv(out_dir / f"alive_{model}.csv", index=False)
        r2, _ = panel_average_r2(draws.f[:, :, -1, :])
        pd.DataFrame(
            {"agent": agent_names, "r2": r2}
        ).to_csv(out_dir / f"r2_{model}.csv", index=False)

    manifest = {
        "plan": asdict(plan),
        "synthesis": asdict(syn_config),
        "settings": asdict(settings),
        "agents": agent_names,
        "panel_sha256": panel_content_hash(panel),
        "n_series": panel.n,
        "T_total": panel.T_total,
        "completed_steps": completed,
        "cells": cells,
        "errors": errors,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


# -------------------------------------------------------------------- audit


def audit_manifest(run_dir):
    """Check every forecast cell used only data older than target - horizon."""
    with open(Path(run_dir) / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    violations = []
    for cell in manifest["cells"]:
        limit = cell["target_index"] - cell["horizon"]
        if cell["max_data_index"] > limit:
            violations.append(cell)
    return violations


# ------------------------------------------------------------------ reports


def emit_reports(run_dir):
    """Derive the plot-ready metric files from a completed run directory."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    fc = pd.read_csv(run_dir / "forecasts.csv")
    if fc.empty:
        raise ValueError("run directory holds no forecasts")
    written = []

    # coverage table: one row per horizon, one column per model
    cov = (
        fc.assign(
            covered=((fc["lo95"] < fc["actual"]) & (fc["actual"] < fc["hi95"]))
        )
        .groupby(["horizon", "model"])["covered"].mean().unstack("model")
    )
    cov_path = run_dir / "coverage_table.csv"
    cov.to_csv(cov_path)
    written.append(cov_path)

    # CAPE: per model and horizon, cumulative absolute error over target times
    cape_rows = []
    for (model, horizon), g in fc.groupby(["model", "horizon"]):
        per_t = (
            g.assign(abs_err=(g["actual"] - g["mean"]).abs())
            .groupby("target_index")["abs_err"].sum().sort_index()
        )
        cum = per_t.cumsum()
        for t, v in cum.items():
            cape_rows.append(
                {"model": model, "horizon": horizon,
                 "target_index": t, "cape": v}
            )
    cape_path = run_dir / "cape.csv"
    pd.DataFrame(cape_rows).to_csv(cape_path, index=False)
    written.append(cape_path)

    # LPDR against the reference model (first synthesis model in the plan)
    models = manifest["plan"]["models"]
    reference = next((m for m in models if m in VARIANTS), models[0])
    lpdr_rows = []
    ref = fc[fc["model"] == reference]
    for (model, horizon), g in fc.groupby(["model", "horizon"]):
        if model == reference:
            continue
        r = ref[ref["horizon"] == horizon]
        merged = g.merge(
            r[["target_index", "series", "log_pmf_actual"]],
            on=["target_index", "series"], suffixes=("", "_ref"),
        )
        per_t = (
            merged.assign(
                diff=merged["log_pmf_actual"] - merged["log_pmf_actual_ref"]
            )
            .groupby("target_index")["diff"].sum().sort_index()
        )
        cum = per_t.cumsum()
        for t, v in cum.items():
            lpdr_rows.append(
                {"model": model, "reference": reference, "horizon": horizon,
                 "target_index": t, "lpdr": v}
            )
    lpdr_path = run_dir / "lpdr.csv"
    pd.DataFrame(lpdr_rows).to_csv(lpdr_path, index=False)
    written.append(lpdr_path)

    summary = {
        "reference_model": reference,
        "coverage": {
            f"{m}@h{h}": float(v)
            for (h, m), v in cov.stack().items()
        },
        "final_cape": {
            f"{row['model']}@h{row['horizon']}": float(row["cape"])
            for row in cape_rows
            if row["target_index"] == max(
                r2["target_index"] for r2 in cape_rows
                if r2["model"] == row["model"] and r2["horizon"] == row["horizon"]
            )
        },
        "errors": manifest["errors"],
        "complete": not manifest["errors"],
    }
    summary_path = run_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    written.append(summary_path)
    return written
