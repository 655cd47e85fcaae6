"""Parametric bootstrap of log-scale predictive moments."""

import numpy as np


def bootstrap_log_moments(rng, fitted, horizon, reps):
    """Mean and variance of log(y* + 0.5) over simulated replicate forecasts.

    `fitted` must expose simulate(rng, horizon, size) returning replicate
    counts of y_{t+horizon}. The +0.5 continuity correction keeps the log
    finite at zero replicates.
    """
    if reps < 100:
        raise ValueError(f"bootstrap reps must be at least 100, got {reps}")
    y_star = np.asarray(fitted.simulate(rng, horizon, reps), dtype=float)
    logs = np.log(y_star + 0.5)
    return float(logs.mean()), float(logs.var())
