"""Mixture Bayesian predictive synthesis for panels of count time series.

Combines log-scale predictive moments from several forecasting agents into
a Poisson synthesis, clusters the series by how the agents contribute to
their prediction, and scores multi-horizon forecasts over an expanding
window backtest.
"""

from countsynth.domain import (
    AgentPredictive,
    CountPanel,
    SynthesisConfig,
    covariate_transform,
    validate_panel,
)
from countsynth.polya_gamma import pg_mean, pg_sample, pg_variance
from countsynth.synthesis import nb_log_pmf, predictive_simulate, run_sampler

__all__ = [
    "AgentPredictive",
    "CountPanel",
    "SynthesisConfig",
    "covariate_transform",
    "validate_panel",
    "pg_mean",
    "pg_sample",
    "pg_variance",
    "nb_log_pmf",
    "predictive_simulate",
    "run_sampler",
]
