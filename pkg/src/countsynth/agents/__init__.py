"""Agent forecasting models feeding the synthesis, plus the FMPR baseline."""

from countsynth.agents.bootstrap import bootstrap_log_moments
from countsynth.agents.dglm import DGLM, dglm_forecast_moments, dglm_update
from countsynth.agents.errors import FitError, IdentifiabilityError
from countsynth.agents.fmpr import FMPRDraws, fmpr_fit, fmpr_forecast
from countsynth.agents.gam import GAMFit, SplineSpec, gam_fit
from countsynth.agents.inar import INARFit, inar_fit
from countsynth.agents.moments import (
    AGENT_KINDS,
    AgentSpec,
    SeriesForecaster,
    default_agent_specs,
    quadratic_design,
)
from countsynth.agents.sihr import (
    SIHRConfig,
    SIHRFit,
    SIHRState,
    power_weighted_mean,
    sihr_power_weighted_fit,
    sihr_solve,
)

__all__ = [
    "AGENT_KINDS",
    "AgentSpec",
    "DGLM",
    "FMPRDraws",
    "FitError",
    "GAMFit",
    "IdentifiabilityError",
    "INARFit",
    "SIHRConfig",
    "SIHRFit",
    "SIHRState",
    "SeriesForecaster",
    "SplineSpec",
    "bootstrap_log_moments",
    "default_agent_specs",
    "dglm_forecast_moments",
    "dglm_update",
    "fmpr_fit",
    "fmpr_forecast",
    "gam_fit",
    "inar_fit",
    "power_weighted_mean",
    "quadratic_design",
    "sihr_power_weighted_fit",
    "sihr_solve",
]
