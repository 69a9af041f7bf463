"""Continuous-time noisy-or (CT-NOR) models for timestamped event traces.

Fit channel weights and delay densities by EM, then run likelihood-ratio
tests for input/output dependencies and weight changepoints.
"""

from .em import FitConfig, FitReport, Responsibilities, e_step, fit, fit_restricted
from .errors import BinTooCoarse, EmptySegment, NoExplanation, TraceParseError
from .stat_tests import (
    TestResult,
    changepoint_test,
    chibar_pvalue,
    dependency_test,
    discover,
    estimate_omega0,
    fast_bound_statistic,
)
from .synth import ChangepointSpec, ScenarioTruth, sample_trace, scenario_51, scenario_changepoint
from .trace_model import (
    CtnorModel,
    DelayFamily,
    EventTrace,
    Variant,
    delay_density,
    enable_autocorrelation,
    log_likelihood,
)

__all__ = [
    "BinTooCoarse", "ChangepointSpec", "CtnorModel", "DelayFamily", "EmptySegment",
    "EventTrace", "FitConfig", "FitReport", "NoExplanation", "Responsibilities",
    "ScenarioTruth", "TestResult", "TraceParseError", "Variant", "changepoint_test",
    "chibar_pvalue", "delay_density", "dependency_test", "discover", "e_step",
    "enable_autocorrelation", "estimate_omega0", "fast_bound_statistic", "fit",
    "fit_restricted", "log_likelihood", "sample_trace", "scenario_51",
    "scenario_changepoint",
]
