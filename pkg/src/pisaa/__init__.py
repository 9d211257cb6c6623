"""Parallel interacting stochastic approximation annealing."""

from .config import ConfigError, ExperimentSpec, validate_config
from .diagnostics import (OracleUnsupported, OracleWeights, batch_means, loglog_slope, oracle_weights,
                          relative_efficiency, summarize_replicates, theta_mse, visit_windows)
from .engine import OperatorConfig, PilotConfig, Population, RunConfig, Runner, Trace, WarmStart, run, sa_run
from .problems import make_problem
from .schedules import (DesiredProbability, GainSchedule, Partition, TemperatureLadder, TruncationBounds,
                        desired_probability, gain_at, subregion_index, temperature_at)
from .target import BiasedTarget, ThetaState, normalize_theta, truncate, weight_update

__version__ = "0.1.0"

__all__ = [
    "BiasedTarget", "ConfigError", "DesiredProbability", "ExperimentSpec", "GainSchedule", "OperatorConfig",
    "OracleUnsupported", "OracleWeights", "Partition", "PilotConfig", "Population", "RunConfig", "Runner",
    "TemperatureLadder", "ThetaState", "Trace", "TruncationBounds", "WarmStart", "batch_means",
    "desired_probability", "gain_at", "loglog_slope", "make_problem", "normalize_theta", "oracle_weights",
    "relative_efficiency", "run", "run_experiment", "sa_run", "subregion_index", "summarize_replicates",
    "temperature_at", "theta_mse", "truncate", "validate_config", "visit_windows", "weight_update",
]


def run_experiment(spec, output=None, workers=None):
    from .cli import run_experiment as _run
    return _run(spec, output, workers)
