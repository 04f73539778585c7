"""Continuous-time Gaussian belief propagation on cubic B- and Z-splines."""

from ._core import (
    ConfigError,
    Error,
    ExperimentConfig,
    Pose,
    Scenario,
    SplineTrajectory,
    boxminus,
    boxplus,
    quat_exp,
    quat_log,
    rmse,
    run_experiment,
    run_sweep,
    simulate,
)

__all__ = [
    "ConfigError",
    "Error",
    "ExperimentConfig",
    "Pose",
    "Scenario",
    "SplineTrajectory",
    "boxminus",
    "boxplus",
    "quat_exp",
    "quat_log",
    "rmse",
    "run_experiment",
    "run_sweep",
    "simulate",
]
