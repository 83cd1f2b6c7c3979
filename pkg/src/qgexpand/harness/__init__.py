"""Configuration, CSV reporting, exponent fits, acceptance suite and CLI."""

from qgexpand.harness.experiments import ExperimentPlan, ExperimentResult, residual_norms, run_experiment
from qgexpand.harness.fitting import FitResult, FloorError, fit_decay

__all__ = [
    "ExperimentPlan",
    "ExperimentResult",
    "FitResult",
    "FloorError",
    "fit_decay",
    "residual_norms",
    "run_experiment",
]
