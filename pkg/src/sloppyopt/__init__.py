"""Hierarchical stiff/sloppy subspace optimization for expensive least-squares simulators."""

from .core import BoundsBox, BudgetExhausted, OptimizationTrace, ResidualProblem, Tracker, loss_of
from .hierarchical import (
    HierarchicalConfig,
    HierarchicalResult,
    build_geometry,
    exact_config,
    gradient_diagnostics,
    run,
    stochastic_config,
)
from .loss import Dataset, load_dataset, save_dataset
from .uncertainty import UncertaintyReport, parameter_uncertainty

__all__ = [
    "BoundsBox", "BudgetExhausted", "OptimizationTrace", "ResidualProblem", "Tracker", "loss_of",
    "HierarchicalConfig", "HierarchicalResult", "build_geometry", "exact_config",
    "gradient_diagnostics", "run", "stochastic_config",
    "Dataset", "load_dataset", "save_dataset",
    "UncertaintyReport", "parameter_uncertainty",
]
__version__ = "0.1.0"
