"""Simulation laboratory: data generation, metrics, study runner, reports."""

from .dgp import SimSpec, SimTruth, generate
from .metrics import rmse_i, rmse_x, tpr_fpr
from .study import StudyResult, run_study

__all__ = ["SimSpec", "SimTruth", "generate", "rmse_i", "rmse_x", "tpr_fpr", "StudyResult", "run_study"]
