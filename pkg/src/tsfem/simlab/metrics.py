"""Evaluation criteria: unit-weighted RMSEs and selection rates."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from ..trees import unit_weighted_mean
from .dgp import SimTruth


def _weighted_rms(diff_rows: np.ndarray, unit: np.ndarray, n_i: np.ndarray) -> float:
    return math.sqrt(max(unit_weighted_mean(diff_rows**2, unit, n_i), 0.0))


def rmse_x(truth: SimTruth, eta_x_hat: np.ndarray) -> float:
    """RMSE of the centred covariate effects, weighting each unit equally."""
    u, n_i = truth.unit, truth.n_i
    true_c = truth.eta_x - unit_weighted_mean(truth.eta_x, u, n_i)
    hat_c = eta_x_hat - unit_weighted_mean(eta_x_hat, u, n_i)
    return _weighted_rms(true_c - hat_c, u, n_i)


def rmse_i(truth: SimTruth, eta_i_hat: np.ndarray, eta_x_hat: np.ndarray) -> float:
    """RMSE of the expected unit outcomes ``eta_I(i) + mean covariate effect``."""
    u, n_i = truth.unit, truth.n_i
    true_i = truth.eta_i + unit_weighted_mean(truth.eta_x, u, n_i)
    hat_i = np.asarray(eta_i_hat) + unit_weighted_mean(eta_x_hat, u, n_i)
    diff = (true_i - hat_i)[u]
    return _weighted_rms(diff, u, n_i)


def tpr_fpr(informative: Iterable[int], selected: Iterable[int], p: int) -> tuple[float, float]:
    informative, selected = set(informative), set(selected)
    noise = set(range(p)) - informative
    tpr = len(selected & informative) / len(informative) if informative else 0.0
    fpr = len(selected & noise) / len(noise) if noise else 0.0
    return tpr, fpr
