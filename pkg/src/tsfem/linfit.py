"""Dense least-squares engine: fits, deviance, likelihoods and BIC."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

PIVOT_TOL = 1e-10
SIGMA2_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class RankError(ValueError):
    """Design matrix is numerically rank deficient."""

    def __init__(self, message: str, dependent: list[str]):
        super().__init__(message)
        self.dependent = dependent


class PerfectFitWarning(RuntimeWarning):
    """Training residual variance is zero; a variance floor was used."""


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Design matrix plus a descriptor per column (e.g. ``"cluster:0"``)."""

    matrix: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] != len(self.columns):
            raise ValueError("one column descriptor per design column is required")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def _as_design(Xd) -> DesignMatrix:
    if isinstance(Xd, DesignMatrix):
        return Xd
    m = np.asarray(Xd, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    return DesignMatrix(m, tuple(f"col{j}" for j in range(m.shape[1])))


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: np.ndarray
    rss: float
    sigma2: float
    loglik: float
    q: int
    n_obs: int
    columns: tuple[str, ...] = ()
    # orthonormal basis of the column space, reused by the split scorer
    basis: np.ndarray | None = field(default=None, repr=False)

    @property
    def perfect(self) -> bool:
        return self.sigma2 < SIGMA2_FLOOR


def gaussian_loglik(rss: float, n_obs: int) -> float:
    """Gaussian log-likelihood at the ML variance ``rss / n_obs``."""
    sigma2 = max(rss / n_obs, SIGMA2_FLOOR)
    return -0.5 * n_obs * (LOG_2PI + math.log(sigma2)) - 0.5 * rss / sigma2


def ols_fit(Xd, y: np.ndarray) -> FitResult:
    """Least squares by column-pivoted QR.

    Raises:
        RankError: if the numerical rank is below the column count; the
            error lists the columns found to be dependent.
    """
    design = _as_design(Xd)
    X = design.matrix
    y = np.asarray(y, dtype=float)
    N, q = X.shape
    if q < 1:
        raise ValueError("design needs at least one column")
    if N < q:
        raise RankError(f"{N} observations cannot identify {q} parameters", list(design.columns[N:]))
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > PIVOT_TOL * diag[0])) if diag[0] > 0 else 0
    if rank < q:
        dependent = [design.columns[j] for j in piv[rank:]]
        raise RankError(f"design has rank {rank} < {q}; dependent columns: {dependent}", dependent)
    coef_piv = linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(q)
    coef[piv] = coef_piv
    resid = y - X @ coef
    rss = float(resid @ resid)
    sigma2 = rss / N
    return FitResult(coef, rss, sigma2, gaussian_loglik(rss, N), q, N, design.columns, Q)


def deviance(f: FitResult) -> float:
    return f.rss


def predictive_loglik(f: FitResult, Xd_test, y_test: np.ndarray) -> float:
    """Sum of Gaussian log-densities of test outcomes under a training fit."""
    X = _as_design(Xd_test).matrix
    if X.shape[1] != f.q:
        raise ValueError(f"test design has {X.shape[1]} columns, fit has {f.q}")
    return normal_logpdf_sum(np.asarray(y_test, dtype=float) - X @ f.coefficients, f.sigma2)


def normal_logpdf_sum(resid: np.ndarray, sigma2: float) -> float:
    if sigma2 < SIGMA2_FLOOR:
        warnings.warn("zero training variance; using variance floor", PerfectFitWarning, stacklevel=3)
        sigma2 = SIGMA2_FLOOR
    resid = np.asarray(resid, dtype=float)
    return float(-0.5 * len(resid) * (LOG_2PI + math.log(sigma2)) - 0.5 * (resid @ resid) / sigma2)


def bic(f: FitResult) -> float:
    return -2.0 * f.loglik + f.q * math.log(f.n_obs)
