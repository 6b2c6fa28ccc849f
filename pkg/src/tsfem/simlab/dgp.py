"""Data-generating processes of the four simulation scenarios.

Scenario 1: linear covariate effects, normal random unit intercepts.
Scenario 2: tree-structured covariate effects, normal random intercepts.
Scenario 3: linear covariate effects, clustered unit intercepts.
Scenario 4: tree-structured covariate effects, clustered unit intercepts.
Setting 1 is the base design; settings 2-6 change one ingredient each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..baselines import OracleSpec
from ..dataset import ClusteredDataset

INFORMATIVE = (0, 1, 6)  # X1, X2, X7
LINEAR_BETA = {0: 0.8, 1: 0.4, 6: 0.8}
LEAF_GAMMA = (-1.35, -0.45, 0.45, 1.35)
CLUSTER_BETA = {3: (-1.25, 0.0, 1.25), 6: (-1.5, -0.9, -0.3, 0.3, 0.9, 1.5)}

# stream ids for the counter-based generators
DATA_STREAM = 0
FOLD_STREAM = 1


@dataclass(frozen=True)
class SimSpec:
    scenario: int
    setting: int
    reps: int = 100
    seed: int = 2024
    sigma2: float | None = None  # overrides the setting's error variance
    n: int | None = None  # overrides the number of units
    n_i: int | None = None  # overrides observations per unit

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ValueError(f"scenario must be 1-4, got {self.scenario}")
        if self.setting not in range(1, 7):
            raise ValueError(f"setting must be 1-6, got {self.setting}")

    @property
    def units(self) -> int:
        if self.n is not None:
            return self.n
        return {2: 40, 3: 100}.get(self.setting, 20)

    @property
    def per_unit(self) -> int:
        if self.n_i is not None:
            return self.n_i
        return {2: 25, 3: 10}.get(self.setting, 50)

    @property
    def p(self) -> int:
        return 100 if self.setting == 4 else 10

    @property
    def error_variance(self) -> float:
        if self.sigma2 is not None:
            return self.sigma2
        return 2.0 if self.setting == 5 else 1.0

    @property
    def rho(self) -> float:
        return 0.9 if self.setting == 6 and self.scenario in (1, 2) else 0.0

    @property
    def clusters(self) -> int:
        return 6 if self.setting == 6 and self.scenario in (3, 4) else 3

    @property
    def tree_effects(self) -> bool:
        return self.scenario in (2, 4)

    @property
    def clustered_units(self) -> bool:
        return self.scenario in (3, 4)

    def rng(self, rep: int, stream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.scenario, self.setting, rep, stream))
        return np.random.Generator(np.random.Philox(ss))

    def fold_seed(self, rep: int) -> int:
        return int(self.rng(rep, FOLD_STREAM).integers(2**31))


@dataclass(frozen=True, eq=False)
class SimTruth:
    eta_x: np.ndarray  # per row
    eta_i: np.ndarray  # per unit code
    unit: np.ndarray
    n_i: np.ndarray
    informative: tuple[int, ...]
    p: int
    oracle: OracleSpec


def continuous_columns(p: int) -> list[int]:
    return list(range(6)) + (list(range(10, 15)) if p == 100 else [])


def true_leaf(X: np.ndarray) -> np.ndarray:
    """Subgroup 0-3 of the tree-structured covariate effect."""
    x1, x2, x7 = X[:, 0], X[:, 1], X[:, 6]
    return np.select([(x1 <= 0) & (x2 <= 0), (x1 <= 0) & (x2 > 0), (x1 > 0) & (x7 == 0)], [0, 1, 2], 3)


def generate(spec: SimSpec, rep: int) -> tuple[ClusteredDataset, SimTruth]:
    rng = spec.rng(rep, DATA_STREAM)
    n, n_i, p = spec.units, spec.per_unit, spec.p
    N = n * n_i
    unit = np.repeat(np.arange(n), n_i)

    if spec.clustered_units:
        u = rng.uniform(size=n)
        C = spec.clusters
        # (k-1)/C < u <= k/C belongs to cluster k; u = 0 to cluster 0
        group = np.clip(np.ceil(u * C).astype(int) - 1, 0, C - 1)
        eta_i = np.asarray(CLUSTER_BETA[C])[group]
    else:
        eta_i = rng.standard_normal(n)
        group = None

    X = np.empty((N, p))
    cont = continuous_columns(p)
    binary = [k for k in range(p) if k not in cont]
    X[:, cont] = rng.standard_normal((N, len(cont)))
    X[:, binary] = rng.binomial(1, 0.5, size=(N, len(binary)))
    if spec.rho:
        b = eta_i[unit]
        for k in (0, 1):
            X[:, k] = spec.rho * b + math.sqrt(1.0 - spec.rho**2) * X[:, k]

    if spec.tree_effects:
        leaf = true_leaf(X)
        eta_x = np.asarray(LEAF_GAMMA)[leaf]
        oracle = OracleSpec(unit_groups=group, leaf=leaf)
    else:
        eta_x = sum(beta * X[:, k] for k, beta in LINEAR_BETA.items())
        oracle = OracleSpec(unit_groups=group, linear_vars=INFORMATIVE)

    eps = rng.standard_normal(N) * math.sqrt(spec.error_variance)
    y = eta_i[unit] + eta_x + eps
    d = ClusteredDataset.from_arrays(
        y, unit, X, [f"x{k + 1}" for k in range(p)], {f"x{k + 1}": "binary" for k in binary}
    )
    truth = SimTruth(eta_x, eta_i, d.unit, d.n_i, INFORMATIVE, p, oracle)
    return d, truth
