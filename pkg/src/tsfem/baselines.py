"""Comparison models: LTSCB, null model, random-intercept LMM, oracle refit."""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .dataset import ClusteredDataset
from .linfit import LOG_2PI, bic, ols_fit
from .pruning import fit_pruned
from .stepwise import FitConfig
from .trees import CovNode, ParseError, TreeModel, UnitTree, fit_structure

PSI_HI = 1e4


def fit_ltscb(d: ClusteredDataset, cfg: FitConfig, workers: int = 1, base: TreeModel | None = None) -> TreeModel:
    """Pruned LTSC followed by BIC backward elimination of linear terms.

    The unit tree is held fixed during elimination. Each round drops the
    covariate whose removal gives the lowest BIC, as long as that BIC is
    strictly below the current one. ``base`` reuses an already pruned LTSC
    fit on the same data.
    """
    if base is None:
        base = fit_pruned(d, dataclasses.replace(cfg, model="ltsc"), workers)
    keep = list(base.linear_vars)
    current = _refit(d, base, keep)
    current_bic = bic(current[1])
    while keep:
        trials = []
        for k in keep:
            reduced = [v for v in keep if v != k]
            model, fit = _refit(d, base, reduced)
            trials.append((bic(fit), k, model, fit))
        best_bic, k, model, fit = min(trials, key=lambda t: t[0])
        if not best_bic < current_bic:
            break
        keep.remove(k)
        current, current_bic = (model, fit), best_bic
    return dataclasses.replace(current[0], kind="ltscb", cv=base.cv, config=base.config)


def _refit(d, base: TreeModel, linear_vars):
    return fit_structure(d, base.cov_tree, base.unit_tree, "ltscb", tuple(linear_vars), config=base.config)


def fit_null(d: ClusteredDataset) -> TreeModel:
    model, _ = fit_structure(d, CovNode(), UnitTree(tuple(range(d.n))), "null")
    return model


@dataclass(frozen=True, eq=False)
class LmmFit:
    """Gaussian random-intercept model fitted by maximum likelihood."""

    intercept: float
    beta: np.ndarray
    sigma2_b: float
    sigma2_e: float
    blups: np.ndarray
    loglik: float
    unit_labels: tuple[str, ...]
    covariate_names: tuple[str, ...]
    at_boundary: bool = False
    n_obs: int = 0

    @property
    def psi(self) -> float:
        return self.sigma2_b / self.sigma2_e

    def eta_x(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.beta

    def eta_i(self) -> np.ndarray:
        return self.intercept + self.blups

    def predict_frame(self, X, labels, allow_unseen: bool = False) -> dict[str, np.ndarray]:
        """Unseen units get the population-level prediction (random effect 0)."""
        from .trees import UnseenUnitError

        index = {lab: i for i, lab in enumerate(self.unit_labels)}
        codes = np.array([index.get(str(u), -1) for u in labels], dtype=np.int64)
        unseen = codes < 0
        if unseen.any() and not allow_unseen:
            raise UnseenUnitError([str(u) for u, f in zip(labels, unseen) if f])
        b = np.where(unseen, 0.0, self.blups[np.maximum(codes, 0)])
        pred = self.intercept + self.eta_x(X) + b
        n = len(codes)
        return {"prediction": pred, "leaf": np.zeros(n, dtype=np.int64), "cluster": codes, "fallback": unseen}

    def to_document(self) -> dict:
        f = lambda v: repr(float(v))  # noqa: E731
        return {
            "format_version": 1,
            "kind": "lmm",
            "covariate_names": list(self.covariate_names),
            "unit_labels": list(self.unit_labels),
            "intercept": f(self.intercept),
            "beta": [f(v) for v in self.beta],
            "sigma2_b": f(self.sigma2_b),
            "sigma2_e": f(self.sigma2_e),
            "blups": [f(v) for v in self.blups],
            "loglik": f(self.loglik),
            "at_boundary": self.at_boundary,
            "n_obs": self.n_obs,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "LmmFit":
        try:
            return cls(
                float(doc["intercept"]),
                np.array([float(v) for v in doc["beta"]]),
                float(doc["sigma2_b"]),
                float(doc["sigma2_e"]),
                np.array([float(v) for v in doc["blups"]]),
                float(doc["loglik"]),
                tuple(doc["unit_labels"]),
                tuple(doc["covariate_names"]),
                bool(doc.get("at_boundary", False)),
                int(doc.get("n_obs", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError("$", f"malformed LMM document: {exc}") from None

    def serialize(self) -> str:
        return json.dumps(self.to_document(), indent=2)


class _Profile:
    """Profiled ML log-likelihood of the random-intercept model in ``psi``.

    For fixed ``psi = sigma2_b / sigma2_e`` the inverse covariance of unit
    ``i`` is ``(I - w_i/n_i J) / sigma2_e`` with ``w_i = n_i psi / (1 + n_i psi)``,
    so GLS only needs per-unit sums.
    """

    def __init__(self, d: ClusteredDataset):
        Z = np.column_stack([np.ones(d.N), d.X])
        self.d = d
        self.Z = Z
        self.n_i = d.n_i.astype(float)
        self.ZtZ = Z.T @ Z
        self.Zty = Z.T @ d.y
        self.yty = float(d.y @ d.y)
        onehot = np.zeros((d.n, d.N))
        onehot[d.unit, np.arange(d.N)] = 1.0
        self.Zs = onehot @ Z  # per-unit column sums
        self.ys = onehot @ d.y

    def solve(self, psi: float):
        w = self.n_i * psi / (1.0 + self.n_i * psi)
        c = w / self.n_i
        A = self.ZtZ - (self.Zs * c[:, None]).T @ self.Zs
        b = self.Zty - self.Zs.T @ (c * self.ys)
        coef = np.linalg.solve(A, b)
        quad = self.yty - 2 * coef @ self.Zty + coef @ self.ZtZ @ coef
        rs = self.ys - self.Zs @ coef
        quad -= float(np.sum(c * rs**2))
        N = self.d.N
        sigma2_e = max(quad / N, 1e-300)
        ll = -0.5 * N * (LOG_2PI + math.log(sigma2_e) + 1.0) - 0.5 * float(np.sum(np.log1p(self.n_i * psi)))
        return ll, coef, sigma2_e

    def loglik(self, psi: float) -> float:
        return self.solve(psi)[0]

    def score(self, psi: float) -> float:
        """Derivative of the profiled log-likelihood in ``psi``.

        By the envelope theorem only the explicit ``psi`` dependence of the
        GLS quadratic form counts: ``dQ/dpsi = -sum_i rs_i^2 / (1 + n_i psi)^2``.
        """
        _, coef, sigma2_e = self.solve(psi)
        rs = self.ys - self.Zs @ coef
        g = 1.0 + self.n_i * psi
        dq = -float(np.sum(rs**2 / g**2))
        return -0.5 * dq / sigma2_e - 0.5 * float(np.sum(self.n_i / g))


def _polish(prof: _Profile, psi: float) -> float:
    """Solve score(psi) = 0 near an interior optimum to full precision."""
    if psi <= 0.0:
        return psi
    lo, hi = psi, psi
    for _ in range(40):
        lo, hi = lo * 0.9, hi * 1.1
        if prof.score(lo) > 0.0 > prof.score(hi):
            root = optimize.brentq(prof.score, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
            # a + to - sign change brackets a maximum; allow rounding noise
            ll = prof.loglik(psi)
            return root if prof.loglik(root) >= ll - 1e-12 * abs(ll) else psi
    return psi


def fit_lmm(d: ClusteredDataset, psi_hi: float = PSI_HI) -> LmmFit:
    """ML fit of ``y = b0 + x'beta + b_i + e`` with ``b_i ~ N(0, sigma2_b)``.

    The variance ratio is found by bounded Brent search on
    ``u = psi / (1 + psi)``; the estimate is checked against a 21-point grid
    and the boundary ``psi = 0``.
    """
    if d.n < 2:
        raise ValueError("a random-intercept model needs at least two units")
    prof = _Profile(d)
    at_boundary = False
    for attempt in range(2):
        u_hi = psi_hi / (1.0 + psi_hi)
        res = optimize.minimize_scalar(
            lambda u: -prof.loglik(u / (1.0 - u)),
            bounds=(0.0, u_hi),
            method="bounded",
            options={"xatol": 1e-12, "maxiter": 500},
        )
        grid = np.linspace(0.0, psi_hi, 21)
        cands = [res.x / (1.0 - res.x), 0.0, *grid]
        lls = [prof.loglik(p) for p in cands]
        psi = cands[int(np.argmax(lls))]
        if psi != cands[0]:
            # a grid point won; polish around it
            lo, hi = max(psi - psi_hi / 20, 0.0), min(psi + psi_hi / 20, psi_hi)
            res = optimize.minimize_scalar(lambda p: -prof.loglik(p), bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10 * max(1.0, psi)})
            if prof.loglik(res.x) > prof.loglik(psi):
                psi = res.x
        if psi < 0.99 * psi_hi:
            break
        if attempt == 0:
            psi_hi *= 100.0
        else:
            at_boundary = True
            warnings.warn("variance ratio estimate at the search boundary", RuntimeWarning, stacklevel=2)
    psi = _polish(prof, psi)
    ll, coef, sigma2_e = prof.solve(psi)
    sigma2_b = psi * sigma2_e
    resid = d.y - prof.Z @ coef
    rbar = np.bincount(d.unit, weights=resid, minlength=d.n) / d.n_i
    shrink = sigma2_b * d.n_i / (sigma2_e + sigma2_b * d.n_i)
    return LmmFit(
        intercept=float(coef[0]),
        beta=coef[1:].copy(),
        sigma2_b=float(sigma2_b),
        sigma2_e=float(sigma2_e),
        blups=shrink * rbar,
        loglik=float(ll),
        unit_labels=d.unit_labels,
        covariate_names=tuple(d.names),
        at_boundary=at_boundary,
        n_obs=d.N,
    )


@dataclass(frozen=True, eq=False)
class OracleSpec:
    """True structure to refit.

    Attributes:
        unit_groups: true cluster of every unit code; ``None`` gives every
            unit its own intercept.
        leaf: true covariate subgroup of every row, or ``None``.
        linear_vars: covariates entering linearly.
    """

    unit_groups: np.ndarray | None = None
    leaf: np.ndarray | None = None
    linear_vars: tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class DecomposedFit:
    """Fitted covariate part per row and unit part per unit."""

    eta_x: np.ndarray
    eta_i: np.ndarray
    rss: float
    selected: set[int] = field(default_factory=set)


def fit_perfect(d: ClusteredDataset, spec: OracleSpec) -> DecomposedFit:
    """Least-squares refit of the coefficients on the true design."""
    groups = np.arange(d.n) if spec.unit_groups is None else np.asarray(spec.unit_groups)
    _, group_code = np.unique(groups, return_inverse=True)
    G = group_code.max() + 1
    cols = [(group_code[d.unit] == g).astype(float) for g in range(G)]
    M = 0
    if spec.leaf is not None:
        leaf = np.asarray(spec.leaf)
        _, leaf_code = np.unique(leaf, return_inverse=True)
        M = leaf_code.max() + 1
        cols += [(leaf_code == m).astype(float) for m in range(M - 1)]
    cols += [d.X[:, k] for k in spec.linear_vars]
    fit = ols_fit(np.column_stack(cols), d.y)
    beta0 = fit.coefficients[:G]
    eta_x = np.zeros(d.N)
    if M:
        gamma = np.append(fit.coefficients[G : G + M - 1], 0.0)
        eta_x += gamma[leaf_code]
    if spec.linear_vars:
        eta_x += d.X[:, list(spec.linear_vars)] @ fit.coefficients[G + max(M - 1, 0) :]
    eta_i = beta0[group_code]
    return DecomposedFit(eta_x, eta_i, fit.rss)


def decompose(model, d: ClusteredDataset) -> DecomposedFit:
    """Split a fitted model into covariate part (rows) and unit part (units)."""
    if isinstance(model, LmmFit):
        return DecomposedFit(model.eta_x(d.X), model.eta_i(), math.nan)
    if isinstance(model, DecomposedFit):
        return model
    eta_x = model.eta_x(d.X)
    cluster = model.unit_tree.cluster_of_units()[model.unit_codes(d.unit_labels)]
    eta_i = model.cluster_coef[cluster]
    selected = model.selected_vars() if model.kind in ("ttsc", "ltscb") else set()
    return DecomposedFit(eta_x, eta_i, model.rss, selected)

