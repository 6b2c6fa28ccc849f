"""Covariate tree, unit tree and the fitted two-tree model.

The covariate tree is an ordinary binary tree over covariate thresholds
(left child ``x_k <= c``). The unit tree is kept as a set of cut positions
over a fixed ordering of the units, each cluster being a contiguous run of
that ordering. Leaves and clusters are numbered left to right.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataset import ClusteredDataset
from .linfit import DesignMatrix, FitResult, ols_fit

FORMAT_VERSION = 1
TREE_KINDS = ("ttsc", "ltsc", "ltscb", "null", "perfect")


class EncodingError(ValueError):
    """The requested partition has an empty cell."""


class UnseenUnitError(KeyError):
    def __init__(self, units):
        super().__init__(f"units not present in the fitted model: {sorted(set(units))}")
        self.units = sorted(set(units))


class ParseError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class CovNode:
    """Node of the covariate tree; a leaf when ``var`` is None."""

    var: int | None = None
    threshold: float | None = None
    left: "CovNode | None" = None
    right: "CovNode | None" = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.var is None

    def leaves(self) -> list["CovNode"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def n_splits(self) -> int:
        return self.n_leaves - 1

    def split_vars(self) -> set[int]:
        if self.is_leaf:
            return set()
        return {self.var} | self.left.split_vars() | self.right.split_vars()

    def assign(self, X: np.ndarray) -> np.ndarray:
        """Left-to-right leaf id of every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X), dtype=np.int64)
        counter = 0

        def visit(node, rows):
            nonlocal counter
            if node.is_leaf:
                out[rows] = counter
                counter += 1
                return
            go_left = X[rows, node.var] <= node.threshold
            visit(node.left, rows[go_left])
            visit(node.right, rows[~go_left])

        visit(self, np.arange(len(X)))
        return out

    def split_leaf(self, leaf_id: int, var: int, threshold: float) -> "CovNode":
        """Copy of the tree with leaf ``leaf_id`` split at ``x_var <= threshold``."""
        root = copy.deepcopy(self)
        leaf = root.leaves()[leaf_id]
        leaf.var, leaf.threshold = int(var), float(threshold)
        leaf.left = CovNode(depth=leaf.depth + 1)
        leaf.right = CovNode(depth=leaf.depth + 1)
        return root

    def max_depth(self) -> int:
        if self.is_leaf:
            return self.depth
        return max(self.left.max_depth(), self.right.max_depth())

    def rules(self, names: list[str] | None = None) -> list[str]:
        """Human-readable conjunction of conditions for each leaf."""
        out = []

        def name(k):
            return names[k] if names else f"x{k + 1}"

        def visit(node, conds):
            if node.is_leaf:
                out.append(" & ".join(conds) if conds else "(all)")
                return
            visit(node.left, conds + [f"{name(node.var)} <= {node.threshold:g}"])
            visit(node.right, conds + [f"{name(node.var)} > {node.threshold:g}"])

        visit(self, [])
        return out

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": True}
        return {
            "var": self.var,
            "threshold": repr(float(self.threshold)),
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Any, path: str = "$.cov_tree", depth: int = 0) -> "CovNode":
        if not isinstance(doc, dict):
            raise ParseError(path, "expected an object")
        if doc.get("leaf"):
            return cls(depth=depth)
        try:
            var = int(doc["var"])
            thr = _num(doc["threshold"], f"{path}.threshold")
        except KeyError as exc:
            raise ParseError(path, f"missing field {exc.args[0]!r}") from None
        if var < 0:
            raise ParseError(f"{path}.var", "negative covariate index")
        return cls(
            var,
            thr,
            cls.from_dict(doc.get("left"), f"{path}.left", depth + 1),
            cls.from_dict(doc.get("right"), f"{path}.right", depth + 1),
            depth,
        )


@dataclass(frozen=True)
class UnitTree:
    """Clusters of units as contiguous runs of a fixed unit ordering.

    Attributes:
        ordering: unit codes sorted by ascending unit mean outcome.
        cuts: sorted positions in ``1..n-1``; a cut at ``j`` separates
            ordered units ``j-1`` and ``j``.
        depths: tree depth of each cluster, in cluster order.
    """

    ordering: tuple[int, ...]
    cuts: tuple[int, ...] = ()
    depths: tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "ordering", tuple(int(u) for u in self.ordering))
        object.__setattr__(self, "cuts", tuple(int(c) for c in self.cuts))
        object.__setattr__(self, "depths", tuple(int(c) for c in self.depths))
        n = len(self.ordering)
        if sorted(self.ordering) != list(range(n)):
            raise ValueError("ordering must be a permutation of 0..n-1")
        if any(c < 1 or c > n - 1 for c in self.cuts):
            raise ValueError(f"cut positions must lie in 1..{n - 1}")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValueError("cut positions must be strictly increasing")
        if len(self.depths) != len(self.cuts) + 1:
            raise ValueError("need one depth per cluster")

    @property
    def n(self) -> int:
        return len(self.ordering)

    @property
    def n_clusters(self) -> int:
        return len(self.cuts) + 1

    def bounds(self) -> list[tuple[int, int]]:
        """Half-open ``[start, stop)`` ordering positions of each cluster."""
        edges = (0, *self.cuts, self.n)
        return list(zip(edges[:-1], edges[1:]))

    def positions(self) -> np.ndarray:
        pos = np.empty(self.n, dtype=np.int64)
        pos[list(self.ordering)] = np.arange(self.n)
        return pos

    def cluster_of_units(self) -> np.ndarray:
        """Cluster index of every unit code."""
        return np.searchsorted(np.asarray(self.cuts, dtype=np.int64), self.positions(), side="right")

    def members(self) -> list[list[int]]:
        return [list(self.ordering[a:b]) for a, b in self.bounds()]

    def split(self, cluster: int, cut: int) -> "UnitTree":
        a, b = self.bounds()[cluster]
        if not a < cut < b:
            raise ValueError(f"cut {cut} is not inside cluster {cluster} = [{a}, {b})")
        d = self.depths[cluster] + 1
        depths = self.depths[:cluster] + (d, d) + self.depths[cluster + 1 :]
        return UnitTree(self.ordering, tuple(sorted(self.cuts + (cut,))), depths)


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Fitted model ``cluster intercept + covariate-tree effect [+ x'beta]``.

    Raw coefficients use the right-most covariate leaf as reference (its
    effect is 0). The adjusted coefficients move the unit-weighted mean
    covariate effect ``gamma_bar`` into the cluster intercepts.
    """

    kind: str
    cov_tree: CovNode
    unit_tree: UnitTree
    unit_labels: tuple[str, ...]
    covariate_names: tuple[str, ...]
    cluster_coef: np.ndarray
    leaf_coef: np.ndarray
    linear_vars: tuple[int, ...] = ()
    linear_coef: np.ndarray = field(default_factory=lambda: np.empty(0))
    sigma2: float = math.nan
    rss: float = math.nan
    n_obs: int = 0
    gamma_bar: float = math.nan
    cluster_coef_adj: np.ndarray | None = None
    leaf_coef_adj: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    cv: Any = None

    @property
    def n_clusters(self) -> int:
        return self.unit_tree.n_clusters

    @property
    def n_leaves(self) -> int:
        return self.cov_tree.n_leaves

    @property
    def n_splits(self) -> int:
        return self.cov_tree.n_splits + len(self.unit_tree.cuts)

    @property
    def adjusted(self) -> bool:
        return self.cluster_coef_adj is not None

    def selected_vars(self) -> set[int]:
        return self.cov_tree.split_vars() | set(self.linear_vars)

    def eta_x(self, X: np.ndarray) -> np.ndarray:
        """Raw covariate part (leaf effect plus linear terms) for each row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self.leaf_coef[self.cov_tree.assign(X)]
        if self.linear_vars:
            out = out + X[:, list(self.linear_vars)] @ self.linear_coef
        return out

    def unit_codes(self, labels) -> np.ndarray:
        index = {lab: i for i, lab in enumerate(self.unit_labels)}
        return np.array([index.get(str(lab), -1) for lab in labels], dtype=np.int64)

    def cluster_shares(self) -> np.ndarray:
        return np.array([b - a for a, b in self.unit_tree.bounds()], dtype=float) / self.unit_tree.n

    def predict_frame(self, X: np.ndarray, labels, allow_unseen: bool = False) -> dict[str, np.ndarray]:
        """Predictions for many rows given covariates and unit labels.

        Returns a dict with ``prediction``, ``leaf``, ``cluster`` (-1 for
        unseen units) and ``fallback`` (True where the unseen-unit rule
        was applied).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        labels = [str(u) for u in labels]
        codes = self.unit_codes(labels)
        unseen = codes < 0
        if unseen.any() and not allow_unseen:
            raise UnseenUnitError([lab for lab, u in zip(labels, unseen) if u])
        beta, gamma = self._coefs()
        leaf = self.cov_tree.assign(X)
        cluster = np.full(len(X), -1, dtype=np.int64)
        cluster[~unseen] = self.unit_tree.cluster_of_units()[codes[~unseen]]
        intercept = np.where(unseen, self.cluster_shares() @ beta, beta[np.maximum(cluster, 0)])
        pred = intercept + gamma[leaf]
        if self.linear_vars:
            pred = pred + X[:, list(self.linear_vars)] @ self.linear_coef
        return {"prediction": pred, "leaf": leaf, "cluster": cluster, "fallback": unseen}

    def _coefs(self):
        if self.adjusted:
            return self.cluster_coef_adj, self.leaf_coef_adj
        return self.cluster_coef, self.leaf_coef

    def to_document(self) -> dict:
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "covariate_names": list(self.covariate_names),
            "unit_labels": list(self.unit_labels),
            "unit_tree": {
                "ordering": list(self.unit_tree.ordering),
                "cuts": list(self.unit_tree.cuts),
                "depths": list(self.unit_tree.depths),
            },
            "cov_tree": self.cov_tree.to_dict(),
            "coefficients": {
                "cluster": _fmt(self.cluster_coef),
                "leaf": _fmt(self.leaf_coef),
                "linear_vars": list(self.linear_vars),
                "linear": _fmt(self.linear_coef),
            },
            "adjusted": None,
            "sigma2": repr(float(self.sigma2)),
            "rss": repr(float(self.rss)),
            "n_obs": self.n_obs,
            "config": self.config,
            "cv": self.cv.to_dict() if self.cv is not None else None,
        }
        if self.adjusted:
            doc["adjusted"] = {
                "gamma_bar": repr(float(self.gamma_bar)),
                "cluster": _fmt(self.cluster_coef_adj),
                "leaf": _fmt(self.leaf_coef_adj),
            }
        return doc


def _fmt(a) -> list[str]:
    return [repr(float(v)) for v in np.asarray(a, dtype=float)]


def _num(text: Any, path: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ParseError(path, f"{text!r} is not a number") from None


def _nums(values: Any, path: str) -> np.ndarray:
    if not isinstance(values, list):
        raise ParseError(path, "expected a list")
    return np.array([_num(v, f"{path}[{j}]") for j, v in enumerate(values)], dtype=float)


def encode_design(
    d: ClusteredDataset,
    cov: CovNode,
    ut: UnitTree,
    linear_vars: tuple[int, ...] = (),
    reference: int | None = None,
) -> DesignMatrix:
    """Cluster indicators (or one intercept), non-reference leaf indicators,
    then linear covariate columns."""
    if ut.n != d.n:
        raise EncodingError(f"unit tree covers {ut.n} units, data has {d.n}")
    C = ut.n_clusters
    cluster = ut.cluster_of_units()[d.unit]
    leaf = cov.assign(d.X)
    M = cov.n_leaves
    if reference is None:
        reference = M - 1
    counts = np.bincount(leaf, minlength=M)
    if np.any(counts == 0):
        raise EncodingError(f"empty covariate leaves: {np.flatnonzero(counts == 0).tolist()}")
    cols, names = [], []
    if C == 1:
        cols.append(np.ones(d.N))
        names.append("intercept")
    else:
        for c in range(C):
            cols.append((cluster == c).astype(float))
            names.append(f"cluster:{c}")
    for m in range(M):
        if m != reference:
            cols.append((leaf == m).astype(float))
            names.append(f"leaf:{m}")
    for k in linear_vars:
        cols.append(d.X[:, k])
        names.append(f"linear:{d.meta[k].name}")
    return DesignMatrix(np.column_stack(cols), tuple(names))


def fit_structure(
    d: ClusteredDataset,
    cov: CovNode,
    ut: UnitTree,
    kind: str = "ttsc",
    linear_vars: tuple[int, ...] = (),
    reference: int | None = None,
    config: dict | None = None,
) -> tuple[TreeModel, FitResult]:
    """Least-squares fit of a fixed tree structure, adjusted coefficients included."""
    design = encode_design(d, cov, ut, linear_vars, reference)
    fit = ols_fit(design, d.y)
    C, M = ut.n_clusters, cov.n_leaves
    if reference is None:
        reference = M - 1
    beta = fit.coefficients[:C].copy()
    gamma = np.zeros(M)
    gamma[[m for m in range(M) if m != reference]] = fit.coefficients[C : C + M - 1]
    model = TreeModel(
        kind=kind,
        cov_tree=cov,
        unit_tree=ut,
        unit_labels=d.unit_labels,
        covariate_names=tuple(d.names),
        cluster_coef=beta,
        leaf_coef=gamma,
        linear_vars=tuple(int(k) for k in linear_vars),
        linear_coef=fit.coefficients[C + M - 1 :].copy(),
        sigma2=fit.sigma2,
        rss=fit.rss,
        n_obs=d.N,
        config=dict(config or {}),
    )
    return adjust_coefficients(model, d), fit


def unit_weighted_mean(values: np.ndarray, unit: np.ndarray, n_i: np.ndarray) -> float:
    """``(1/n) sum_i (1/n_i) sum_j values_ij``."""
    return float(np.mean(np.bincount(unit, weights=values, minlength=len(n_i)) / n_i))


def adjust_coefficients(model: TreeModel, d: ClusteredDataset) -> TreeModel:
    gamma_bar = unit_weighted_mean(model.eta_x(d.X), d.unit, d.n_i)
    return dataclasses.replace(
        model,
        gamma_bar=gamma_bar,
        cluster_coef_adj=model.cluster_coef + gamma_bar,
        leaf_coef_adj=model.leaf_coef - gamma_bar,
    )


def predict(model: TreeModel, x, unit, allow_unseen: bool = False) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(model.predict_frame(x, [unit], allow_unseen)["prediction"][0])


def serialize(model: TreeModel) -> str:
    return json.dumps(model.to_document(), indent=2)


def deserialize(text: str | dict) -> TreeModel:
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError("$", f"invalid JSON: {exc}") from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ParseError("$", "expected an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParseError("$.format_version", f"unsupported version {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind not in TREE_KINDS:
        raise ParseError("$.kind", f"not a tree model kind: {kind!r}")
    try:
        labels = tuple(str(u) for u in doc["unit_labels"])
        names = tuple(str(u) for u in doc["covariate_names"])
        ut_doc = doc["unit_tree"]
        coef = doc["coefficients"]
    except KeyError as exc:
        raise ParseError("$", f"missing field {exc.args[0]!r}") from None
    n = len(labels)
    ordering = ut_doc.get("ordering", [])
    cuts = ut_doc.get("cuts", [])
    for j, c in enumerate(cuts):
        if not isinstance(c, int) or not 1 <= c <= n - 1:
            raise ParseError(f"$.unit_tree.cuts[{j}]", f"cut {c!r} outside 1..{n - 1}")
    try:
        ut = UnitTree(tuple(ordering), tuple(cuts), tuple(ut_doc.get("depths", [0] * (len(cuts) + 1))))
    except ValueError as exc:
        raise ParseError("$.unit_tree", str(exc)) from None
    if ut.n != n:
        raise ParseError("$.unit_tree.ordering", f"has {ut.n} units, expected {n}")
    cov = CovNode.from_dict(doc.get("cov_tree"))
    for k in cov.split_vars():
        if k >= len(names):
            raise ParseError("$.cov_tree", f"covariate index {k} out of range")
    beta = _nums(coef.get("cluster"), "$.coefficients.cluster")
    gamma = _nums(coef.get("leaf"), "$.coefficients.leaf")
    if len(beta) != ut.n_clusters:
        raise ParseError("$.coefficients.cluster", f"expected {ut.n_clusters} values")
    if len(gamma) != cov.n_leaves:
        raise ParseError("$.coefficients.leaf", f"expected {cov.n_leaves} values")
    linear_vars = tuple(int(k) for k in coef.get("linear_vars", []))
    linear = _nums(coef.get("linear", []), "$.coefficients.linear")
    if len(linear) != len(linear_vars):
        raise ParseError("$.coefficients.linear", "length differs from linear_vars")
    cv = None
    if doc.get("cv") is not None:
        from .pruning import CvCurve

        cv = CvCurve.from_dict(doc["cv"])
    model = TreeModel(
        kind=kind,
        cov_tree=cov,
        unit_tree=ut,
        unit_labels=labels,
        covariate_names=names,
        cluster_coef=beta,
        leaf_coef=gamma,
        linear_vars=linear_vars,
        linear_coef=linear,
        sigma2=_num(doc.get("sigma2", "nan"), "$.sigma2"),
        rss=_num(doc.get("rss", "nan"), "$.rss"),
        n_obs=int(doc.get("n_obs", 0)),
        config=dict(doc.get("config") or {}),
        cv=cv,
    )
    adj = doc.get("adjusted")
    if adj:
        model = dataclasses.replace(
            model,
            gamma_bar=_num(adj.get("gamma_bar"), "$.adjusted.gamma_bar"),
            cluster_coef_adj=_nums(adj.get("cluster"), "$.adjusted.cluster"),
            leaf_coef_adj=_nums(adj.get("leaf"), "$.adjusted.leaf"),
        )
    return model
