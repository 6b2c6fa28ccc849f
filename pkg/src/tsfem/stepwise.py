"""Stepwise growth of the covariate tree and the unit tree.

Every step tries all admissible single splits in either tree and commits
the one with the smallest residual sum of squares after refitting all
coefficients. Candidate deviances are computed exactly from the current
fit: a split adds one indicator column ``z`` to the column space, so

    rss_new = rss - (r'z)^2 / (z'z - |Q'z|^2)

with ``r`` the current residuals and ``Q`` an orthonormal basis of the
current design. Cumulative sums over sorted rows give this for all
thresholds of a variable at once. The committed model is always refitted
from scratch.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from .dataset import ClusteredDataset, unit_means
from .linfit import RankError
from .trees import CovNode, EncodingError, TreeModel, UnitTree, fit_structure

log = logging.getLogger(__name__)

MODEL_KINDS = ("ttsc", "ltsc", "ltscb", "null", "lmm")
# candidates whose new column is (numerically) inside the current span
RANK_TOL = 1e-10
# relative deviance window treated as a tie; the earlier candidate wins
TIE_TOL = 1e-10


@dataclass(frozen=True)
class FitConfig:
    """Settings of the tree search and the post-pruning.

    ``min_bucket=None`` means ``floor(0.1 * N)``.
    """

    max_splits: int = 20
    min_bucket: int | None = None
    max_depth: int | None = None
    folds: int = 10
    one_se: bool = True
    seed: int = 2024
    model: str = "ttsc"

    def __post_init__(self):
        if self.max_splits < 0:
            raise ValueError("max_splits must be >= 0")
        if self.min_bucket is not None and self.min_bucket < 1:
            raise ValueError("min_bucket must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; choose from {', '.join(MODEL_KINDS)}")

    def bucket(self, n_obs: int) -> int:
        if self.min_bucket is None:
            return max(1, int(0.1 * n_obs))
        return self.min_bucket

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitCandidate:
    tree: str  # "covariate" or "unit"
    node: int  # leaf id or cluster id
    var: int | None = None
    threshold: float | None = None
    cut: int | None = None

    def describe(self, names: list[str] | None = None) -> str:
        if self.tree == "covariate":
            name = names[self.var] if names else f"x{self.var + 1}"
            return f"leaf {self.node}: {name} <= {self.threshold:g}"
        return f"cluster {self.node}: cut at ordered position {self.cut}"


@dataclass
class FitPath:
    models: list[TreeModel] = field(default_factory=list)
    deviances: list[float] = field(default_factory=list)
    chosen: list[SplitCandidate] = field(default_factory=list)

    @property
    def length(self) -> int:
        """Number of committed splits."""
        return len(self.models) - 1


def order_units(d: ClusteredDataset) -> np.ndarray:
    """Unit codes by ascending mean outcome; ties keep code order."""
    return np.argsort(unit_means(d), kind="stable")


def _midpoint(lo, hi):
    mid = (np.asarray(lo, dtype=float) + hi) / 2.0
    # guard against rounding onto the upper value for adjacent floats
    return np.where(mid >= hi, lo, mid)


def enumerate_candidates(
    d: ClusteredDataset,
    cov: CovNode,
    ut: UnitTree,
    cfg: FitConfig,
    covariate_splits: bool = True,
    unit_splits: bool = True,
) -> list[SplitCandidate]:
    """All admissible single splits, in the fixed enumeration order."""
    n_mb = cfg.bucket(d.N)
    out: list[SplitCandidate] = []
    if covariate_splits:
        leaf = cov.assign(d.X)
        for m, node in enumerate(cov.leaves()):
            if cfg.max_depth is not None and node.depth + 1 > cfg.max_depth:
                continue
            rows = np.flatnonzero(leaf == m)
            for k in range(d.p):
                x = d.X[rows, k]
                vals = np.unique(x)
                for lo, hi in zip(vals[:-1], vals[1:]):
                    thr = float(_midpoint(lo, hi))
                    n_left = int(np.sum(x <= thr))
                    if n_left >= n_mb and len(rows) - n_left >= n_mb:
                        out.append(SplitCandidate("covariate", m, k, thr))
    if unit_splits:
        for c, (a, b) in enumerate(ut.bounds()):
            if b - a < 2:
                continue
            if cfg.max_depth is not None and ut.depths[c] + 1 > cfg.max_depth:
                continue
            sizes = d.n_i[list(ut.ordering[a:b])]
            for cut in range(a + 1, b):
                n_left = int(sizes[: cut - a].sum())
                if n_left >= n_mb and sizes.sum() - n_left >= n_mb:
                    out.append(SplitCandidate("unit", c, cut=cut))
    return out


class _Search:
    """Mutable state of one stepwise run."""

    def __init__(self, d: ClusteredDataset, cfg: FitConfig, linear: bool, covariate_splits: bool):
        self.d = d
        self.cfg = cfg
        self.n_mb = cfg.bucket(d.N)
        self.covariate_splits = covariate_splits
        self.kind = "ltsc" if linear else "ttsc"
        self.linear_vars = tuple(range(d.p)) if linear else ()
        self.cov = CovNode()
        self.ut = UnitTree(tuple(order_units(d)))
        self.onehot = sparse.csr_matrix(
            (np.ones(d.N), (np.arange(d.N), d.unit)), shape=(d.N, d.n)
        ).T.tocsr()
        self.config = cfg.to_dict()

    def fit(self, cov: CovNode, ut: UnitTree):
        return fit_structure(self.d, cov, ut, self.kind, self.linear_vars, config=self.config)

    def score(self, fit):
        """Deviance of every admissible candidate, in enumeration order.

        Returns the deviances, block specs from which a candidate is
        rebuilt on demand, and the current rss.
        """
        d, n_mb = self.d, self.n_mb
        Q = fit.basis
        r = d.y - Q @ (Q.T @ d.y)
        rss = float(r @ r)
        devs: list[np.ndarray] = []
        specs: list[tuple] = []
        max_depth = self.cfg.max_depth

        if self.covariate_splits and d.p:
            leaf = self.cov.assign(d.X)
            for m, node in enumerate(self.cov.leaves()):
                if max_depth is not None and node.depth + 1 > max_depth:
                    continue
                rows = np.flatnonzero(leaf == m)
                nm = len(rows)
                if nm < 2 * n_mb:
                    continue
                Xm = d.X[rows]
                order = np.argsort(Xm, axis=0, kind="stable")
                xs = np.take_along_axis(Xm, order, axis=0)
                lo_t, hi_t = n_mb, nm - n_mb  # admissible left counts
                cr = np.cumsum(r[rows][order], axis=0)[lo_t - 1 : hi_t]
                cq = np.cumsum(Q[rows][order], axis=0)[lo_t - 1 : hi_t]
                t = np.arange(lo_t, hi_t + 1, dtype=float)[:, None]
                den = t - np.einsum("tkq,tkq->tk", cq, cq)
                valid = (xs[lo_t - 1 : hi_t] < xs[lo_t : hi_t + 1]) & (den > RANK_TOL * t)
                dev = rss - cr**2 / np.where(valid, den, 1.0)
                for k in range(d.p):
                    idx = np.flatnonzero(valid[:, k])
                    if len(idx):
                        devs.append(dev[idx, k])
                        specs.append(("covariate", m, k, xs[:, k], idx + lo_t))

        sr = self.onehot @ r
        sq = self.onehot @ Q
        for c, (a, b) in enumerate(self.ut.bounds()):
            if b - a < 2:
                continue
            if max_depth is not None and self.ut.depths[c] + 1 > max_depth:
                continue
            seq = list(self.ut.ordering[a:b])
            sizes = d.n_i[seq]
            cnt = np.cumsum(sizes)[:-1]
            cr = np.cumsum(sr[seq])[:-1]
            cq = np.cumsum(sq[seq], axis=0)[:-1]
            den = cnt - np.einsum("tq,tq->t", cq, cq)
            valid = (cnt >= n_mb) & (sizes.sum() - cnt >= n_mb) & (den > RANK_TOL * cnt)
            idx = np.flatnonzero(valid)
            if len(idx):
                devs.append(rss - cr[idx] ** 2 / den[idx])
                specs.append(("unit", c, None, None, a + 1 + idx))

        sizes = [len(v) for v in devs]
        return (np.concatenate(devs) if devs else np.empty(0)), list(zip(specs, sizes)), rss

    @staticmethod
    def materialize(specs, j: int) -> SplitCandidate:
        for (tree, node, var, xs, pos), size in specs:
            if j < size:
                if tree == "covariate":
                    t = pos[j]
                    return SplitCandidate(tree, node, var, float(_midpoint(xs[t - 1], xs[t])))
                return SplitCandidate(tree, node, cut=int(pos[j]))
            j -= size
        raise IndexError(j)

    def apply(self, cand: SplitCandidate) -> tuple[CovNode, UnitTree]:
        if cand.tree == "covariate":
            return self.cov.split_leaf(cand.node, cand.var, cand.threshold), self.ut
        return self.cov, self.ut.split(cand.node, cand.cut)


def _grow(d: ClusteredDataset, cfg: FitConfig, linear: bool, covariate_splits: bool) -> FitPath:
    search = _Search(d, cfg, linear, covariate_splits)
    model, fit = search.fit(search.cov, search.ut)
    path = FitPath([model], [fit.rss], [])
    scale = float(d.y @ d.y)
    while path.length < cfg.max_splits:
        if fit.rss <= 1e-14 * scale:
            break
        devs, specs, rss = search.score(fit)
        if len(devs) == 0:
            break
        committed = False
        while not committed and np.isfinite(devs).any():
            best = np.nanmin(devs)
            j = int(np.flatnonzero(devs <= best + TIE_TOL * max(rss, 0.0))[0])
            cand = search.materialize(specs, j)
            cov, ut = search.apply(cand)
            try:
                model, fit = search.fit(cov, ut)
            except (RankError, EncodingError) as exc:
                log.debug("skipping %s: %s", cand, exc)
                devs[j] = np.inf
                continue
            committed = True
        if not committed:
            break
        search.cov, search.ut = cov, ut
        path.models.append(model)
        path.deviances.append(fit.rss)
        path.chosen.append(cand)
    return path


def grow_path(d: ClusteredDataset, cfg: FitConfig) -> FitPath:
    """Two-tree search: covariate tree plus unit tree."""
    return _grow(d, cfg, linear=False, covariate_splits=True)


def grow_path_ltsc(d: ClusteredDataset, cfg: FitConfig) -> FitPath:
    """Unit tree only, with all covariates as linear terms refitted each step."""
    return _grow(d, cfg, linear=True, covariate_splits=False)
