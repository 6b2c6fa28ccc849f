"""Cross-validated post-pruning of a stepwise path with the 1SE rule."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ClusteredDataset, assign_folds
from .linfit import normal_logpdf_sum
from .stepwise import FitConfig, FitPath, grow_path, grow_path_ltsc
from .trees import TreeModel

log = logging.getLogger(__name__)


@dataclass
class CvCurve:
    """Cross-validated predictive log-likelihood per number of splits.

    ``mean_loglik[s]`` is the mean over folds of the per-observation
    log-likelihood on the held-out rows; ``se[s]`` is the standard
    deviation of those fold values divided by ``sqrt(k)``.
    """

    mean_loglik: np.ndarray
    se: np.ndarray
    s_max_ll: int
    s_1se: int
    fold_path_lengths: list[int] = field(default_factory=list)
    excluded_rows: list[int] = field(default_factory=list)

    @property
    def splits(self) -> np.ndarray:
        return np.arange(len(self.mean_loglik))

    def to_dict(self) -> dict:
        return {
            "mean_loglik": [repr(float(v)) for v in self.mean_loglik],
            "se": [repr(float(v)) for v in self.se],
            "s_max_ll": self.s_max_ll,
            "s_1se": self.s_1se,
            "fold_path_lengths": list(self.fold_path_lengths),
            "excluded_rows": list(self.excluded_rows),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CvCurve":
        return cls(
            np.array([float(v) for v in doc["mean_loglik"]]),
            np.array([float(v) for v in doc["se"]]),
            int(doc["s_max_ll"]),
            int(doc["s_1se"]),
            list(doc.get("fold_path_lengths", [])),
            list(doc.get("excluded_rows", [])),
        )

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "mean_loglik", "se", "max_ll", "one_se"])
            for s, (m, e) in enumerate(zip(self.mean_loglik, self.se)):
                w.writerow([s, repr(float(m)), repr(float(e)), int(s == self.s_max_ll), int(s == self.s_1se)])


def select_splits(mean: np.ndarray, se: np.ndarray) -> tuple[int, int]:
    """Return ``(argmax, smallest s within one SE of the max)``."""
    s_max = int(np.argmax(mean))
    threshold = mean[s_max] - se[s_max]
    s_1se = int(np.flatnonzero(mean >= threshold)[0])
    return s_max, s_1se


def grower(cfg: FitConfig):
    return grow_path_ltsc if cfg.model in ("ltsc", "ltscb") else grow_path


def path_loglik(path: FitPath, test: ClusteredDataset) -> tuple[np.ndarray, int]:
    """Per-observation predictive log-likelihood of each path model.

    Rows whose unit is missing from the training data are dropped; the
    second return value counts them.
    """
    known = path.models[0].unit_codes(test.unit_labels)[test.unit] >= 0
    n_out = int(np.sum(~known))
    if not known.any():
        return np.full(len(path.models), np.nan), n_out
    X, y = test.X[known], test.y[known]
    labels = [test.unit_labels[u] for u in test.unit[known]]
    out = np.empty(len(path.models))
    for s, model in enumerate(path.models):
        pred = model.predict_frame(X, labels)["prediction"]
        out[s] = normal_logpdf_sum(y - pred, model.sigma2) / len(y)
    return out, n_out


def _fold_curve(args) -> tuple[np.ndarray, int, int]:
    d, cfg, train, test = args
    path = grower(cfg)(d.subset(train), cfg)
    ll, n_out = path_loglik(path, d.subset(test))
    return ll, path.length, n_out


def cv_curve(d: ClusteredDataset, cfg: FitConfig, workers: int = 1) -> CvCurve:
    # the bucket size is fixed on the full data so folds search the same space
    if cfg.folds > d.N:
        raise ValueError(f"{cfg.folds}-fold cross-validation needs at least {cfg.folds} rows, data has {d.N}")
    cfg = dataclasses.replace(cfg, min_bucket=cfg.bucket(d.N))
    folds = assign_folds(d, cfg.folds, cfg.seed)
    jobs = [(d, cfg, folds.train_rows(f), folds.test_rows(f)) for f in range(cfg.folds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_curve, jobs))
    else:
        results = [_fold_curve(job) for job in jobs]
    lengths = [r[1] for r in results]
    excluded = [r[2] for r in results]
    if any(excluded):
        log.warning("dropped %d test rows with units absent from training", sum(excluded))
    L = min(lengths) + 1
    ll = np.array([r[0][:L] for r in results])
    ll = ll[~np.isnan(ll).any(axis=1)]
    k = len(ll)
    mean = ll.mean(axis=0)
    se = ll.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(L)
    s_max, s_1se = select_splits(mean, se)
    return CvCurve(mean, se, s_max, s_1se, lengths, excluded)


def fit_pruned(d: ClusteredDataset, cfg: FitConfig, workers: int = 1) -> TreeModel:
    """Cross-validate the path, then refit on all data at the chosen size."""
    cfg = dataclasses.replace(cfg, min_bucket=cfg.bucket(d.N))
    curve = cv_curve(d, cfg, workers)
    s = curve.s_1se if cfg.one_se else curve.s_max_ll
    path = grower(cfg)(d, dataclasses.replace(cfg, max_splits=s))
    model = path.models[-1]
    return dataclasses.replace(model, cv=curve, config=cfg.to_dict())
