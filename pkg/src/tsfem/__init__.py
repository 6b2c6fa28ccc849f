"""Tree-structured fixed-effects regression for clustered data."""

from .baselines import LmmFit, OracleSpec, decompose, fit_lmm, fit_ltscb, fit_null, fit_perfect
from .dataset import ClusteredDataset, CovariateMeta, LoadError, assign_folds, load_csv, write_csv
from .linfit import FitResult, RankError, ols_fit
from .pruning import CvCurve, cv_curve, fit_pruned, select_splits
from .stepwise import FitConfig, FitPath, enumerate_candidates, grow_path, grow_path_ltsc
from .trees import CovNode, TreeModel, UnitTree, UnseenUnitError, deserialize, predict, serialize

__all__ = [
    "ClusteredDataset", "CovariateMeta", "CovNode", "CvCurve", "FitConfig", "FitPath", "FitResult",
    "LmmFit", "LoadError", "OracleSpec", "RankError", "TreeModel", "UnitTree", "UnseenUnitError",
    "assign_folds", "cv_curve", "decompose", "deserialize", "enumerate_candidates", "fit_lmm",
    "fit_ltscb", "fit_null", "fit_perfect", "fit_pruned", "grow_path", "grow_path_ltsc", "load_csv",
    "ols_fit", "predict", "select_splits", "serialize", "write_csv",
]
