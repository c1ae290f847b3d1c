"""Next-visit symptom-level forecasting with leaf-wise boosted trees, SMOTE and weighted per-class MAE."""
from .baselines import NaivePriorClassifier, PreviousValueClassifier
from .domain import DataError, ModelVariant, build_transitions, date_split, read_transitions, to_matrix
from .explain import ImportanceSummary, ShapAttribution, importance_summary, tree_shap
from .gbdt import GbdtParams, LeafwiseGBDTClassifier
from .harness import cv_depth_sweep, make_folds, run_experiment
from .metrics import EvalReport, evaluate, wmae_score
from .sampling import SMOTE
from .synthgen import CohortConfig, generate

__version__ = "0.1.0"

__all__ = [
    "SMOTE",
    "CohortConfig",
    "DataError",
    "EvalReport",
    "GbdtParams",
    "ImportanceSummary",
    "LeafwiseGBDTClassifier",
    "ModelVariant",
    "NaivePriorClassifier",
    "PreviousValueClassifier",
    "ShapAttribution",
    "build_transitions",
    "cv_depth_sweep",
    "date_split",
    "evaluate",
    "generate",
    "importance_summary",
    "make_folds",
    "read_transitions",
    "run_experiment",
    "to_matrix",
    "tree_shap",
    "wmae_score",
]
