from .binning import BinMapper, BinnedDataset, bin_features
from .booster import LeafwiseGBDTClassifier, fit_depth_path, predict_class, predict_scores, train
from .objective import cross_entropy, softmax, softmax_grad_hess
from .tree import GbdtParams, Tree, find_best_split, grow_tree_leafwise

__all__ = [
    "BinMapper",
    "BinnedDataset",
    "GbdtParams",
    "LeafwiseGBDTClassifier",
    "Tree",
    "bin_features",
    "cross_entropy",
    "find_best_split",
    "fit_depth_path",
    "grow_tree_leafwise",
    "predict_class",
    "predict_scores",
    "softmax",
    "softmax_grad_hess",
    "train",
]
