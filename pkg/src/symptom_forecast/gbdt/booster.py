"""Multiclass gradient boosting with leaf-wise trees, as a scikit-learn classifier."""
from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _kernels
from .binning import MAX_BINS, BinMapper, BinnedDataset
from .objective import cross_entropy, softmax
from .tree import GbdtParams, Tree, grow_tree_leafwise, histogram_workspace

FORMAT_VERSION = 1
# floor for the prior of classes absent from the training labels
PRIOR_FLOOR = 1e-6


class LeafwiseGBDTClassifier(ClassifierMixin, BaseEstimator):
    """Histogram GBDT with softmax cross-entropy, one tree per class per round.

    Parameters
    ----------
    max_depth, num_rounds, learning_rate, max_leaves, min_samples_per_leaf,
    l2_lambda, min_gain_to_split :
        Boosting and tree-growth controls, see :class:`GbdtParams`.
    categorical_features : sequence of int
        Columns holding integer category codes.
    classes : sequence of int, optional
        Fixed label set. Defaults to the labels seen in ``fit``; the
        forecasting pipeline passes ``range(11)`` so every level has a tree.
    max_bins : int
        Histogram resolution per continuous feature.
    random_state : int
        Recorded for provenance; training itself is deterministic.
    check_loss : bool
        Raise if the training loss ever increases between rounds.
    """

    def __init__(
        self,
        max_depth=6,
        num_rounds=100,
        learning_rate=0.1,
        max_leaves=31,
        min_samples_per_leaf=20,
        l2_lambda=1.0,
        min_gain_to_split=0.0,
        categorical_features=(),
        classes=None,
        max_bins=MAX_BINS,
        random_state=0,
        check_loss=False,
    ):
        self.max_depth = max_depth
        self.num_rounds = num_rounds
        self.learning_rate = learning_rate
        self.max_leaves = max_leaves
        self.min_samples_per_leaf = min_samples_per_leaf
        self.l2_lambda = l2_lambda
        self.min_gain_to_split = min_gain_to_split
        self.categorical_features = categorical_features
        self.classes = classes
        self.max_bins = max_bins
        self.random_state = random_state
        self.check_loss = check_loss

    def _params(self) -> GbdtParams:
        return GbdtParams(
            max_depth=int(self.max_depth),
            num_rounds=int(self.num_rounds),
            learning_rate=float(self.learning_rate),
            max_leaves=int(self.max_leaves),
            min_samples_per_leaf=int(self.min_samples_per_leaf),
            l2_lambda=float(self.l2_lambda),
            min_gain_to_split=float(self.min_gain_to_split),
            rng_seed=int(self.random_state),
        ).validate()

    def fit(self, X, y):
        return self._boost(self._prepare(X, y))

    def _prepare(self, X, y) -> "_Prepared":
        X, y = check_X_y(X, y, dtype=np.float64)
        self._params()
        if self.classes is None:
            classes = np.unique(y).astype(np.int64)
        else:
            classes = np.asarray(sorted(self.classes), dtype=np.int64)
            unknown = np.setdiff1d(np.unique(y), classes)
            if unknown.size:
                raise ValueError(f"labels {unknown.tolist()} not in classes {classes.tolist()}")
        y_idx = np.searchsorted(classes, y.astype(np.int64))
        mapper = BinMapper(self.max_bins, self.categorical_features).fit(X)
        return _Prepared(classes, mapper, BinnedDataset(mapper, mapper.transform(X), y_idx), X.shape[1])

    def _boost(self, prep: "_Prepared", resume: "_Checkpoint | None" = None, keep_checkpoint=False):
        params = self._params()
        self.classes_ = prep.classes
        self.bin_mapper_ = prep.mapper
        self.n_features_in_ = prep.n_features
        data = prep.data
        y_idx = data.labels
        n, K = len(y_idx), len(self.classes_)

        counts = np.bincount(y_idx, minlength=K).astype(np.float64)
        prior = np.maximum(counts / n, PRIOR_FLOOR)
        self.base_scores_ = np.log(prior)
        self.trees_ = []
        self.tree_class_ = []
        self.tree_round_ = []
        self.depth_limited_ = False
        self.train_loss_ = []
        self._checkpoint = None

        if np.count_nonzero(counts) < 2:
            warnings.warn("training labels hold a single class; the model reduces to its base scores")
            self.train_loss_.append(cross_entropy(np.tile(self.base_scores_, (n, 1)), y_idx))
            self._pack()
            return self

        # class-major layout keeps each class's gradient contiguous
        grad = np.empty((K, n))
        hess = np.empty((K, n))
        first_round, first_class = 0, 0
        if resume is None:
            scores = np.repeat(self.base_scores_[:, None], n, axis=1)
        else:
            # everything before the checkpoint is what this fit would grow anyway
            self.trees_ = list(resume.trees)
            self.tree_class_ = list(resume.tree_class)
            self.tree_round_ = list(resume.tree_round)
            self.train_loss_ = list(resume.train_loss)
            scores = resume.scores.copy()
            first_round, first_class = resume.round, resume.klass
        workspace = histogram_workspace(data, params)
        for rnd in range(first_round, params.num_rounds):
            if resume is not None and rnd == first_round:
                grad[:] = resume.grad
                hess[:] = resume.hess
                k0 = first_class
            else:
                self.train_loss_.append(_kernels.softmax_round(scores, y_idx, grad, hess, True))
                k0 = 0
            for k in range(k0, K):
                tree, leaf_of, limited = grow_tree_leafwise(data, grad[k], hess[k], params, workspace)
                if limited and not self.depth_limited_:
                    self._checkpoint = _Checkpoint(
                        rnd, k, scores.copy(), grad.copy(), hess.copy(), tuple(self.trees_),
                        tuple(self.tree_class_), tuple(self.tree_round_), tuple(self.train_loss_),
                    )
                    self.depth_limited_ = True
                scores[k] += params.learning_rate * tree.value[leaf_of]
                self.trees_.append(tree)
                self.tree_class_.append(k)
                self.tree_round_.append(rnd)
            if self.check_loss:
                loss = _kernels.softmax_round(scores, y_idx, grad, hess, False)
                if loss > self.train_loss_[-1] + 1e-12:
                    raise AssertionError(
                        f"training loss increased at round {rnd}: {self.train_loss_[-1]} -> {loss}"
                    )
        self.train_loss_.append(_kernels.softmax_round(scores, y_idx, grad, hess, False))
        if not keep_checkpoint:
            self._checkpoint = None
        self._pack()
        return self

    def _pack(self):
        trees = self.trees_
        sizes = [t.n_nodes for t in trees]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

        def cat(name, dtype):
            if not trees:
                return np.zeros(0, dtype=dtype)
            return np.concatenate([getattr(t, name) for t in trees]).astype(dtype)

        self._flat = dict(
            feature=cat("feature", np.int64),
            threshold=cat("threshold", np.int64),
            cat_mask=cat("cat_mask", np.uint64),
            left=cat("left", np.int64),
            right=cat("right", np.int64),
            value=cat("value", np.float64),
        )
        self._tree_class_arr = np.asarray(self.tree_class_, dtype=np.int64)

    @property
    def n_rounds_(self) -> int:
        check_is_fitted(self, "trees_")
        return len(self.trees_) // len(self.classes_)

    def _binned(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.bin_mapper_.transform(X)

    def decision_function(self, X):
        """Raw per-class scores: base score plus the scaled leaf values reached."""
        binned = self._binned(X)
        scores = np.tile(self.base_scores_, (binned.shape[0], 1))
        if not self.trees_:
            return scores
        f = self._flat
        return _kernels.accumulate_scores(
            binned, self.bin_mapper_.is_categorical_, self._offsets, self._tree_class_arr,
            f["feature"], f["threshold"], f["cat_mask"], f["left"], f["right"], f["value"],
            float(self.learning_rate), scores,
        )

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        # argmax takes the first maximum, i.e. the lowest class on ties
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def apply(self, X):
        """Index of the leaf reached in each tree, local to that tree."""
        binned = self._binned(X)
        f = self._flat
        leaves = _kernels.predict_leaves(
            binned, self.bin_mapper_.is_categorical_, self._offsets,
            f["feature"], f["threshold"], f["cat_mask"], f["left"], f["right"],
        )
        return leaves - self._offsets[:-1][None, :]

    # --- serialization ---------------------------------------------------

    def to_dict(self, meta=None) -> dict:
        check_is_fitted(self, "trees_")
        params = self.get_params()
        params["categorical_features"] = [int(c) for c in params["categorical_features"]]
        if params["classes"] is not None:
            params["classes"] = [int(c) for c in params["classes"]]
        return {
            "format_version": FORMAT_VERSION,
            "params": params,
            "classes": self.classes_.tolist(),
            "n_features": int(self.n_features_in_),
            "feature_names": list(getattr(self, "feature_names_", []) or []),
            "meta": meta or getattr(self, "meta_", {}) or {},
            "base_scores": self.base_scores_.tolist(),
            "bins": self.bin_mapper_.to_dict(),
            "depth_limited": bool(self.depth_limited_),
            "train_loss": [float(v) for v in self.train_loss_],
            "trees": [
                {"round": int(r), "class": int(k), "root": t.to_nested()}
                for r, k, t in zip(self.tree_round_, self.tree_class_, self.trees_)
            ],
        }

    def save(self, path, meta=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(meta), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "LeafwiseGBDTClassifier":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        params = dict(doc["params"])
        if params.get("classes") is not None:
            params["classes"] = tuple(params["classes"])
        params["categorical_features"] = tuple(params.get("categorical_features") or ())
        self = cls(**params)
        self.classes_ = np.asarray(doc["classes"], dtype=np.int64)
        self.n_features_in_ = int(doc["n_features"])
        self.feature_names_ = list(doc.get("feature_names") or [])
        self.meta_ = dict(doc.get("meta") or {})
        self.base_scores_ = np.asarray(doc["base_scores"], dtype=np.float64)
        self.bin_mapper_ = BinMapper.from_dict(doc["bins"])
        self.depth_limited_ = bool(doc.get("depth_limited", True))
        self.train_loss_ = list(doc.get("train_loss", []))
        self.trees_ = [Tree.from_nested(t["root"]) for t in doc["trees"]]
        self.tree_class_ = [int(t["class"]) for t in doc["trees"]]
        self.tree_round_ = [int(t["round"]) for t in doc["trees"]]
        self._pack()
        return self

    @classmethod
    def load(cls, path) -> "LeafwiseGBDTClassifier":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class _Prepared:
    classes: np.ndarray
    mapper: BinMapper
    data: BinnedDataset
    n_features: int


@dataclass(frozen=True)
class _Checkpoint:
    """Boosting state just before the first tree whose growth the depth cap changed."""

    round: int
    klass: int
    scores: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    trees: tuple
    tree_class: tuple
    tree_round: tuple
    train_loss: tuple


def fit_depth_path(estimator: LeafwiseGBDTClassifier, X, y, depths) -> dict:
    """Fit ``estimator`` at every ``max_depth`` in ``depths``; returns ``{depth: model}``.

    Each fit is identical to a fresh ``clone(estimator).set_params(max_depth=d).fit(X, y)``.
    Depths are visited in increasing order, and every fit resumes from the
    point where the previous depth's cap first changed a tree: all trees
    before it would be grown the same under any larger cap. A fit the cap
    never touched is shared by all larger depths.
    """
    depths = sorted(int(d) for d in depths)
    out = {}
    if not depths:
        return out
    prep = clone(estimator)._prepare(X, y)
    previous = None
    for d in depths:
        if previous is not None and not previous.depth_limited_:
            model = copy.copy(previous)
            model.max_depth = d
            out[d] = model
            continue
        model = clone(estimator).set_params(max_depth=d)
        resume = None
        if previous is not None:
            resume, previous._checkpoint = previous._checkpoint, None
        model._boost(prep, resume, keep_checkpoint=True)
        out[d] = model
        previous = model
    if previous is not None:
        previous._checkpoint = None
    return out


def train(X, y, params: GbdtParams, categorical_features=(), classes=None) -> LeafwiseGBDTClassifier:
    return LeafwiseGBDTClassifier(
        max_depth=params.max_depth,
        num_rounds=params.num_rounds,
        learning_rate=params.learning_rate,
        max_leaves=params.max_leaves,
        min_samples_per_leaf=params.min_samples_per_leaf,
        l2_lambda=params.l2_lambda,
        min_gain_to_split=params.min_gain_to_split,
        categorical_features=tuple(categorical_features),
        classes=classes,
        random_state=params.rng_seed,
    ).fit(X, y)


def predict_scores(model: LeafwiseGBDTClassifier, x):
    return model.decision_function(np.atleast_2d(x))[0]


def predict_class(model: LeafwiseGBDTClassifier, x) -> int:
    return int(model.predict(np.atleast_2d(x))[0])
