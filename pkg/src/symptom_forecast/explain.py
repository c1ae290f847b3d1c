"""Feature attributions for the boosted trees.

Attributions are exact path-dependent TreeSHAP values on the raw
(pre-softmax) class scores: within each tree, the expectation over a
missing feature follows both children weighted by their training covers.
Per class, ``base + sum(phi) == decision_function(x)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.utils.validation import check_is_fitted

from .gbdt import LeafwiseGBDTClassifier
from .gbdt._kernels import goes_left


class MissingCoverError(ValueError):
    """The model carries no node cover counts, so path-dependent TreeSHAP is undefined."""


@njit(cache=True)
def _extend(feat, zero, one, pw, off, depth, zero_fraction, one_fraction, feature):
    feat[off + depth] = feature
    zero[off + depth] = zero_fraction
    one[off + depth] = one_fraction
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one_fraction * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero_fraction * pw[off + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zero, one, pw, off, depth, index):
    one_fraction = one[off + index]
    zero_fraction = zero[off + index]
    nxt = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (depth + 1) / ((i + 1) * one_fraction)
            nxt = tmp - pw[off + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(index, depth):
        feat[off + i] = feat[off + i + 1]
        zero[off + i] = zero[off + i + 1]
        one[off + i] = one[off + i + 1]


@njit(cache=True)
def _unwound_sum(zero, one, pw, off, depth, index):
    one_fraction = one[off + index]
    zero_fraction = zero[off + index]
    nxt = pw[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            nxt = pw[off + i] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += pw[off + i] / zero_fraction / ((depth - i) / (depth + 1))
    return total


# recursive kernels are not cached: numba cannot reload them safely
@njit
def _recurse(row, is_cat, feature, threshold, cat_mask, left, right, value, cover, base, node,
             feat, zero, one, pw, parent_off, depth, zero_fraction, one_fraction, split_feature, phi, scale):
    # each level works on its own copy of the path, placed after the parent's
    off = parent_off + depth
    if depth > 0:
        for i in range(depth):
            feat[off + i] = feat[parent_off + i]
            zero[off + i] = zero[parent_off + i]
            one[off + i] = one[parent_off + i]
            pw[off + i] = pw[parent_off + i]
    _extend(feat, zero, one, pw, off, depth, zero_fraction, one_fraction, split_feature)

    nid = base + node
    if left[nid] < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(zero, one, pw, off, depth, i)
            phi[feat[off + i]] += scale * w * (one[off + i] - zero[off + i]) * value[nid]
        return

    f = feature[nid]
    if goes_left(row[f], is_cat[f], threshold[nid], cat_mask[nid]):
        hot, cold = left[nid], right[nid]
    else:
        hot, cold = right[nid], left[nid]
    total = cover[nid]
    hot_zero = cover[base + hot] / total
    cold_zero = cover[base + cold] / total
    incoming_zero = 1.0
    incoming_one = 1.0
    index = 0
    while index <= depth:
        if feat[off + index] == f:
            break
        index += 1
    if index != depth + 1:
        incoming_zero = zero[off + index]
        incoming_one = one[off + index]
        _unwind(feat, zero, one, pw, off, depth, index)
        depth -= 1
    _recurse(row, is_cat, feature, threshold, cat_mask, left, right, value, cover, base, hot,
             feat, zero, one, pw, off, depth + 1, hot_zero * incoming_zero, incoming_one, f, phi, scale)
    _recurse(row, is_cat, feature, threshold, cat_mask, left, right, value, cover, base, cold,
             feat, zero, one, pw, off, depth + 1, cold_zero * incoming_zero, 0.0, f, phi, scale)


@njit
def _shap_all(binned, is_cat, offsets, tree_class, feature, threshold, cat_mask, left, right, value, cover,
              scale, n_classes, max_depth):
    n, n_features = binned.shape
    out = np.zeros((n, n_features, n_classes))
    size = (max_depth + 2) * (max_depth + 3) // 2 + 1
    feat = np.empty(size, dtype=np.int64)
    zero = np.empty(size)
    one = np.empty(size)
    pw = np.empty(size)
    phi = np.empty(n_features)
    for s in range(n):
        row = binned[s]
        for t in range(len(offsets) - 1):
            phi[:] = 0.0
            _recurse(row, is_cat, feature, threshold, cat_mask, left, right, value, cover, offsets[t], 0,
                     feat, zero, one, pw, 0, 0, 1.0, 1.0, -1, phi, scale)
            k = tree_class[t]
            for f in range(n_features):
                out[s, f, k] += phi[f]
    return out


@dataclass
class ShapAttribution:
    """``values[i, f, c]`` is the contribution of feature ``f`` to the class-``c`` score of row ``i``."""

    values: np.ndarray
    base_values: np.ndarray
    feature_names: list
    classes: np.ndarray

    def scores(self) -> np.ndarray:
        return self.base_values[None, :] + self.values.sum(axis=1)


def _flat_covers(model: LeafwiseGBDTClassifier) -> np.ndarray:
    covers = np.concatenate([t.cover for t in model.trees_]).astype(np.float64) if model.trees_ else np.zeros(0)
    if np.any(covers <= 0):
        raise MissingCoverError(
            "model has no node cover counts; retrain it (covers are stored by fit and save)"
        )
    return covers


def base_values(model: LeafwiseGBDTClassifier) -> np.ndarray:
    """Expected class scores over the training set, from the leaf covers."""
    check_is_fitted(model, "trees_")
    base = model.base_scores_.astype(np.float64).copy()
    for k, tree in zip(model.tree_class_, model.trees_):
        leaves = tree.is_leaf
        if np.any(tree.cover <= 0):
            raise MissingCoverError("model has no node cover counts; retrain it")
        base[k] += model.learning_rate * float(
            np.dot(tree.cover[leaves], tree.value[leaves]) / tree.cover[0]
        )
    return base


def tree_shap(model: LeafwiseGBDTClassifier, X, feature_names=None) -> ShapAttribution:
    """TreeSHAP values for one row or a matrix of rows."""
    check_is_fitted(model, "trees_")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    binned = np.ascontiguousarray(model._binned(X))
    n, d = binned.shape
    K = len(model.classes_)
    names = list(feature_names or getattr(model, "feature_names_", None) or [f"x{i}" for i in range(d)])
    base = base_values(model)
    if not model.trees_:
        values = np.zeros((n, d, K))
    else:
        covers = _flat_covers(model)
        f = model._flat
        depth = max(int(t.depth.max()) for t in model.trees_)
        values = _shap_all(
            binned, model.bin_mapper_.is_categorical_, model._offsets, model._tree_class_arr,
            f["feature"], f["threshold"], f["cat_mask"], f["left"], f["right"], f["value"], covers,
            float(model.learning_rate), K, depth,
        )
    return ShapAttribution(values, base, names, model.classes_.copy())


@dataclass
class ImportanceSummary:
    """Mean |phi| per (feature, class) and total split gain per feature, sorted by overall mean |phi|."""

    feature_names: list
    classes: np.ndarray
    mean_abs: np.ndarray
    total_gain: np.ndarray
    n_samples: int

    def ranking(self, klass=None) -> list:
        """Feature names by decreasing mean |phi|, overall or for one class."""
        col = self.mean_abs.sum(axis=1) if klass is None else self.mean_abs[:, list(self.classes).index(klass)]
        order = np.argsort(-col, kind="stable")
        return [self.feature_names[i] for i in order]

    def rows(self) -> list:
        out = []
        for i, name in enumerate(self.feature_names):
            for j, c in enumerate(self.classes):
                out.append({
                    "feature": name,
                    "class": int(c),
                    "mean_abs_shap": float(self.mean_abs[i, j]),
                    "total_gain": float(self.total_gain[i]),
                })
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["feature", "class", "mean_abs_shap", "total_gain"], lineterminator="\n"
            )
            writer.writeheader()
            for row in self.rows():
                writer.writerow({**row, "mean_abs_shap": f"{row['mean_abs_shap']:.8g}",
                                 "total_gain": f"{row['total_gain']:.8g}"})


def total_gain(model: LeafwiseGBDTClassifier) -> np.ndarray:
    gain = np.zeros(model.n_features_in_)
    for tree in model.trees_:
        inner = ~tree.is_leaf
        np.add.at(gain, tree.feature[inner], tree.gain[inner])
    return gain


def importance_summary(model: LeafwiseGBDTClassifier, X, feature_names=None, batch_size=1024) -> ImportanceSummary:
    """Aggregate |TreeSHAP| over ``X`` in batches."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("importance_summary needs at least one row")
    acc = None
    names = None
    for start in range(0, X.shape[0], batch_size):
        attr = tree_shap(model, X[start:start + batch_size], feature_names)
        part = np.abs(attr.values).sum(axis=0)
        acc = part if acc is None else acc + part
        names = attr.feature_names
    mean_abs = acc / X.shape[0]
    order = np.argsort(-mean_abs.sum(axis=1), kind="stable")
    return ImportanceSummary(
        feature_names=[names[i] for i in order],
        classes=model.classes_.copy(),
        mean_abs=mean_abs[order],
        total_gain=total_gain(model)[order],
        n_samples=int(X.shape[0]),
    )
