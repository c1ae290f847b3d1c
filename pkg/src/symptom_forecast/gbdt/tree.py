"""Tree storage, growth entry points and nested (de)serialization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .binning import BinnedDataset


@dataclass
class GbdtParams:
    max_depth: int = 6
    num_rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_per_leaf: int = 20
    l2_lambda: float = 1.0
    min_gain_to_split: float = 0.0
    rng_seed: int = 0

    def validate(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")
        if self.min_samples_per_leaf < 1:
            raise ValueError("min_samples_per_leaf must be >= 1")
        if self.l2_lambda < 0 or self.min_gain_to_split < 0:
            raise ValueError("l2_lambda and min_gain_to_split must be non-negative")
        return self


@dataclass
class Tree:
    """Flat node arrays; ``left[i] == -1`` marks a leaf.

    ``threshold`` is a bin index for continuous splits (left when
    ``bin <= threshold``). Categorical splits send the bins set in
    ``cat_mask`` to the left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray
    hessian: np.ndarray
    depth: np.ndarray
    split_order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    @property
    def max_leaf_depth(self) -> int:
        return int(self.depth[self.is_leaf].max())

    def to_nested(self, node=0) -> dict:
        if self.left[node] < 0:
            return {
                "leaf": float(self.value[node]),
                "cover": int(self.cover[node]),
                "hessian": float(self.hessian[node]),
            }
        out = {
            "feature": int(self.feature[node]),
            "gain": float(self.gain[node]),
            "cover": int(self.cover[node]),
            "hessian": float(self.hessian[node]),
        }
        mask = int(self.cat_mask[node])
        if mask:
            out["category_bins"] = [b for b in range(64) if mask >> b & 1]
        else:
            out["threshold_bin"] = int(self.threshold[node])
        out["left"] = self.to_nested(int(self.left[node]))
        out["right"] = self.to_nested(int(self.right[node]))
        return out

    @classmethod
    def from_nested(cls, doc: dict) -> "Tree":
        rows = []

        def visit(d, depth):
            idx = len(rows)
            rows.append(None)
            if "leaf" in d:
                rows[idx] = (-1, -1, 0, -1, -1, d["leaf"], 0.0, d.get("cover", -1), d.get("hessian", 0.0), depth)
                return idx
            mask = 0
            for b in d.get("category_bins", ()):
                mask |= 1 << b
            li = visit(d["left"], depth + 1)
            ri = visit(d["right"], depth + 1)
            rows[idx] = (
                d["feature"], d.get("threshold_bin", -1), mask, li, ri, 0.0, d["gain"],
                d.get("cover", -1), d.get("hessian", 0.0), depth,
            )
            return idx

        visit(doc, 0)
        cols = list(zip(*rows))
        int_ = np.int64
        return cls(
            feature=np.array(cols[0], dtype=int_),
            threshold=np.array(cols[1], dtype=int_),
            cat_mask=np.array(cols[2], dtype=np.uint64),
            left=np.array(cols[3], dtype=int_),
            right=np.array(cols[4], dtype=int_),
            value=np.array(cols[5], dtype=np.float64),
            gain=np.array(cols[6], dtype=np.float64),
            cover=np.array(cols[7], dtype=int_),
            hessian=np.array(cols[8], dtype=np.float64),
            depth=np.array(cols[9], dtype=int_),
            split_order=np.zeros(0, dtype=int_),
        )


def find_best_split(samples, grad, hess, data: BinnedDataset, params: GbdtParams):
    """Best split of one node, or ``None``.

    Returns ``(feature, threshold, category_mask, gain)``.
    """
    samples = np.asarray(samples, dtype=np.int64)
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    if len(samples) < 2 * params.min_samples_per_leaf:
        return None
    n_bins = data.n_bins
    hist = _kernels.build_histogram(data.binned, samples, grad, hess, int(n_bins.max()))
    gain, f, t, mask = _kernels.find_split(
        hist, n_bins, data.is_categorical,
        float(grad[samples].sum()), float(hess[samples].sum()), float(len(samples)),
        params.l2_lambda, params.min_samples_per_leaf, params.min_gain_to_split,
    )
    if f < 0:
        return None
    return int(f), int(t), int(mask), float(gain)


def histogram_workspace(data: BinnedDataset, params: GbdtParams) -> np.ndarray:
    shape = (2 * params.max_leaves - 1, data.binned.shape[1], int(data.n_bins.max()), 3)
    return np.empty(shape)


def grow_tree_leafwise(data: BinnedDataset, grad, hess, params: GbdtParams, workspace=None):
    """Grow one tree on all rows of ``data``.

    Returns ``(tree, leaf_of_sample, depth_limited)``.
    """
    if workspace is None:
        workspace = histogram_workspace(data, params)
    out = _kernels.grow_tree(
        data.binned,
        np.ascontiguousarray(grad, dtype=np.float64),
        np.ascontiguousarray(hess, dtype=np.float64),
        data.n_bins,
        data.is_categorical,
        params.max_depth,
        params.max_leaves,
        params.min_samples_per_leaf,
        params.l2_lambda,
        params.min_gain_to_split,
        workspace,
    )
    tree = Tree(*out[:11])
    return tree, out[11], bool(out[12])
