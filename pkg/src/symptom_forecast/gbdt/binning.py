"""Histogram binning of raw features.

Continuous features get at most ``max_bins - 1`` cut points. When a feature
has few distinct values the cut points sit halfway between consecutive
values, so each bin is pure; otherwise they are training-set quantiles.
Categorical features get one bin per observed category plus a trailing bin
for categories never seen in training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_BINS = 255
# categorical left-sets are stored as uint64 bitmasks
MAX_CATEGORIES = 63


class BinMapper:
    def __init__(self, max_bins=MAX_BINS, categorical_features=()):
        if not 2 <= max_bins <= MAX_BINS:
            raise ValueError(f"max_bins must be in [2, {MAX_BINS}]")
        self.max_bins = max_bins
        self.categorical_features = tuple(categorical_features)

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("need a 2-D array with at least one sample")
        n_features = X.shape[1]
        self.is_categorical_ = np.zeros(n_features, dtype=np.bool_)
        self.is_categorical_[list(self.categorical_features)] = True
        self.boundaries_ = []
        self.categories_ = []
        for f in range(n_features):
            col = X[:, f]
            if not np.all(np.isfinite(col)):
                raise ValueError(f"feature {f} contains non-finite values")
            if self.is_categorical_[f]:
                cats = np.unique(col)
                if cats.size > MAX_CATEGORIES:
                    raise ValueError(f"categorical feature {f} has more than {MAX_CATEGORIES} categories")
                self.categories_.append(cats)
                self.boundaries_.append(None)
            else:
                self.categories_.append(None)
                self.boundaries_.append(self._cut_points(col))
        return self

    def _cut_points(self, col):
        distinct = np.unique(col)
        if distinct.size <= self.max_bins:
            return (distinct[:-1] + distinct[1:]) / 2.0
        qs = np.linspace(0.0, 1.0, self.max_bins + 1)[1:-1]
        cuts = np.unique(np.quantile(col, qs, method="linear"))
        # a cut equal to the maximum would leave an empty last bin
        return cuts[cuts < distinct[-1]]

    @property
    def n_bins_(self) -> np.ndarray:
        out = []
        for b, c in zip(self.boundaries_, self.categories_):
            out.append(len(c) + 1 if c is not None else len(b) + 1)
        return np.asarray(out, dtype=np.int64)

    def transform(self, X) -> np.ndarray:
        """Bin indices as a column-major ``uint8`` matrix."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.boundaries_):
            raise ValueError(
                f"expected {len(self.boundaries_)} features, got array of shape {X.shape}"
            )
        out = np.empty(X.shape, dtype=np.uint8, order="F")
        for f, (bounds, cats) in enumerate(zip(self.boundaries_, self.categories_)):
            col = X[:, f]
            if cats is None:
                out[:, f] = np.searchsorted(bounds, col, side="left")
            else:
                pos = np.searchsorted(cats, col)
                pos_clipped = np.minimum(pos, len(cats) - 1)
                seen = cats[pos_clipped] == col
                out[:, f] = np.where(seen, pos_clipped, len(cats))
        return out

    def fit_transform(self, X):
        return self.fit(X).transform(X)

    def to_dict(self) -> dict:
        return {
            "max_bins": self.max_bins,
            "categorical_features": list(self.categorical_features),
            "boundaries": [None if b is None else b.tolist() for b in self.boundaries_],
            "categories": [None if c is None else c.tolist() for c in self.categories_],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BinMapper":
        self = cls(doc["max_bins"], doc["categorical_features"])
        self.boundaries_ = [None if b is None else np.asarray(b, dtype=np.float64) for b in doc["boundaries"]]
        self.categories_ = [None if c is None else np.asarray(c, dtype=np.float64) for c in doc["categories"]]
        self.is_categorical_ = np.array([c is not None for c in self.categories_], dtype=np.bool_)
        return self


@dataclass
class BinnedDataset:
    mapper: BinMapper
    binned: np.ndarray
    labels: np.ndarray

    @property
    def n_bins(self) -> np.ndarray:
        return self.mapper.n_bins_

    @property
    def is_categorical(self) -> np.ndarray:
        return self.mapper.is_categorical_


def bin_features(X, y=None, max_bins=MAX_BINS, categorical_features=()) -> BinnedDataset:
    mapper = BinMapper(max_bins, categorical_features)
    binned = mapper.fit_transform(X)
    labels = None if y is None else np.asarray(y, dtype=np.int64)
    return BinnedDataset(mapper=mapper, binned=binned, labels=labels)
