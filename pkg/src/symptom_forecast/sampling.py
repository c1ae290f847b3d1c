"""SMOTE oversampling for mixed continuous/categorical features.

Categoricals follow the SMOTE-NC convention: every mismatched category adds
the squared median standard deviation of the (standardized) continuous
features to the squared distance, and synthetic points take the majority
category among the neighbours. Integer-valued features are rounded and
clamped after interpolation.
"""
from __future__ import annotations

import csv
import warnings

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_X_y

from .domain import AGE_RANGE, CANCER_TYPES, N_LEVELS, SEXES, ModelVariant


def standardize(X, categorical=()):
    """Scale continuous columns to zero mean and unit variance.

    Returns ``(Z, mean, scale, zero_variance)``. Categorical columns are
    copied unchanged (their mean is 0 and scale 1). Constant columns keep
    scale 1 and are flagged in ``zero_variance``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("standardize needs at least 2 samples")
    cont = np.ones(X.shape[1], dtype=bool)
    cont[list(categorical)] = False
    mean = np.where(cont, X.mean(axis=0), 0.0)
    std = X.std(axis=0)
    zero_variance = cont & (std == 0)
    scale = np.where(cont & ~zero_variance, std, 1.0)
    Z = (X - mean) / scale
    return Z, mean, scale, zero_variance


def categorical_penalty(Z_class, continuous) -> float:
    """Median standard deviation of the continuous columns within one class."""
    if not np.any(continuous) or len(Z_class) < 2:
        return 0.0
    return float(np.median(Z_class[:, continuous].std(axis=0)))


@njit(cache=True)
def _knn_all(Z, is_cat, penalty2, k):
    """k nearest other members for every row of ``Z``, by (distance, index)."""
    m, d = Z.shape
    nn = np.full((m, k), -1, dtype=np.int64)
    nd = np.full((m, k), np.inf)
    for i in range(m):
        for j in range(m):
            if j == i:
                continue
            worst = nd[i, k - 1]
            dist = 0.0
            for f in range(d):
                if is_cat[f]:
                    if Z[i, f] != Z[j, f]:
                        dist += penalty2
                else:
                    diff = Z[i, f] - Z[j, f]
                    dist += diff * diff
                # partial sums only grow; an equal distance would not be inserted either
                if dist >= worst:
                    break
            # j ascends, so an equal distance never displaces an earlier index
            if dist < nd[i, k - 1]:
                pos = k - 1
                while pos > 0 and dist < nd[i, pos - 1]:
                    nd[i, pos] = nd[i, pos - 1]
                    nn[i, pos] = nn[i, pos - 1]
                    pos -= 1
                nd[i, pos] = dist
                nn[i, pos] = j
    return nn, nd


def _squared_distances(query, members, is_cat, penalty):
    diff = members - query
    cont = ~is_cat
    d2 = (diff[:, cont] ** 2).sum(axis=1)
    if np.any(is_cat):
        d2 = d2 + penalty**2 * (diff[:, is_cat] != 0).sum(axis=1)
    return d2


def knn_minority(sample, class_members, k, categorical=(), penalty=None):
    """Indices into ``class_members`` of the ``min(k, len)`` nearest points.

    Inputs are expected in standardized space and ``class_members`` must not
    contain ``sample`` itself. Equal distances keep ascending index order.
    """
    members = np.atleast_2d(np.asarray(class_members, dtype=np.float64))
    if members.shape[0] == 0 or np.size(class_members) == 0:
        raise ValueError("class_members is empty")
    sample = np.asarray(sample, dtype=np.float64)
    is_cat = np.zeros(members.shape[1], dtype=bool)
    is_cat[list(categorical)] = True
    if penalty is None:
        penalty = categorical_penalty(members, ~is_cat)
    d2 = _squared_distances(sample, members, is_cat, penalty)
    order = np.argsort(d2, kind="stable")
    return order[: min(k, len(order))]


def synthesize(sample, neighbor, u, neighbor_block=None, categorical=(), integer=(), bounds=None):
    """One synthetic point on the segment from ``sample`` to ``neighbor``.

    ``u`` in [0, 1) is shared by all continuous features. Categorical
    features take the most common value in ``neighbor_block`` (all k
    neighbours), ties resolved in favour of the sample's own value and then
    the smallest value. Returns ``(point, unrounded)``.
    """
    sample = np.asarray(sample, dtype=np.float64)
    neighbor = np.asarray(neighbor, dtype=np.float64)
    raw = sample + u * (neighbor - sample)
    out = raw.copy()
    if neighbor_block is None:
        neighbor_block = neighbor[None, :]
    neighbor_block = np.atleast_2d(neighbor_block)
    for f in categorical:
        out[f] = raw[f] = _vote(neighbor_block[:, f], sample[f])
    for f in integer:
        if f in categorical:
            continue
        v = np.floor(out[f] + 0.5)
        if bounds is not None and bounds.get(f) is not None:
            lo, hi = bounds[f]
            v = min(max(v, lo), hi)
        out[f] = v
    return out, raw


def _vote(values, own):
    vals, counts = np.unique(values, return_counts=True)
    top = vals[counts == counts.max()]
    if own in top:
        return own
    return top.min()


def _synthesize_many(samples, neighbors, u, blocks, categorical, integer, bounds):
    """Row-wise :func:`synthesize`; ``blocks`` is ``(n, k, d)``."""
    raw = samples + u[:, None] * (neighbors - samples)
    for f in categorical:
        votes = blocks[:, :, f]
        cats = np.unique(votes)
        counts = (votes[:, :, None] == cats[None, None, :]).sum(axis=1)
        top = counts == counts.max(axis=1, keepdims=True)
        own = samples[:, f]
        own_top = (top & (cats[None, :] == own[:, None])).any(axis=1)
        raw[:, f] = np.where(own_top, own, cats[np.argmax(top, axis=1)])
    out = raw.copy()
    for f in integer:
        if f in categorical:
            continue
        v = np.floor(out[:, f] + 0.5)
        if bounds.get(f) is not None:
            lo, hi = bounds[f]
            v = np.clip(v, lo, hi)
        out[:, f] = v
    return out, raw


class SMOTE(BaseEstimator):
    """Oversample every class up to the majority count.

    Parameters
    ----------
    k_neighbors : int
        Neighbours considered per minority sample; clamped to class size - 1.
    categorical_features : sequence of int
        Columns holding category codes.
    integer_features : sequence of int or "all"
        Continuous columns rounded to the nearest integer after interpolation.
    bounds : dict, optional
        ``column -> (low, high)`` clamp applied after rounding.
    random_state : int
        Seed; each class draws from its own stream derived from (seed, class).

    After ``fit_resample`` the output holds the original rows first, in
    input order, then the synthetic rows grouped by ascending class.
    ``synthetic_mask_`` flags the synthetic rows, ``parents_`` holds the
    (sample, neighbour) input indices behind each synthetic row, ``u_`` the
    interpolation factor and ``X_unrounded_`` the point before rounding.
    """

    def __init__(self, k_neighbors=5, categorical_features=(), integer_features="all", bounds=None,
                 random_state=0):
        self.k_neighbors = k_neighbors
        self.categorical_features = categorical_features
        self.integer_features = integer_features
        self.bounds = bounds
        self.random_state = random_state

    def fit_resample(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        n, d = X.shape
        cat = tuple(int(c) for c in self.categorical_features)
        is_cat = np.zeros(d, dtype=bool)
        is_cat[list(cat)] = True
        if self.integer_features == "all":
            integer = tuple(f for f in range(d) if not is_cat[f])
        else:
            integer = tuple(int(f) for f in self.integer_features)
        bounds = dict(self.bounds or {})

        classes, counts = np.unique(y, return_counts=True)
        target = int(counts.max())
        if n >= 2:
            Z, self.mean_, self.scale_, self.zero_variance_ = standardize(X, cat)
        else:
            Z = X.copy()
            self.mean_, self.scale_ = np.zeros(d), np.ones(d)
            self.zero_variance_ = np.zeros(d, dtype=bool)

        new_X, new_raw, new_y, parents, us = [], [], [], [], []
        for c, count in zip(classes, counts):
            n_new = target - int(count)
            if n_new == 0:
                continue
            members = np.flatnonzero(y == c)
            rng = np.random.default_rng(np.random.SeedSequence([int(self.random_state), int(c)]))
            m = len(members)
            if m == 1:
                warnings.warn(f"class {c} has a single sample; duplicating it {n_new} times")
                base = np.zeros(n_new, dtype=np.int64)
                nn = np.zeros((1, 1), dtype=np.int64)
                pick = np.zeros(n_new, dtype=np.int64)
                u = np.zeros(n_new)
            else:
                k = min(int(self.k_neighbors), m - 1)
                Zc = np.ascontiguousarray(Z[members])
                penalty = categorical_penalty(Zc, ~is_cat)
                nn, _ = _knn_all(Zc, is_cat, penalty * penalty, k)
                reps, rem = divmod(n_new, m)
                base = np.concatenate(
                    [np.tile(np.arange(m), reps), np.sort(rng.choice(m, rem, replace=False))]
                ).astype(np.int64)
                pick = rng.integers(0, k, size=n_new)
                u = rng.random(n_new)
            Xc = X[members]
            nb = nn[base, pick] if m > 1 else np.zeros(n_new, dtype=np.int64)
            block = Xc[nn[base]] if m > 1 else Xc[np.zeros((n_new, 1), dtype=np.int64)]
            point, raw = _synthesize_many(Xc[base], Xc[nb], u, block, cat, integer, bounds)
            new_X.append(point)
            new_raw.append(raw)
            parents.append(np.column_stack([members[base], members[nb]]))
            new_y.append(np.full(n_new, c, dtype=np.int64))
            us.append(u)

        if new_X:
            X_new = np.vstack(new_X)
            self.X_unrounded_ = np.vstack(new_raw)
            self.parents_ = np.vstack(parents).astype(np.int64)
            self.u_ = np.concatenate(us)
            y_new = np.concatenate(new_y)
        else:
            X_new = np.empty((0, d))
            self.X_unrounded_ = np.empty((0, d))
            self.parents_ = np.empty((0, 2), dtype=np.int64)
            self.u_ = np.empty(0)
            y_new = np.empty(0, dtype=np.int64)
        self.synthetic_mask_ = np.concatenate([np.zeros(n, dtype=bool), np.ones(len(y_new), dtype=bool)])
        return np.vstack([X, X_new]), np.concatenate([y, y_new])


def variant_bounds(variant: ModelVariant) -> dict:
    """Legal ranges of the integer features of ``variant``."""
    legal = {
        "age": AGE_RANGE,
        "days_since_diagnosis": (0, np.inf),
        "days_since_prev_survey": (1, np.inf),
        "prev_pain": (0, N_LEVELS - 1),
        "prev_tiredness": (0, N_LEVELS - 1),
    }
    return {i: legal[name] for i, name in enumerate(variant.feature_names) if name in legal}


def smote_for_variant(variant: ModelVariant, k_neighbors=5, random_state=0) -> SMOTE:
    return SMOTE(
        k_neighbors=k_neighbors,
        categorical_features=tuple(variant.categorical_indices),
        integer_features="all",
        bounds=variant_bounds(variant),
        random_state=random_state,
    )


def oversample(X, y, k_neighbors=5, random_state=0, categorical_features=(), bounds=None):
    """Functional form of :class:`SMOTE`; returns ``(X_res, y_res, synthetic_mask)``."""
    sm = SMOTE(k_neighbors, categorical_features, "all", bounds, random_state)
    X_res, y_res = sm.fit_resample(X, y)
    return X_res, y_res, sm.synthetic_mask_


def write_balanced(path, X, y, synthetic_mask, variant: ModelVariant) -> None:
    """Balanced set as CSV: the variant's features, ``target`` and a 0/1 ``synthetic`` column."""
    names = list(variant.feature_names)
    decode = {"sex": SEXES, "cancer_type": CANCER_TYPES}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, "target", "synthetic"])
        for row, label, flag in zip(X, y, synthetic_mask):
            cells = [decode[n][int(v)] if n in decode else int(v) for n, v in zip(names, row)]
            writer.writerow([*cells, int(label), int(bool(flag))])
