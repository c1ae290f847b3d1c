"""Reference strategies: naive prior (NP) and previous value (PV)."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .domain import ModelVariant


class NaivePriorClassifier(ClassifierMixin, BaseEstimator):
    """Always predicts the most frequent training level (lowest level on ties)."""

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.int64)
        if y.size == 0:
            raise ValueError("cannot fit the naive prior on an empty label set")
        self.dominant_class_ = int(np.argmax(np.bincount(y)))
        self.classes_ = np.unique(y)
        return self

    def predict(self, X):
        check_is_fitted(self, "dominant_class_")
        n = len(X)
        return np.full(n, self.dominant_class_, dtype=np.int64)


class PreviousValueClassifier(ClassifierMixin, BaseEstimator):
    """Predicts that the symptom keeps its previous level.

    Parameters
    ----------
    feature_index : int
        Column of ``X`` holding the previous level of the target symptom.
    """

    def __init__(self, feature_index=-1):
        self.feature_index = feature_index

    @classmethod
    def for_variant(cls, variant: ModelVariant) -> "PreviousValueClassifier":
        return cls(feature_index=variant.feature_names.index(f"prev_{variant.symptom}"))

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X):
        X = check_array(X)
        return np.rint(X[:, self.feature_index]).astype(np.int64)


def np_fit(labels) -> NaivePriorClassifier:
    return NaivePriorClassifier().fit(None, labels)


def np_predict(model: NaivePriorClassifier, features=None) -> int:
    return model.dominant_class_


def pv_predict(features, symptom: str) -> int:
    """``features`` is a :class:`~symptom_forecast.domain.FeatureVector`."""
    if symptom == "pain":
        return int(features.prev_pain)
    if symptom == "tiredness":
        return int(features.prev_tiredness)
    raise ValueError(f"unknown symptom {symptom!r}")


STRATEGIES = {"np": NaivePriorClassifier, "pv": PreviousValueClassifier}
