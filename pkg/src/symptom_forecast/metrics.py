"""Per-class MAE, inverse-frequency class weights and weighted MAE.

Errors are grouped by the TRUE level. Classes absent from the evaluated set
are left out of both sums of the weighted mean, so the weights stay finite.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

CLASSES = tuple(range(11))


def _as_labels(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() > 10):
        raise ValueError(f"{name} must hold symptom levels in 0..10")
    return arr.astype(np.int64)


def _check_pair(truths, predictions):
    y = _as_labels(truths, "truths")
    p = _as_labels(predictions, "predictions")
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.size} truths vs {p.size} predictions")
    return y, p


def mae_per_class(truths, predictions) -> dict:
    y, p = _check_pair(truths, predictions)
    err = np.abs(y - p).astype(np.float64)
    counts = np.bincount(y, minlength=11)
    sums = np.bincount(y, weights=err, minlength=11)
    return {int(c): float(sums[c] / counts[c]) for c in CLASSES if counts[c] > 0}


def class_counts(truths) -> dict:
    y = _as_labels(truths, "truths")
    counts = np.bincount(y, minlength=11)
    return {int(c): int(counts[c]) for c in CLASSES if counts[c] > 0}


def class_weights(counts: dict) -> dict:
    """``w_c = max N / N_c`` over the non-empty classes."""
    nonzero = {c: n for c, n in counts.items() if n > 0}
    if not nonzero:
        raise ValueError("all class counts are zero")
    largest = max(nonzero.values())
    return {c: largest / n for c, n in nonzero.items()}


def wmae(per_class_mae: dict, weights: dict) -> float:
    if not per_class_mae:
        raise ValueError("empty per-class MAE map")
    if set(per_class_mae) != set(weights):
        raise ValueError("per-class MAE and weights must cover the same classes")
    num = 0.0
    den = 0.0
    # plain ascending-class accumulation keeps the result reproducible to the bit
    for c in sorted(per_class_mae):
        num += float(weights[c]) * float(per_class_mae[c])
        den += float(weights[c])
    return num / den


def wmae_score(truths, predictions) -> float:
    """Weighted MAE with weights taken from ``truths``; lower is better."""
    return wmae(mae_per_class(truths, predictions), class_weights(class_counts(truths)))


@dataclass
class EvalReport:
    per_class_mae: dict
    class_counts: dict
    class_weights: dict
    wmae: float
    unweighted_macro_mae: float
    global_mae: float
    confusion: np.ndarray = field(repr=False)

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "per_class_mae": {str(c): v for c, v in self.per_class_mae.items()},
            "class_counts": {str(c): v for c, v in self.class_counts.items()},
            "class_weights": {str(c): v for c, v in self.class_weights.items()},
            "wmae": self.wmae,
            "unweighted_macro_mae": self.unweighted_macro_mae,
            "global_mae": self.global_mae,
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            per_class_mae={int(c): float(v) for c, v in doc["per_class_mae"].items()},
            class_counts={int(c): int(v) for c, v in doc["class_counts"].items()},
            class_weights={int(c): float(v) for c, v in doc["class_weights"].items()},
            wmae=float(doc["wmae"]),
            unweighted_macro_mae=float(doc["unweighted_macro_mae"]),
            global_mae=float(doc["global_mae"]),
            confusion=np.asarray(doc["confusion"], dtype=np.int64),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path) -> None:
        """One row per class, then summary rows (``wmae``, ``macro_mae``, ``global_mae``)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "count", "weight", "mae"])
            for c in CLASSES:
                if c in self.per_class_mae:
                    writer.writerow(
                        [f"MAE_{c}", self.class_counts[c], self.class_weights[c], self.per_class_mae[c]]
                    )
                else:
                    writer.writerow([f"MAE_{c}", 0, "", ""])
            writer.writerow(["WMAE", self.n_samples, "", self.wmae])
            writer.writerow(["macro_MAE", self.n_samples, "", self.unweighted_macro_mae])
            writer.writerow(["global_MAE", self.n_samples, "", self.global_mae])


def confusion_matrix(truths, predictions) -> np.ndarray:
    y, p = _check_pair(truths, predictions)
    conf = np.zeros((11, 11), dtype=np.int64)
    np.add.at(conf, (y, p), 1)
    return conf


def evaluate(truths, predictions) -> EvalReport:
    y, p = _check_pair(truths, predictions)
    if y.size == 0:
        raise ValueError("cannot evaluate an empty set")
    per_class = mae_per_class(y, p)
    counts = class_counts(y)
    weights = class_weights(counts)
    return EvalReport(
        per_class_mae=per_class,
        class_counts=counts,
        class_weights=weights,
        wmae=wmae(per_class, weights),
        unweighted_macro_mae=float(np.mean(list(per_class.values()))),
        global_mae=float(np.mean(np.abs(y - p))),
        confusion=confusion_matrix(y, p),
    )
