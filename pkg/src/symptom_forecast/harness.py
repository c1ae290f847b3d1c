"""Experimental protocol: patient-grouped CV over tree depth, retraining, four-way evaluation."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .baselines import NaivePriorClassifier, PreviousValueClassifier
from .domain import ModelVariant, SplitDataset, dataset_hash, patient_ids, to_matrix
from .gbdt import GbdtParams, LeafwiseGBDTClassifier, fit_depth_path
from .metrics import CLASSES, EvalReport, evaluate, wmae_score
from .sampling import smote_for_variant

log = logging.getLogger(__name__)

DEFAULT_DEPTHS = tuple(range(1, 26))


def make_folds(groups, n_folds=5, seed=0) -> np.ndarray:
    """Patient-disjoint fold index for every sample.

    Patients are shuffled with ``seed``, then assigned largest-first to the
    fold holding the fewest samples so far.
    """
    groups = np.asarray(groups)
    uniq, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    if len(uniq) < n_folds:
        raise ValueError(f"need at least {n_folds} patients for {n_folds} folds, got {len(uniq)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(uniq))
    order = perm[np.argsort(-counts[perm], kind="stable")]
    totals = np.zeros(n_folds, dtype=np.int64)
    fold_of_group = np.empty(len(uniq), dtype=np.int64)
    for g in order:
        f = int(np.argmin(totals))
        fold_of_group[g] = f
        totals[f] += counts[g]
    return fold_of_group[inverse]


def _model(params: GbdtParams, variant: ModelVariant, depth: int) -> LeafwiseGBDTClassifier:
    return LeafwiseGBDTClassifier(
        max_depth=depth,
        num_rounds=params.num_rounds,
        learning_rate=params.learning_rate,
        max_leaves=params.max_leaves,
        min_samples_per_leaf=params.min_samples_per_leaf,
        l2_lambda=params.l2_lambda,
        min_gain_to_split=params.min_gain_to_split,
        categorical_features=tuple(variant.categorical_indices),
        classes=CLASSES,
        random_state=params.rng_seed,
    )


def _balanced(X, y, variant, seed, smote):
    if not smote:
        return X, y, np.zeros(len(y), dtype=bool), np.empty((0, 2), dtype=np.int64)
    sm = smote_for_variant(variant, random_state=seed)
    Xb, yb = sm.fit_resample(X, y)
    return Xb, yb, sm.synthetic_mask_, sm.parents_


@dataclass
class CvResult:
    depths: list
    fold_scores: dict
    mean_scores: dict
    selected_depth: int
    # depth -> smaller depth whose model is provably identical (depth limit never binding)
    reused_from: dict = field(default_factory=dict)
    folds: np.ndarray | None = field(default=None, repr=False)
    audit: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "depths": list(self.depths),
            "fold_scores": {str(d): v for d, v in self.fold_scores.items()},
            "mean_scores": {str(d): v for d, v in self.mean_scores.items()},
            "selected_depth": self.selected_depth,
            "reused_from": [{str(d): s for d, s in r.items()} for r in self.reused_from.values()]
            if self.reused_from else [],
            "audit": self.audit,
        }


def _fold_scores(X, y, folds, fold, variant, depths, params, seed, smote):
    tr = np.flatnonzero(folds != fold)
    va = np.flatnonzero(folds == fold)
    Xb, yb, synthetic, parents = _balanced(X[tr], y[tr], variant, seed * 1000 + fold + 1, smote)
    # synthetic rows may only descend from this fold's training rows
    parent_global = tr[parents.ravel()] if parents.size else np.empty(0, dtype=np.int64)
    audit = {
        "n_train": int(len(tr)),
        "n_validation": int(len(va)),
        "n_synthetic": int(synthetic.sum()),
        "synthetic_parents_in_validation": int(np.isin(parent_global, va).sum()),
        "validation_from_original_rows": bool(np.all(folds[va] == fold)),
    }
    models = fit_depth_path(_model(params, variant, min(depths)), Xb, yb, depths)
    scores, reused = {}, {}
    previous = None
    for depth in sorted(depths):
        model = models[depth]
        if previous is not None and model.trees_ is models[previous].trees_:
            scores[depth] = scores[previous]
            reused[depth] = reused.get(previous, previous)
        else:
            scores[depth] = wmae_score(y[va], model.predict(X[va]))
        previous = depth
    return scores, reused, audit


def cv_depth_sweep(X, y, groups, variant: ModelVariant, depths=DEFAULT_DEPTHS, params=None, seed=0,
                   n_folds=5, smote=True, n_jobs=1) -> CvResult:
    """Mean validation WMAE per ``max_depth`` over patient-grouped folds.

    SMOTE runs on each fold's training part only. Depths share boosting
    work through :func:`fit_depth_path`; a fit its depth cap never touched
    is the model for every larger depth too, and ``reused_from`` records it.
    """
    params = params or GbdtParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    folds = make_folds(groups, n_folds, seed)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fold_scores)(X, y, folds, f, variant, depths, params, seed, smote) for f in range(n_folds)
    )
    depths = sorted(depths)
    fold_scores = {d: [r[0][d] for r in results] for d in depths}
    mean_scores = {d: float(np.mean(v)) for d, v in fold_scores.items()}
    best = min(mean_scores.values())
    selected = next(d for d in depths if mean_scores[d] == best)
    return CvResult(
        depths=depths,
        fold_scores=fold_scores,
        mean_scores=mean_scores,
        selected_depth=selected,
        reused_from={f: r[1] for f, r in enumerate(results)},
        folds=folds,
        audit={"folds": [r[2] for r in results]},
    )


@dataclass
class ExperimentReport:
    symptom: str
    variants: tuple
    reports: dict
    cv: dict
    final_depths: dict
    split: dict
    config: dict
    audit: dict
    models: dict = field(default_factory=dict, repr=False)

    @property
    def strategies(self) -> list:
        return ["NP", "PV", *self.variants]

    def to_dict(self) -> dict:
        return {
            "symptom": self.symptom,
            "strategies": self.strategies,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
            "cv": {k: v.to_dict() for k, v in self.cv.items()},
            "final_depths": self.final_depths,
            "split": self.split,
            "config": self.config,
            "audit": self.audit,
        }

    def write(self, report_path=None, table_path=None) -> None:
        if report_path:
            with open(report_path, "w") as fh:
                json.dump(self.to_dict(), fh, indent=2)
        if table_path:
            write_table(table_path, [self.reports[s] for s in self.strategies], self.strategies)


def write_table(path, reports, names) -> None:
    """Rows MAE_0..MAE_10 then WMAE; one column per strategy, blank where a class is absent."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", *names])
        for c in CLASSES:
            writer.writerow(
                [f"MAE_{c}", *(_fmt(r.per_class_mae.get(c)) for r in reports)]
            )
        writer.writerow(["WMAE", *(_fmt(r.wmae) for r in reports)])


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def run_experiment(split: SplitDataset, symptom: str, params=None, seed=0, depths=DEFAULT_DEPTHS,
                   n_folds=5, smote=True, n_jobs=1) -> ExperimentReport:
    """Baselines plus both GBDT variants for one symptom, all scored on the untouched test set."""
    params = params or GbdtParams()
    test_hash = dataset_hash(split.test)
    train_hash = dataset_hash(split.train)
    variants = ModelVariant.for_symptom(symptom)
    groups = patient_ids(split.train)

    reports, cvs, depths_used, models, final_audit = {}, {}, {}, {}, {}
    X_full, y_train = to_matrix(split.train, variants[1])
    X_test_full, y_test = to_matrix(split.test, variants[1])
    reports["NP"] = evaluate(y_test, NaivePriorClassifier().fit(X_full, y_train).predict(X_test_full))
    pv = PreviousValueClassifier.for_variant(variants[1]).fit()
    reports["PV"] = evaluate(y_test, pv.predict(X_test_full))

    for variant in variants:
        X, y = to_matrix(split.train, variant)
        X_test, _ = to_matrix(split.test, variant)
        log.info("cv sweep for %s over %d depths", variant.name, len(depths))
        cv = cv_depth_sweep(X, y, groups, variant, depths, params, seed, n_folds, smote, n_jobs)
        Xb, yb, synthetic, _ = _balanced(X, y, variant, seed, smote)
        model = _model(params, variant, cv.selected_depth).fit(Xb, yb)
        model.feature_names_ = list(variant.feature_names)
        model.meta_ = {"variant": variant.name, "seed": seed}
        reports[variant.name] = evaluate(y_test, model.predict(X_test))
        cvs[variant.name] = cv
        depths_used[variant.name] = int(model.max_depth)
        models[variant.name] = model
        final_audit[variant.name] = {"n_train": int(len(y)), "n_synthetic": int(synthetic.sum())}

    if dataset_hash(split.test) != test_hash or dataset_hash(split.train) != train_hash:
        raise AssertionError("train or test set changed during the experiment")
    audit = {
        "test_hash": test_hash,
        "final_fits": final_audit,
        "smote_contained": all(
            f["synthetic_parents_in_validation"] == 0 and f["validation_from_original_rows"]
            for cv in cvs.values() for f in cv.audit["folds"]
        ),
    }
    return ExperimentReport(
        symptom=symptom,
        variants=tuple(v.name for v in variants),
        reports=reports,
        cv=cvs,
        final_depths=depths_used,
        split={
            "split_date": split.split_date.isoformat(),
            "n_train": len(split.train),
            "n_test": len(split.test),
            "test_hash": test_hash,
            "train_hash": train_hash,
        },
        config={
            "params": {k: getattr(params, k) for k in params.__dataclass_fields__},
            "seed": seed,
            "depths": list(depths),
            "n_folds": n_folds,
            "smote": smote,
        },
        audit=audit,
        models=models,
    )
