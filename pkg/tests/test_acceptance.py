"""Acceptance criteria 1-11, each reported as one PASS/FAIL line.

Timings exclude numba compilation, which is triggered on a small input first.
"""
import time
import warnings

import numpy as np
import pytest

from oracles import brute_shapley, brute_split
from symptom_forecast import synthgen
from symptom_forecast.baselines import NaivePriorClassifier
from symptom_forecast.domain import ModelVariant, build_transitions, date_split, patient_ids, to_matrix
from symptom_forecast.explain import importance_summary, tree_shap
from symptom_forecast.gbdt import (
    GbdtParams,
    LeafwiseGBDTClassifier,
    bin_features,
    cross_entropy,
    find_best_split,
    softmax_grad_hess,
)
from symptom_forecast.harness import run_experiment
from symptom_forecast.metrics import CLASSES, evaluate
from symptom_forecast.sampling import smote_for_variant
from test_explain import small_model
from test_metrics import naive_report

SEEDS = range(5)
# boosting rounds for the end-to-end runs; see the README for the budget
ROUNDS = 10


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def _cohort(**overrides):
    config = synthgen.CohortConfig(**overrides)
    return date_split(build_transitions(*synthgen.generate(config)), config.split_date)


def test_c01_metric_oracle(verdict):
    rng = np.random.default_rng(1)

    def check():
        exact = True
        for _ in range(1000):
            n = int(rng.integers(1, 200))
            truths = np.minimum(rng.geometric(0.3, n) - 1, 10)
            preds = rng.integers(0, 11, n)
            report = evaluate(truths, preds)
            mae, weights, expected = naive_report(truths, preds)
            exact &= report.per_class_mae == mae and report.class_weights == weights and report.wmae == expected
        gap = 0.0
        for _ in range(200):
            present = np.sort(rng.choice(11, int(rng.integers(1, 12)), replace=False))
            truths = np.repeat(present, int(rng.integers(1, 30)))
            report = evaluate(truths, rng.integers(0, 11, truths.size))
            gap = max(gap, abs(report.wmae - report.unweighted_macro_mae))
        return exact, gap

    (exact, gap), secs = _timed(check)
    verdict(1, exact and gap <= 1e-12 and secs < 1.0,
            f"exact={exact} balanced gap={gap:.1e} time={secs:.2f}s")


def test_c02_np_analytic_pattern(verdict, default_split):
    rng = np.random.default_rng(2)

    def check():
        ok, n_sets = True, 0
        for variant in (ModelVariant.LP1, ModelVariant.LT1):
            X, y = to_matrix(default_split.train, variant)
            X_test, y_test = to_matrix(default_split.test, variant)
            model = NaivePriorClassifier().fit(X, y)
            sets = [y_test]
            for _ in range(50):
                counts = rng.integers(0, 40, 11)
                counts[0] = counts.max() + 1
                sets.append(np.repeat(CLASSES, counts))
            for truths in sets:
                report = evaluate(truths, model.predict(np.zeros((truths.size, X.shape[1]))))
                ok &= all(v == float(c) for c, v in report.per_class_mae.items())
                n_sets += 1
        return ok, n_sets

    (ok, n_sets), secs = _timed(check)
    verdict(2, ok and secs < 1.0, f"MAE_c == c on {n_sets} test sets time={secs:.2f}s")


def test_c03_masking_inequality(verdict, default_split):
    def check():
        out = {}
        for variant in (ModelVariant.LP1, ModelVariant.LT1):
            X, y = to_matrix(default_split.train, variant)
            X_test, y_test = to_matrix(default_split.test, variant)
            r = evaluate(y_test, NaivePriorClassifier().fit(X, y).predict(X_test))
            out[variant.symptom] = (r.global_mae, r.unweighted_macro_mae, r.wmae)
        return out

    out, secs = _timed(check)
    ok = all(g < m < w for g, m, w in out.values()) and secs < 5.0
    detail = " ".join(f"{s}: {g:.3f}<{m:.3f}<{w:.3f}" for s, (g, m, w) in out.items())
    verdict(3, ok, f"{detail} time={secs:.2f}s")


def test_c04_smote(verdict, default_transitions):
    variant = ModelVariant.LP2
    X, y = to_matrix(default_transitions, variant)
    idx = np.random.default_rng(4).integers(0, len(y), 100_000)
    X, y = X[idx], y[idx]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        smote_for_variant(variant).fit_resample(X[:50], y[:50])
    sm = smote_for_variant(variant, random_state=7)
    (Xb, yb), secs = _timed(lambda: sm.fit_resample(X, y))
    counts = np.bincount(yb, minlength=11)
    balanced = bool(np.all(counts == np.bincount(y).max()))
    cont = np.array([i not in variant.categorical_indices for i in range(X.shape[1])])
    a, b = X[sm.parents_[:, 0]][:, cont], X[sm.parents_[:, 1]][:, cont]
    u = sm.u_[:, None]
    off_segment = float(np.max(np.abs(sm.X_unrounded_[:, cont] - (a + u * (b - a)))))
    again = smote_for_variant(variant, random_state=7)
    Xc, yc = again.fit_resample(X, y)
    same = np.array_equal(Xb, Xc) and np.array_equal(yb, yc)
    ok = balanced and off_segment <= 1e-9 and bool(np.all((u >= 0) & (u <= 1))) and same and secs < 30.0
    verdict(4, ok, f"balanced={balanced} max off-segment={off_segment:.1e} deterministic={same} "
                   f"n={len(y)} time={secs:.1f}s")


def test_c05_gradient_check(verdict):
    rng = np.random.default_rng(5)
    eps = 1e-5

    def check():
        worst = 0.0
        for _ in range(1000):
            s = rng.normal(size=11)
            y = int(rng.integers(11))
            g, h = softmax_grad_hess(s, y)
            for c in range(11):
                e = np.zeros(11)
                e[c] = eps
                fd_g = (cross_entropy(s + e, y) - cross_entropy(s - e, y)) / (2 * eps)
                fd_h = (softmax_grad_hess(s + e, y)[0][c] - softmax_grad_hess(s - e, y)[0][c]) / (2 * eps)
                worst = max(worst, abs(fd_g - g[c]) / abs(g[c]), abs(fd_h - h[c]) / abs(h[c]))
        return worst

    worst, secs = _timed(check)
    verdict(5, worst < 1e-6 and secs < 5.0, f"max relative error={worst:.1e} time={secs:.2f}s")


def test_c06_split_oracle(verdict):
    rng = np.random.default_rng(6)
    warm = bin_features(rng.integers(0, 6, (20, 3)).astype(float))
    find_best_split(np.arange(20), np.ones(20), np.ones(20), warm, GbdtParams(min_samples_per_leaf=1))

    def check():
        matches = 0
        for _ in range(100):
            X = rng.integers(0, 6, (20, 3)).astype(float)
            g = rng.integers(-16, 17, 20) / 8.0
            h = rng.integers(1, 9, 20) / 8.0
            data = bin_features(X)
            l2 = float(rng.choice([0.0, 1.0]))
            min_leaf = int(rng.integers(1, 4))
            got = find_best_split(np.arange(20), g, h, data, GbdtParams(l2_lambda=l2, min_samples_per_leaf=min_leaf))
            want = brute_split(data.binned, data.n_bins, np.arange(20), g, h, l2, min_leaf)
            matches += (None if got is None else (got[0], got[1], got[3])) == want
        return matches

    matches, secs = _timed(check)
    verdict(6, matches == 100 and secs < 10.0, f"{matches}/100 exact matches time={secs:.2f}s")


def test_c07_loss_monotone(verdict, default_split):
    out = {}
    total = 0.0
    for variant in (ModelVariant.LP2, ModelVariant.LT2):
        X, y = to_matrix(default_split.train, variant)
        model, secs = _timed(lambda: LeafwiseGBDTClassifier(
            num_rounds=100, categorical_features=variant.categorical_indices, classes=CLASSES, check_loss=True
        ).fit(X, y))
        total += secs
        out[variant.name] = float(np.max(np.diff(model.train_loss_)))
    ok = all(v <= 0.0 for v in out.values()) and total < 120.0
    detail = " ".join(f"{k} max step={v:.1e}" for k, v in out.items())
    verdict(7, ok, f"{detail} rows={len(default_split.train)} time={total:.1f}s")


def test_c08_treeshap(verdict, default_split):
    variant = ModelVariant.LP2
    X, y = to_matrix(default_split.train, variant)
    model = LeafwiseGBDTClassifier(num_rounds=20, categorical_features=variant.categorical_indices,
                                   classes=CLASSES).fit(X, y)
    X_test, _ = to_matrix(default_split.test, variant)
    rows = X_test[np.random.default_rng(8).choice(len(X_test), 1000, replace=False)]
    tree_shap(model, rows[:2])
    attr, secs = _timed(lambda: tree_shap(model, rows))
    local = float(np.max(np.abs(attr.scores() - model.decision_function(rows))))
    rng = np.random.default_rng(9)
    brute_gap = 0.0
    for n_features in (1, 2, 3):
        small, Xs = small_model(rng, n_features, categorical_features=[0] if n_features == 3 else ())
        small_attr = tree_shap(small, Xs[:40])
        for i, row in enumerate(Xs[:40]):
            phi, _ = brute_shapley(small, row)
            brute_gap = max(brute_gap, float(np.max(np.abs(small_attr.values[i] - phi))))
    # "exact" is read as agreement to 1e-12: both sides sum the same terms in different orders
    ok = local < 1e-6 and brute_gap <= 1e-12 and secs < 30.0
    verdict(8, ok, f"max local error={local:.1e} brute-force gap={brute_gap:.1e} time={secs:.2f}s")


@pytest.fixture(scope="module")
def reproduction(default_split):
    params = GbdtParams(num_rounds=ROUNDS)
    runs = {}
    start = time.perf_counter()
    for seed in SEEDS:
        for symptom in ("pain", "tiredness"):
            runs[seed, symptom] = run_experiment(default_split, symptom, params=params, seed=seed)
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_c09_directional_reproduction(verdict, reproduction):
    runs, secs = reproduction
    held = []
    for seed in SEEDS:
        w = {s: runs[seed, sym].reports[s].wmae for sym in ("pain", "tiredness")
             for s in runs[seed, sym].strategies if s not in ("NP", "PV")}
        ordered = True
        for sym, (v1, v2) in (("pain", ("LP1", "LP2")), ("tiredness", ("LT1", "LT2"))):
            r = runs[seed, sym].reports
            ordered &= max(r[v1].wmae, r[v2].wmae) < r["PV"].wmae < r["NP"].wmae
        held.append(ordered and w["LT2"] < w["LT1"])
    n = sum(held)
    r0 = runs[0, "tiredness"].reports
    verdict(9, n >= 4 and secs < 600.0,
            f"ordering held on {n}/5 seeds {held} (seed 0 tiredness NP {r0['NP'].wmae:.3f} "
            f"PV {r0['PV'].wmae:.3f} LT1 {r0['LT1'].wmae:.3f} LT2 {r0['LT2'].wmae:.3f}) time={secs:.0f}s")


def test_c10_feature_importance(verdict):
    def check():
        firsts = []
        for seed in SEEDS:
            split = _cohort(rng_seed=seed, persistence=0.7)
            ok = True
            for variant, own in ((ModelVariant.LP2, "prev_pain"), (ModelVariant.LT2, "prev_tiredness")):
                X, y = to_matrix(split.train, variant)
                Xb, yb = smote_for_variant(variant, random_state=seed).fit_resample(X, y)
                model = LeafwiseGBDTClassifier(num_rounds=ROUNDS, categorical_features=variant.categorical_indices,
                                               classes=CLASSES).fit(Xb, yb)
                X_test, _ = to_matrix(split.test, variant)
                ranking = importance_summary(model, X_test[:1000], list(variant.feature_names)).ranking()
                ok &= ranking[0] == own
            firsts.append(ok)
        return firsts

    firsts, secs = _timed(check)
    n = sum(firsts)
    verdict(10, n >= 4 and secs < 300.0, f"own previous level ranked first on {n}/5 seeds time={secs:.0f}s")


@pytest.mark.slow
def test_c11_protocol_fidelity(verdict, reproduction, default_split):
    runs, _ = reproduction
    groups = np.asarray(patient_ids(default_split.train))
    full_sweep = disjoint = contained = selected = True
    for report in runs.values():
        contained &= report.audit["smote_contained"]
        for name, cv in report.cv.items():
            full_sweep &= cv.depths == list(range(1, 26))
            owner = {}
            for g, f in zip(groups, cv.folds):
                disjoint &= owner.setdefault(g, f) == f
            selected &= report.final_depths[name] == cv.selected_depth
    ok = full_sweep and disjoint and contained and selected
    verdict(11, ok, f"depths 1-25={full_sweep} patient-disjoint={disjoint} smote contained={contained} "
                    f"final depth = cv choice={selected}")
