import json

import numpy as np
import pytest
from sklearn.base import clone

from oracles import best_subset_gain, brute_split, naive_grow, walk_scores
from symptom_forecast.domain import ModelVariant, to_matrix
from symptom_forecast.gbdt import (
    BinMapper,
    GbdtParams,
    LeafwiseGBDTClassifier,
    bin_features,
    cross_entropy,
    find_best_split,
    fit_depth_path,
    grow_tree_leafwise,
    predict_class,
    predict_scores,
    softmax,
    softmax_grad_hess,
)
from symptom_forecast.metrics import CLASSES


def dyadic(rng, n, lo=-16, hi=17, denom=8.0):
    return rng.integers(lo, hi, n) / denom


def random_instance(rng, n=20, n_features=3, levels=6):
    X = rng.integers(0, levels, (n, n_features)).astype(float)
    g = dyadic(rng, n)
    h = rng.integers(1, 9, n) / 8.0
    return X, g, h


def variant_data(split, variant=ModelVariant.LP2, n=None):
    X, y = to_matrix(split.train[:n] if n else split.train, variant)
    return X, y


# --- objective ---------------------------------------------------------------

class TestObjective:
    def test_uniform_scores(self):
        g, h = softmax_grad_hess(np.zeros(11), 4)
        assert np.allclose(softmax(np.zeros(11)), 1 / 11)
        assert g[4] == pytest.approx(1 / 11 - 1)
        assert g[0] == pytest.approx(1 / 11)
        assert h[0] == pytest.approx((1 / 11) * (10 / 11))

    def test_saturation(self):
        s = np.zeros(11)
        s[2] = 60.0
        g, _ = softmax_grad_hess(s, 2)
        assert abs(g[2]) < 1e-20

    def test_stable_for_large_scores(self):
        p = softmax(np.array([1000.0, 999.0, -1000.0]))
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12

    def test_matches_central_differences(self, rng):
        eps = 1e-5
        for _ in range(1000):
            s = rng.normal(size=11)
            y = int(rng.integers(11))
            g, h = softmax_grad_hess(s, y)
            for c in range(11):
                e = np.zeros(11)
                e[c] = eps
                fd_g = (cross_entropy(s + e, y) - cross_entropy(s - e, y)) / (2 * eps)
                fd_h = (softmax_grad_hess(s + e, y)[0][c] - softmax_grad_hess(s - e, y)[0][c]) / (2 * eps)
                assert abs(fd_g - g[c]) < 1e-6 * abs(g[c])
                assert abs(fd_h - h[c]) < 1e-6 * abs(h[c])

    def test_batch_form_matches_rows(self, rng):
        S = rng.normal(size=(30, 5))
        y = rng.integers(0, 5, 30)
        G, H = softmax_grad_hess(S, y)
        for i in range(30):
            g, h = softmax_grad_hess(S[i], y[i])
            assert np.allclose(G[i], g) and np.allclose(H[i], h)


# --- binning -----------------------------------------------------------------

class TestBinning:
    def test_few_distinct_values(self):
        mapper = BinMapper().fit(np.array([[1.0], [3.0], [3.0], [7.0]]))
        assert mapper.n_bins_[0] == 3
        assert mapper.boundaries_[0].tolist() == [2.0, 5.0]

    def test_symptom_levels_get_pure_bins(self):
        col = np.arange(11.0).repeat(5)[:, None]
        binned = bin_features(col).binned
        assert np.array_equal(binned[:, 0], col[:, 0].astype(np.uint8))

    def test_many_values_capped(self, rng):
        data = bin_features(rng.exponential(100.0, (5000, 1)))
        bounds = data.mapper.boundaries_[0]
        assert data.n_bins[0] <= 255
        assert np.all(np.diff(bounds) > 0)
        assert data.binned.flags.f_contiguous

    def test_out_of_range_values_clamp(self):
        mapper = BinMapper().fit(np.array([[0.0], [1.0], [2.0]]))
        assert mapper.transform(np.array([[-50.0], [50.0]]))[:, 0].tolist() == [0, 2]

    def test_unseen_category_gets_trailing_bin(self):
        mapper = BinMapper(categorical_features=[0]).fit(np.array([[0.0], [2.0]]))
        assert mapper.transform(np.array([[2.0], [1.0]]))[:, 0].tolist() == [1, 2]

    def test_deterministic(self, rng):
        X = rng.normal(size=(300, 4))
        assert np.array_equal(bin_features(X).binned, bin_features(X).binned)

    def test_too_many_categories(self):
        with pytest.raises(ValueError, match="categories"):
            BinMapper(categorical_features=[0]).fit(np.arange(64.0)[:, None])


# --- split finding -----------------------------------------------------------

class TestSplit:
    def _params(self, **kw):
        return GbdtParams(**{"min_samples_per_leaf": 1, **kw})

    def test_no_signal(self):
        data = bin_features(np.arange(10.0)[:, None])
        samples = np.arange(10)
        assert find_best_split(samples, np.zeros(10), np.ones(10), data, self._params()) is None
        # equal non-zero gradients give gain exactly 0 without regularisation
        g, h = np.full(10, 0.5), np.full(10, 0.25)
        assert find_best_split(samples, g, h, data, self._params(l2_lambda=0.0)) is None

    def test_separable_threshold(self):
        x = np.arange(12.0)[:, None]
        g = np.where(x[:, 0] < 5, -1.0, 1.0)
        f, t, mask, _ = find_best_split(np.arange(12), g, np.ones(12), bin_features(x), self._params())
        assert (f, t, mask) == (0, 4, 0)

    def test_min_leaf_enforced(self):
        x = np.arange(10.0)[:, None]
        g = np.where(np.arange(10) == 0, -5.0, 0.5)
        split = find_best_split(np.arange(10), g, np.ones(10), bin_features(x), self._params(min_samples_per_leaf=3))
        assert split[1] == 2

    def test_matches_exhaustive_search(self, rng):
        for _ in range(100):
            X, g, h = random_instance(rng)
            data = bin_features(X)
            l2 = float(rng.choice([0.0, 1.0]))
            min_leaf = int(rng.integers(1, 4))
            got = find_best_split(np.arange(20), g, h, data, self._params(l2_lambda=l2, min_samples_per_leaf=min_leaf))
            want = brute_split(data.binned, data.n_bins, np.arange(20), g, h, l2, min_leaf)
            if want is None:
                assert got is None
            else:
                assert (got[0], got[1], got[3]) == want

    def test_matches_exhaustive_search_on_node_subsets(self, rng):
        # subsets leave some bins empty inside the node
        for _ in range(100):
            X, g, h = random_instance(rng, n=40, levels=10)
            data = bin_features(X)
            samples = np.sort(rng.choice(40, 20, replace=False))
            got = find_best_split(samples, g, h, data, self._params())
            want = brute_split(data.binned, data.n_bins, samples, g, h, 1.0, 1)
            assert (None if got is None else (got[0], got[1], got[3])) == want

    def test_categorical_prefix_is_optimal_without_regularisation(self, rng):
        for _ in range(100):
            codes = rng.integers(0, 6, 20).astype(float)
            if len(np.unique(codes)) < 2:
                continue
            g = dyadic(rng, 20)
            h = rng.integers(1, 9, 20) / 8.0
            data = bin_features(codes[:, None], categorical_features=[0])
            got = find_best_split(np.arange(20), g, h, data, self._params(l2_lambda=0.0))
            best = best_subset_gain(codes, g, h, 0.0)
            if best > 0:
                assert got[3] == best
            else:
                assert got is None


# --- tree growth -------------------------------------------------------------

class TestGrowth:
    def test_single_leaf(self, rng):
        X, g, h = random_instance(rng)
        tree, leaf_of, _ = grow_tree_leafwise(bin_features(X), g, h, GbdtParams(max_leaves=1, min_samples_per_leaf=1))
        assert tree.n_nodes == 1
        assert tree.value[0] == -g.sum() / (h.sum() + 1.0)
        assert np.all(leaf_of == 0)

    def test_depth_one_is_a_stump(self, rng):
        X, g, h = random_instance(rng, n=200)
        tree, _, _ = grow_tree_leafwise(bin_features(X), g, h, GbdtParams(max_depth=1, min_samples_per_leaf=1))
        assert tree.n_leaves <= 2 and tree.max_leaf_depth <= 1

    def test_hand_traced_best_first_order(self):
        # x = 0..7, unit hessians, no regularisation. Gains:
        #   root      x<=3  4.5
        #   {0..3}    x<=1  12.25
        #   {4..7}    x<=4  18.75
        #   {5,6,7}   x<=5  13.5
        # Best-first takes {4..7} and then its child {5,6,7} (13.5 > 12.25);
        # a level-wise grower would have split {0..3} second.
        g = np.array([-1.0, 0, 2, 4, -4, 4, 0, -1])
        params = GbdtParams(max_depth=10, max_leaves=4, min_samples_per_leaf=1, l2_lambda=0.0)
        tree, _, _ = grow_tree_leafwise(bin_features(np.arange(8.0)[:, None]), g, np.ones(8), params)
        assert tree.split_order.tolist() == [0, 2, 4]
        assert tree.threshold[[0, 2, 4]].tolist() == [3, 4, 5]
        assert tree.gain[[0, 2, 4]].tolist() == [4.5, 18.75, 13.5]
        assert tree.n_leaves == 4

    def test_matches_naive_grower(self, rng):
        for _ in range(60):
            n = int(rng.integers(20, 80))
            X, g, h = random_instance(rng, n=n, levels=int(rng.integers(2, 12)))
            data = bin_features(X)
            params = GbdtParams(
                max_depth=int(rng.integers(1, 6)), max_leaves=int(rng.integers(2, 12)),
                min_samples_per_leaf=int(rng.integers(1, 6)), l2_lambda=float(rng.choice([0.0, 0.5, 1.0])),
            )
            tree, leaf_of, _ = grow_tree_leafwise(data, g, h, params)
            nodes, order = naive_grow(data.binned, data.n_bins, g, h, params.max_depth, params.max_leaves,
                                      params.min_samples_per_leaf, params.l2_lambda)
            assert tree.n_nodes == len(nodes)
            assert tree.split_order.tolist() == order
            for i, nd in enumerate(nodes):
                if "left" in nd:
                    assert (tree.feature[i], tree.threshold[i], tree.left[i], tree.right[i]) == (
                        nd["feature"], nd["threshold"], nd["left"], nd["right"])
                    assert tree.gain[i] == nd["gain"]
                else:
                    assert tree.left[i] == -1
                    assert tree.value[i] == nd["value"]
                    assert sorted(np.flatnonzero(leaf_of == i)) == sorted(nd["samples"])

    def test_structural_invariants(self, default_split):
        X, y = variant_data(default_split, n=3000)
        model = LeafwiseGBDTClassifier(max_depth=4, num_rounds=5, categorical_features=[0, 2], classes=CLASSES).fit(X, y)
        leaves = model.apply(X)
        for t, tree in enumerate(model.trees_):
            assert tree.max_leaf_depth <= 4 and tree.n_leaves <= 31
            inner = ~tree.is_leaf
            assert np.all(tree.gain[inner] > 0)
            assert np.all(tree.cover[tree.left[inner]] + tree.cover[tree.right[inner]] == tree.cover[inner])
            assert tree.cover[0] == len(X)
            counts = np.bincount(leaves[:, t], minlength=tree.n_nodes)
            assert np.array_equal(counts[tree.is_leaf], tree.cover[tree.is_leaf])


# --- boosting ----------------------------------------------------------------

class TestTraining:
    def test_constant_labels(self, rng):
        X = rng.normal(size=(50, 3))
        with pytest.warns(UserWarning, match="single class"):
            model = LeafwiseGBDTClassifier(num_rounds=5).fit(X, np.full(50, 7))
        assert np.all(model.predict(rng.normal(size=(20, 3))) == 7)
        fixed = LeafwiseGBDTClassifier(num_rounds=5, classes=CLASSES)
        with pytest.warns(UserWarning):
            fixed.fit(X, np.full(50, 7))
        assert np.all(fixed.predict(X) == 7)

    def test_separable_toy_reaches_zero_training_error(self, rng):
        X = rng.normal(size=(200, 2))
        y = (X[:, 0] > 0.1).astype(int)
        model = LeafwiseGBDTClassifier(num_rounds=50).fit(X, y)
        assert (model.predict(X) == y).mean() == 1.0

    def test_training_loss_non_increasing(self, default_split):
        X, y = variant_data(default_split, n=4000)
        model = LeafwiseGBDTClassifier(num_rounds=40, categorical_features=[0, 2], classes=CLASSES,
                                       check_loss=True).fit(X, y)
        assert len(model.train_loss_) == 41
        assert np.all(np.diff(model.train_loss_) <= 1e-12)

    def test_deterministic(self, default_split):
        X, y = variant_data(default_split, n=2000)
        a = LeafwiseGBDTClassifier(num_rounds=5, categorical_features=[0, 2]).fit(X, y)
        b = LeafwiseGBDTClassifier(num_rounds=5, categorical_features=[0, 2]).fit(X, y)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_base_scores_are_log_priors(self, rng):
        y = np.array([0] * 6 + [1] * 3 + [2])
        model = LeafwiseGBDTClassifier(num_rounds=0).fit(rng.normal(size=(10, 2)), y)
        assert np.allclose(model.base_scores_, np.log([0.6, 0.3, 0.1]))
        assert np.allclose(model.decision_function(rng.normal(size=(4, 2))), np.log([0.6, 0.3, 0.1]))

    def test_absent_class_gets_floor_prior(self, rng):
        model = LeafwiseGBDTClassifier(num_rounds=2, classes=(0, 1, 2)).fit(rng.normal(size=(40, 2)), np.arange(40) % 2)
        assert model.base_scores_[2] == pytest.approx(np.log(1e-6))
        assert len(model.trees_) == 6

    def test_unknown_label(self, rng):
        with pytest.raises(ValueError, match="not in classes"):
            LeafwiseGBDTClassifier(classes=(0, 1)).fit(rng.normal(size=(5, 2)), [0, 1, 2, 0, 1])

    def test_invalid_params(self, rng):
        with pytest.raises(ValueError):
            LeafwiseGBDTClassifier(max_depth=0).fit(rng.normal(size=(5, 2)), [0, 1, 0, 1, 0])

    def test_sklearn_api(self):
        est = LeafwiseGBDTClassifier(max_depth=3, learning_rate=0.2)
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert twin.set_params(max_depth=9).max_depth == 9


@pytest.fixture(scope="module")
def model_and_data(default_split):
    X, y = variant_data(default_split, n=5000)
    model = LeafwiseGBDTClassifier(max_depth=5, num_rounds=15, categorical_features=[0, 2],
                                   classes=CLASSES).fit(X, y)
    return model, X


class TestPrediction:
    def _random_inputs(self, rng, X, n):
        idx = rng.integers(0, len(X), (n, X.shape[1]))
        out = X[idx, np.arange(X.shape[1])]
        # push some continuous values outside the training range
        out[: n // 10, 3] = rng.uniform(-100, 20000, n // 10)
        return out

    def test_matches_path_walk(self, model_and_data, rng):
        model, X = model_and_data
        Z = self._random_inputs(rng, X, 100)
        assert np.array_equal(model.decision_function(Z), walk_scores(model, Z))

    def test_probabilities_normalised(self, model_and_data, rng):
        model, X = model_and_data
        P = model.predict_proba(self._random_inputs(rng, X, 200))
        assert np.all(np.abs(P.sum(axis=1) - 1) < 1e-12)

    def test_predict_is_score_argmax(self, model_and_data, rng):
        model, X = model_and_data
        Z = self._random_inputs(rng, X, 500)
        assert np.array_equal(model.predict(Z), np.argmax(model.decision_function(Z), axis=1))
        assert predict_class(model, Z[0]) == model.predict(Z[:1])[0]
        assert np.array_equal(predict_scores(model, Z[0]), model.decision_function(Z[:1])[0])

    def test_ties_go_to_lowest_class(self, rng):
        model = LeafwiseGBDTClassifier(num_rounds=0).fit(rng.normal(size=(6, 2)), [0, 1, 2, 0, 1, 2])
        assert model.predict(rng.normal(size=(3, 2))).tolist() == [0, 0, 0]
        model.base_scores_ = model.base_scores_ + np.array([0.0, 10.0, 0.0])
        assert model.predict(rng.normal(size=(3, 2))).tolist() == [1, 1, 1]

    def test_schema_mismatch(self, model_and_data):
        model, X = model_and_data
        with pytest.raises(ValueError, match="features"):
            model.predict(X[:, :3])

    def test_serialization_round_trip(self, model_and_data, rng, tmp_path):
        model, X = model_and_data
        path = tmp_path / "m.json"
        model.save(path, meta={"variant": "LP2"})
        doc = json.loads(path.read_text())
        assert doc["format_version"] == 1
        back = LeafwiseGBDTClassifier.load(path)
        Z = self._random_inputs(rng, X, 1000)
        assert np.array_equal(back.decision_function(Z), model.decision_function(Z))
        assert back.meta_ == {"variant": "LP2"}
        doc["format_version"] = 99
        with pytest.raises(ValueError, match="format_version"):
            LeafwiseGBDTClassifier.from_dict(doc)

    def test_unseen_category_is_routed(self, model_and_data):
        model, X = model_and_data
        row = X[:1].copy()
        row[0, 2] = 42.0
        assert model.predict(row).shape == (1,)


def test_depth_path_equals_independent_fits(default_split):
    X, y = variant_data(default_split, n=3000)
    base = LeafwiseGBDTClassifier(num_rounds=6, max_leaves=15, categorical_features=[0, 2], classes=CLASSES)
    depths = [1, 2, 3, 5, 8, 12]
    path = fit_depth_path(base, X, y, depths)
    for d in depths:
        fresh = clone(base).set_params(max_depth=d).fit(X, y)
        assert path[d].max_depth == d
        assert json.dumps(path[d].to_dict()) == json.dumps(fresh.to_dict())
