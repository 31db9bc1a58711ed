import json

import numpy as np
import pytest

from paxrisk.metrics import auc
from paxrisk.trees import (ForestModel, GbmModel, Tree, TreeFitError, fit_gbm,
                           fit_random_forest, fit_tree, gbm_custom_select,
                           load_model, raw_influence, save_model)


def stump_oracle(x, targets, weights):
    """Exhaustive scan over all split points of a single column."""
    best = (0.0, None)
    values = np.unique(x)
    S = float((weights * targets).sum())
    W = float(weights.sum())
    for i in range(len(values) - 1):
        thr = 0.5 * (values[i] + values[i + 1])
        left = x <= thr
        wl, wr = weights[left].sum(), weights[~left].sum()
        sl = (weights * targets)[left].sum()
        sr = S - sl
        gain = sl * sl / wl + sr * sr / wr - S * S / W
        if gain > best[0]:
            best = (gain, thr)
    return best[1]


class TestFitTree:
    def test_constant_targets_single_leaf(self):
        X = np.arange(20, dtype=float)[:, None]
        tree = fit_tree(X, np.full(20, 3.5), max_depth=4)
        assert tree.n_nodes == 1
        assert tree.value[0] == 3.5

    def test_stump_matches_exhaustive_scan(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.integers(0, 15, 60).astype(float)
            t = rng.normal(size=60) + (x > 7) * 2.0
            w = rng.integers(1, 4, 60).astype(float)
            tree = fit_tree(x[:, None], t, w, max_depth=1)
            assert tree.feature[0] == 0
            assert tree.threshold[0] == stump_oracle(x, t, w)

    def test_min_node_weight_blocks_split(self):
        X = np.arange(10, dtype=float)[:, None]
        t = (X[:, 0] > 5).astype(float)
        tree = fit_tree(X, t, max_depth=3, min_node_weight=100.0)
        assert tree.n_nodes == 1

    def test_classification_majority_leaves(self):
        x = np.r_[np.zeros(30), np.ones(30)]
        y = np.r_[np.zeros(30), np.ones(30)]
        tree = fit_tree(x[:, None], y, mode="classification", max_depth=2)
        preds = tree.predict(x[:, None])
        assert (preds == y).all()

    def test_input_validation(self):
        X = np.ones((5, 2))
        with pytest.raises(TreeFitError):
            fit_tree(X, np.ones(4))
        with pytest.raises(TreeFitError):
            fit_tree(X, np.ones(5), np.zeros(5))
        with pytest.raises(TreeFitError):
            fit_tree(X, np.ones(5), mtry=3)


def separable_blocks(n_per=30, seed=0):
    """Every distinct x value appears many times with a deterministic label,
    so any bootstrap resample still contains all x values."""
    rng = np.random.default_rng(seed)
    x = np.repeat(np.arange(10, dtype=float), n_per)
    y = (x >= 5).astype(float)
    jitter = rng.permutation(len(x))
    return np.column_stack([x, rng.random(len(x))])[jitter], y[jitter]


class TestRandomForest:
    def test_memorizes_separable_data(self):
        X, y = separable_blocks()
        forest = fit_random_forest(X, y, n_trees=1, mtry=1, seed=3)
        assert ((forest.predict_proba(X) > 0.5) == y).mean() == 1.0

    def test_vote_fractions_on_grid(self):
        X, y = separable_blocks(seed=5)
        forest = fit_random_forest(X, y, n_trees=7, mtry=2, seed=1)
        probs = forest.predict_proba(X[:50])
        grid = np.arange(8) / 7.0
        assert np.isin(probs, grid).all()

    def test_probability_matches_manual_tree_replay(self):
        X, y = separable_blocks(seed=9)
        forest = fit_random_forest(X, y, n_trees=9, mtry=2, seed=2)
        trees = forest.trees
        for row in X[:20]:
            votes = sum(t.value[t.leaf_for(row)] for t in trees)
            assert forest.predict_proba(row[None, :])[0] == pytest.approx(
                votes / 9.0, abs=1e-12)

    def test_vote_invariant_to_tree_order(self):
        X, y = separable_blocks(seed=13)
        forest = fit_random_forest(X, y, n_trees=11, mtry=2, seed=4)
        trees = forest.trees
        rng = np.random.default_rng(0)
        shuffled = [trees[i] for i in rng.permutation(len(trees))]
        for row in X[:10]:
            a = np.mean([t.value[t.leaf_for(row)] for t in trees])
            b = np.mean([t.value[t.leaf_for(row)] for t in shuffled])
            assert a == b

    def test_mtry_validation(self):
        X, y = separable_blocks()
        with pytest.raises(TreeFitError, match="mtry"):
            fit_random_forest(X, y, n_trees=2, mtry=5)

    def test_deterministic_and_serializable(self, tmp_path):
        X, y = separable_blocks(seed=21)
        a = fit_random_forest(X, y, n_trees=20, mtry=2, seed=8)
        b = fit_random_forest(X, y, n_trees=20, mtry=2, seed=8)
        assert np.array_equal(a.threshold, b.threshold)
        assert np.array_equal(a.value, b.value)
        path = tmp_path / "forest.json"
        save_model(a, path)
        loaded = load_model(path)
        assert isinstance(loaded, ForestModel)
        assert np.array_equal(loaded.threshold, a.threshold)
        assert np.array_equal(loaded.predict_proba(X[:5]), a.predict_proba(X[:5]))


def toy_gbm_data(seed=0, n=200):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.integers(0, 12, n).astype(float),
                         (rng.random(n) < 0.4).astype(float)])
    logit = -2.0 + 0.25 * X[:, 0] + 0.8 * X[:, 1]
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(float)
    if y.sum() in (0, n):
        y[0], y[1] = 0.0, 1.0
    return X, y


class TestGbm:
    def test_zero_trees_predicts_base_rate(self):
        X, y = toy_gbm_data()
        model, _ = fit_gbm(X, y, nu=0.1, n_trees=0)
        expected = y.mean()
        assert np.allclose(model.predict_proba(X), expected, atol=1e-12)

    def test_deviance_trace_non_increasing(self):
        X, y = toy_gbm_data(seed=3)
        for nu in (0.05, 0.1):
            model, _ = fit_gbm(X, y, nu=nu, n_trees=150, interaction_depth=2,
                               trace_deviance=True)
            diffs = np.diff(model.deviance_trace)
            assert (diffs <= 1e-12).all()

    def test_manual_accumulation_oracle(self):
        # 20 records, 3 stumps: prediction equals F0 + nu * sum of leaf values
        rng = np.random.default_rng(5)
        X = rng.integers(0, 6, (20, 2)).astype(float)
        y = (rng.random(20) < 0.4).astype(float)
        y[0], y[1] = 0.0, 1.0
        model, _ = fit_gbm(X, y, nu=0.1, n_trees=3, interaction_depth=1,
                           min_node_weight=1.0)
        trees = model.trees
        for row in X:
            f = model.f0 + 0.1 * sum(t.value[t.leaf_for(row)] for t in trees)
            assert model.predict_logodds(row[None, :])[0] == pytest.approx(
                f, abs=1e-12)

    def test_staged_prediction_consistency(self):
        X, y = toy_gbm_data(seed=7)
        model, staged = fit_gbm(X, y, nu=0.05, n_trees=60, interaction_depth=2,
                                x_test=X[:30], checkpoints=[20, 40, 60])
        for k, ck in enumerate((20, 40, 60)):
            truncated = model.truncated(ck)
            np.testing.assert_allclose(staged[k],
                                       truncated.predict_proba(X[:30]),
                                       atol=1e-12)
        replay = model.staged_logodds(X[:30], [20, 40, 60])
        np.testing.assert_allclose(1 / (1 + np.exp(-replay)), staged, atol=1e-12)

    def test_weight_equals_replication_for_first_split(self):
        X, y = toy_gbm_data(seed=11)
        w = np.where(y == 1, 7.0, 1.0)
        weighted, _ = fit_gbm(X, y, w, nu=0.1, n_trees=1, interaction_depth=2)
        X_rep = np.concatenate([X] + [X[y == 1]] * 6)
        y_rep = np.concatenate([y] + [y[y == 1]] * 6)
        replicated, _ = fit_gbm(X_rep, y_rep, nu=0.1, n_trees=1,
                                interaction_depth=2)
        first_w = weighted.trees[0]
        first_r = replicated.trees[0]
        assert first_w.feature[0] == first_r.feature[0]
        assert first_w.threshold[0] == first_r.threshold[0]

    def test_learning_rate_validation(self):
        X, y = toy_gbm_data()
        with pytest.raises(TreeFitError):
            fit_gbm(X, y, nu=0.0, n_trees=5)
        with pytest.raises(TreeFitError):
            fit_gbm(X, y, nu=1.5, n_trees=5)

    def test_newton_leaves_clipped(self):
        X, y = toy_gbm_data(seed=19)
        model, _ = fit_gbm(X, y, nu=1.0, n_trees=40, interaction_depth=3,
                           min_node_weight=1.0)
        assert np.abs(model.value).max() <= 4.0

    def test_json_round_trip_bit_exact(self, tmp_path):
        X, y = toy_gbm_data(seed=23)
        model, _ = fit_gbm(X, y, nu=0.07, n_trees=25, interaction_depth=2)
        path = tmp_path / "gbm.json"
        save_model(model, path)
        loaded = load_model(path)
        assert isinstance(loaded, GbmModel)
        assert np.array_equal(loaded.threshold, model.threshold)
        assert np.array_equal(loaded.value, model.value)
        assert loaded.f0 == model.f0
        assert np.array_equal(loaded.predict_proba(X), model.predict_proba(X))


class TestGbmCustom:
    def make_screening_data(self, seed, n=500):
        rng = np.random.default_rng(seed)
        signal = (rng.random(n) < 0.5).astype(float)
        noise = (rng.random(n) < 0.5).astype(float)
        logit = -2.6 + 1.4 * signal
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(float)
        if y.sum() in (0, n):
            y[0], y[1] = 0.0, 1.0
        return np.column_stack([signal, noise]), y

    def test_signal_kept_noise_dropped_most_seeds(self):
        kept_signal = dropped_noise = trials = 0
        for seed in range(12):
            X, y = self.make_screening_data(seed)
            result = gbm_custom_select(X, y, ("signal", "noise"), seed=seed)
            trials += 1
            kept_signal += "signal" in result.selected
            dropped_noise += "noise" not in result.selected
        assert kept_signal >= 10
        assert dropped_noise >= 10

    def test_empty_model_fallback(self):
        rng = np.random.default_rng(4)
        X = (rng.random((300, 2)) < 0.5).astype(float)
        y = np.zeros(300)
        y[rng.choice(300, 25, replace=False)] = 1.0
        result = gbm_custom_select(X, y, ("n1", "n2"), seed=1, auc_gate=0.99)
        assert result.intercept_only
        probs = result.predict_proba(X)
        w_rate = 7 * y.sum() / (7 * y.sum() + (300 - y.sum()))
        assert np.allclose(probs, w_rate, atol=1e-12)

    def test_screen_auc_recorded_per_column(self):
        X, y = self.make_screening_data(2)
        result = gbm_custom_select(X, y, ("signal", "noise"), seed=2)
        assert set(result.screen_auc) == {"signal", "noise"}
        assert result.screen_auc["signal"] > result.screen_auc["noise"]


class TestRawInfluence:
    def test_gain_sums_per_feature(self):
        X, y = toy_gbm_data(seed=31)
        model, _ = fit_gbm(X, y, nu=0.1, n_trees=20, interaction_depth=2)
        influence = raw_influence(model, 2)
        split_mask = model.feature >= 0
        assert influence.sum() == pytest.approx(model.gain[split_mask].sum())
        assert (influence >= 0).all()
