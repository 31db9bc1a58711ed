import numpy as np
import pytest

from paxrisk.interpret import (ImportanceTable, InterpretError, partial_dependence,
                               pd_logodds, pd_logodds_brute, pdp_to_csv,
                               relative_influence, importance_to_csv)
from paxrisk.schema import ColumnInfo, FeatureStage, encode_design
from paxrisk.trees import GbmModel, fit_gbm
from paxrisk.trees import _intercept_only_gbm


def random_model(rng, p=None, n=50):
    p = p or int(rng.integers(2, 6))
    X = np.column_stack([
        rng.integers(0, 8, n).astype(float) if j % 2 == 0
        else (rng.random(n) < 0.4).astype(float)
        for j in range(p)])
    y = (rng.random(n) < 0.3).astype(float)
    y[0], y[1] = 1.0, 0.0
    depth = int(rng.integers(1, 4))
    model, _ = fit_gbm(X, y, nu=0.2, n_trees=int(rng.integers(1, 11)),
                       interaction_depth=depth, min_node_weight=2.0)
    return model, X


class TestPdTraversal:
    def test_matches_brute_force_on_random_models(self):
        rng = np.random.default_rng(101)
        for _ in range(30):
            model, X = random_model(rng)
            p = X.shape[1]
            cols = [int(rng.integers(0, p))]
            vals = [float(rng.integers(0, 8))]
            a = pd_logodds(model, X, cols, vals)
            b = pd_logodds_brute(model, X, cols, vals)
            assert abs(a - b) < 1e-10

    def test_two_column_assignments(self):
        rng = np.random.default_rng(55)
        for _ in range(10):
            model, X = random_model(rng, p=4)
            a = pd_logodds(model, X, [0, 2], [3.0, 1.0])
            b = pd_logodds_brute(model, X, [0, 2], [3.0, 1.0])
            assert abs(a - b) < 1e-10

    def test_depth_one_target_only_model_returns_leaf_values(self):
        # A stump on the target column: PD at a grid point is exactly the
        # leaf value on that side of the threshold.
        x = np.r_[np.zeros(20), np.ones(20)]
        X = x[:, None]
        y = np.r_[np.zeros(20), np.ones(20)]
        model, _ = fit_gbm(X, y, nu=1.0, n_trees=1, interaction_depth=1,
                           min_node_weight=1.0)
        tree = model.trees[0]
        left_leaf = model.f0 + tree.value[tree.left[0]]
        right_leaf = model.f0 + tree.value[tree.right[0]]
        assert pd_logodds(model, X, [0], [0.0]) == pytest.approx(left_leaf, 1e-12)
        assert pd_logodds(model, X, [0], [1.0]) == pytest.approx(right_leaf, 1e-12)

    def test_unsplit_trait_gives_constant_pd(self):
        # Column 1 never informs the fit; PD over it is flat.
        rng = np.random.default_rng(7)
        x0 = rng.integers(0, 10, 80).astype(float)
        X = np.column_stack([x0, (rng.random(80) < 0.5).astype(float)])
        y = (x0 > 5).astype(float)
        model, _ = fit_gbm(X, y, nu=0.3, n_trees=10, interaction_depth=1)
        assert pd_logodds(model, X, [1], [0.0]) == pytest.approx(
            pd_logodds(model, X, [1], [1.0]), abs=1e-12)


class TestRelativeInfluence:
    def _meta(self, names):
        out = []
        for name in names:
            if name == "age":
                out.append(ColumnInfo(source="age", kind="linear"))
            else:
                out.append(ColumnInfo(source=name.split("=")[0], kind="dummy",
                                      level=name.split("=")[1]))
        return tuple(out)

    def test_single_variable_model_concentrates_everything(self):
        rng = np.random.default_rng(9)
        x = rng.integers(0, 10, 300).astype(float)
        X = np.column_stack([x, np.zeros(300)])
        y = (rng.random(300) < 1 / (1 + np.exp(-(x - 5)))).astype(float)
        model, _ = fit_gbm(X, y, nu=0.1, n_trees=30, interaction_depth=2)
        meta = self._meta(["age", "occ=a"])
        table = relative_influence(model, meta)
        assert table.values["age"] == pytest.approx(100.0, abs=1e-9)
        assert table.values["occ"] == 0.0

    def test_normalization_of_known_gains(self):
        # Fabricated gains (2, 3, 5) on three sources normalize to (20, 30, 50).
        model = GbmModel(
            offsets=np.array([0, 5]),
            feature=np.array([0, 1, -1, -1, 2], dtype=np.int32),
            threshold=np.array([0.5, 0.5, 0.0, 0.0, 0.5]),
            left=np.array([1, 2, -1, -1, 3], dtype=np.int32),
            right=np.array([4, 3, -1, -1, 2], dtype=np.int32),
            value=np.zeros(5), weight=np.ones(5),
            gain=np.array([2.0, 3.0, 0.0, 0.0, 5.0]),
            f0=0.0, nu=0.1, n_trees=1, interaction_depth=2, seed=0)
        meta = self._meta(["age", "occ=a", "visit=b"])
        table = relative_influence(model, meta)
        assert table.values == {"age": 20.0, "occ": 30.0, "visit": 50.0}
        assert table.total() == pytest.approx(100.0, abs=1e-9)

    def test_sums_to_100(self, small_data):
        ds, _ = small_data
        design = encode_design(ds, FeatureStage.STAGE12, K=6)
        idx = design.nonspline_indices()
        X = design.values[:, idx]
        meta = tuple(design.column_meta[i] for i in idx)
        model, _ = fit_gbm(X, ds.labels.astype(float), nu=0.05, n_trees=150,
                           interaction_depth=2)
        table = relative_influence(model, meta)
        assert table.total() == pytest.approx(100.0, abs=1e-9)
        assert all(v >= 0 for v in table.values.values())

    def test_zero_influence_flagged(self):
        y = np.r_[np.ones(20), np.zeros(80)]
        w = np.ones(100)
        model, _ = _intercept_only_gbm(y, w, 0.1, 2, 0)
        meta = self._meta(["age", "occ=a"])
        table = relative_influence(model, meta)
        assert table.zero_influence
        assert all(v == 0.0 for v in table.values.values())

    def test_invariant_to_dummy_column_order(self, small_data):
        ds, _ = small_data
        design = encode_design(ds, FeatureStage.STAGE12, K=6)
        idx = design.nonspline_indices()
        X = design.values[:, idx]
        meta = tuple(design.column_meta[i] for i in idx)
        perm = np.random.default_rng(0).permutation(len(idx))
        model_a, _ = fit_gbm(X, ds.labels.astype(float), nu=0.05, n_trees=80,
                             interaction_depth=2)
        model_b, _ = fit_gbm(X[:, perm], ds.labels.astype(float), nu=0.05,
                             n_trees=80, interaction_depth=2)
        table_a = relative_influence(model_a, meta)
        table_b = relative_influence(model_b, tuple(meta[i] for i in perm))
        for trait, value in table_a.values.items():
            assert table_b.values[trait] == pytest.approx(value, abs=1e-6)


class TestPdpGrids:
    @pytest.fixture(scope="class")
    def fitted(self, small_data):
        ds, _ = small_data
        design = encode_design(ds, FeatureStage.STAGE12, K=6)
        idx = design.nonspline_indices()
        X = design.values[:, idx]
        meta = tuple(design.column_meta[i] for i in idx)
        model, _ = fit_gbm(X, ds.labels.astype(float), nu=0.05, n_trees=200,
                           interaction_depth=2)
        return model, meta, X, ds

    def test_age_grid_covers_observed_integer_ages(self, fitted):
        model, meta, X, ds = fitted
        grid = partial_dependence(model, meta, "age", X, dataset=ds)
        assert grid.points == tuple(int(a) for a in np.unique(ds.age))
        assert grid.counts.sum() == ds.n
        assert (grid.probability > 0).all() and (grid.probability < 1).all()

    def test_categorical_grid_levels_and_counts(self, fitted):
        model, meta, X, ds = fitted
        grid = partial_dependence(model, meta, "occupation", X, dataset=ds)
        assert set(grid.points) == set(np.unique(ds.occupation).astype(str))
        assert grid.counts.sum() == ds.n

    def test_interaction_panel_one_series_per_citizenship(self, fitted):
        model, meta, X, ds = fitted
        grid = partial_dependence(model, meta, "occupation", X,
                                  second_trait="citizenship_group", dataset=ds)
        n_groups = len(set(ds.citizenship_group))
        assert len(grid.second_points) == n_groups
        assert grid.logodds.shape == (len(grid.points), n_groups)

    def test_unknown_trait_raises(self, fitted):
        model, meta, X, ds = fitted
        with pytest.raises(InterpretError):
            partial_dependence(model, meta, "shoe_size", X, dataset=ds)

    def test_csv_round_trip_rows(self, fitted, tmp_path):
        model, meta, X, ds = fitted
        grid = partial_dependence(model, meta, "age", X, dataset=ds)
        path = tmp_path / "pd_age.csv"
        pdp_to_csv(grid, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + len(grid.points)
        table = relative_influence(model, meta)
        ipath = tmp_path / "importance.csv"
        importance_to_csv(table, ipath)
        rows = ipath.read_text().splitlines()[1:]
        total = sum(float(r.split(",")[1]) for r in rows)
        assert total == pytest.approx(100.0, abs=1e-9)


class TestPlantedInteraction:
    def test_interaction_flips_occupation_ordering_in_group_y(self, collapsed_data):
        # Generator truth table: trades (+0.8) outranks labourer (+0.7)
        # everywhere except group_y, where labourer gains +1.1. The fitted
        # interaction panel must reproduce both the ordering flip and a
        # clearly larger labourer lift inside group_y.
        ds, truth = collapsed_data
        design = encode_design(ds, FeatureStage.STAGE12, K=10)
        idx = design.nonspline_indices()
        X = design.values[:, idx]
        meta = tuple(design.column_meta[i] for i in idx)
        model, _ = fit_gbm(X, ds.labels.astype(float), nu=0.1, n_trees=1000,
                           interaction_depth=3)
        grid = partial_dependence(model, meta, "occupation", X,
                                  second_trait="citizenship_group", dataset=ds)
        occ = list(grid.points)
        cit = list(grid.second_points)
        lab, trades, prof = (occ.index("labourer"), occ.index("trades"),
                             occ.index("professional"))
        gy = cit.index("group_y")
        others = [k for k, c in enumerate(cit) if c in ("group_x", "group_z")]
        # ordering flip: labourer above trades only inside group_y
        assert grid.logodds[lab, gy] > grid.logodds[trades, gy]
        for k in others:
            assert grid.logodds[lab, k] < grid.logodds[trades, k]
        # and the labourer-vs-professional lift is larger inside group_y
        lift_y = grid.logodds[lab, gy] - grid.logodds[prof, gy]
        lift_other = np.mean([grid.logodds[lab, k] - grid.logodds[prof, k]
                              for k in others])
        assert lift_y > lift_other + 0.15
