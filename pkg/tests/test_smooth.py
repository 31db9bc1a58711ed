import dataclasses

import numpy as np
import pytest

from paxrisk.schema import DesignEncoder, FeatureStage, encode_design
from paxrisk.smooth_models import (GamFitError, NnModel, fit_gam, fit_nn,
                                   nn_objective_and_grad,
                                   penalized_loglik_and_grad, predict_gam,
                                   _irls)
from paxrisk.synth import default_study_config, generate


def finite_difference(fn, x, eps=1e-5):
    num = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        num[i] = (fn(xp) - fn(xm)) / (2 * eps)
    return num


class TestGam:
    def test_gradient_matches_finite_differences(self, small_design):
        design, y = small_design
        X_full = np.column_stack([np.ones(design.n), design.values])
        pen = np.zeros(design.p + 1)
        pen[design.spline_indices() + 1] = 2.5
        rng = np.random.default_rng(3)
        beta = rng.uniform(-0.05, 0.05, design.p + 1)
        _, grad = penalized_loglik_and_grad(beta, X_full, y, pen)
        num = finite_difference(
            lambda b: penalized_loglik_and_grad(b, X_full, y, pen)[0], beta)
        rel = np.abs(grad - num) / np.maximum(1.0, np.abs(num))
        assert rel.max() < 1e-4

    def test_large_lambda_kills_spline_block(self, small_design):
        design, y = small_design
        heavy = fit_gam(design, y, lam=1e9)
        spline_coefs = heavy.coefficients[design.spline_indices() + 1]
        assert np.abs(spline_coefs).max() < 1e-4
        # and the fit approaches the no-spline linear-logistic fit
        keep = [0] + [int(j) + 1 for j in range(design.p)
                      if j not in set(design.spline_indices().tolist())]
        X_lin = np.column_stack([np.ones(design.n), design.values])[:, keep]
        beta_lin = _irls(X_lin, y, np.zeros(X_lin.shape[1]))
        probs_lin = 1 / (1 + np.exp(-(X_lin @ beta_lin)))
        np.testing.assert_allclose(predict_gam(heavy, design), probs_lin,
                                   atol=5e-3)

    def test_zero_effect_data_recovers_base_rate(self):
        # No effects and no sparse levels: the fit should be intercept-only
        # up to sampling noise, with the intercept near logit(0.065).
        cfg = default_study_config(n=2500, seed=17)
        d = cfg.to_dict()
        d["age_effect"] = {"breaks": [], "values": [0.0]}
        d["level_effects"] = {}
        d["interaction_effects"] = []
        d["occupation_given_citizenship"] = {}
        d["level_frequencies"] = {
            "sex": {"male": 0.5, "female": 0.5},
            "citizenship_group": {"group_x": 0.4, "group_y": 0.35,
                                  "group_z": 0.25},
            "declaration_status": {"0": 0.65, "1": 0.35},
            "occupation": {"professional": 0.4, "clerical": 0.35,
                           "trades": 0.25},
            "visit_reason": {"holiday": 0.5, "visiting_family": 0.5},
        }
        from paxrisk.synth import GeneratorConfig
        ds, _ = generate(GeneratorConfig.from_dict(d))
        design = encode_design(ds, FeatureStage.STAGE12, K=8)
        model = fit_gam(design, ds.labels.astype(float), lam="auto", seed=5)
        target = np.log(0.065 / 0.935)
        assert abs(model.coefficients[0] - target) < 0.15 + 0.3
        dummy_cols = [j + 1 for j, c in enumerate(design.column_meta)
                      if c.kind == "dummy"]
        assert np.abs(model.coefficients[dummy_cols]).max() < 0.6

    def test_training_predictions_match_fitted(self, small_design):
        design, y = small_design
        model = fit_gam(design, y, lam=1.0)
        np.testing.assert_allclose(predict_gam(model, design),
                                   model.fitted_probs, atol=1e-10)

    def test_hand_computed_linear_predictor(self, small_design):
        design, y = small_design
        model = fit_gam(design, y, lam=10.0)
        row = design.values[7]
        by_hand = model.coefficients[0] + float(
            np.dot(row, model.coefficients[1:]))
        assert model.linear_predictor(design.values[7:8])[0] == pytest.approx(
            by_hand, abs=1e-12)

    def test_column_mismatch_raises(self, small_design):
        design, y = small_design
        model = fit_gam(design, y, lam=1.0)
        with pytest.raises(ValueError, match="column mismatch"):
            model.linear_predictor(design.values[:, :4])

    def test_predictions_strictly_inside_unit_interval(self, small_design):
        design, y = small_design
        model = fit_gam(design, y, lam="auto", seed=2)
        probs = predict_gam(model, design)
        assert (probs > 0).all() and (probs < 1).all()

    def test_reference_level_invariance(self, small_data):
        # Swapping a categorical's reference level must not change the
        # fitted probabilities (the dummies are unpenalized).
        ds, _ = small_data
        y = ds.labels.astype(float)
        enc = DesignEncoder.fit(ds, FeatureStage.STAGE12, K=6)
        occ = enc.encodings["occupation"]
        other_ref = occ.dummy_levels[0]
        swapped = dataclasses.replace(
            occ, reference=other_ref,
            dummy_levels=tuple(l for l in occ.levels if l != other_ref))
        enc2 = DesignEncoder(stage=enc.stage, spline_meta=enc.spline_meta,
                             encodings={**enc.encodings, "occupation": swapped})
        lam = 5.0
        m1 = fit_gam(enc.encode(ds), y, lam=lam)
        m2 = fit_gam(enc2.encode(ds), y, lam=lam)
        np.testing.assert_allclose(predict_gam(m1, enc.encode(ds)),
                                   predict_gam(m2, enc2.encode(ds)), atol=1e-6)

    def test_separation_handled_by_iteration_cap_and_ridge_floor(self):
        # Completely separable labels: the iteration-capped fit must stay
        # finite, and a ridge floor gives a well-conditioned alternative.
        ds, _ = generate(default_study_config(n=120, seed=31))
        design = encode_design(ds, FeatureStage.STAGE1, K=4)
        y = (design.values[:, 0] > np.median(design.values[:, 0])).astype(float)
        capped = fit_gam(design, y, lam=1e-4)
        assert np.isfinite(capped.coefficients).all()
        floored = fit_gam(design, y, lam=1e-4, ridge_floor=1e-2)
        assert np.isfinite(floored.coefficients).all()
        assert np.abs(floored.coefficients).max() < np.abs(capped.coefficients).max()


class TestNn:
    def test_gradient_matches_finite_differences(self, small_design):
        design, y = small_design
        X = design.values[:, design.nonspline_indices()][:150]
        ys = y[:150]
        Xs = (X - X.mean(0)) / np.where(X.std(0) == 0, 1.0, X.std(0))
        hidden = 3
        n_par = X.shape[1] * hidden + 2 * hidden + 1
        rng = np.random.default_rng(5)
        theta = rng.uniform(-0.5, 0.5, n_par)
        _, grad = nn_objective_and_grad(theta, Xs, ys, 0.05, hidden)
        num = finite_difference(
            lambda t: nn_objective_and_grad(t, Xs, ys, 0.05, hidden)[0], theta)
        rel = np.abs(grad - num) / np.maximum(1.0, np.abs(num))
        assert rel.max() < 1e-4

    def test_separable_data_low_log_loss(self):
        rng = np.random.default_rng(2)
        n = 200
        X = rng.normal(size=(n, 2))
        y = (X[:, 0] + X[:, 1] > 0).astype(float)
        # independent oracle: a plain logistic fit reaches < 0.1 here
        X_full = np.column_stack([np.ones(n), X])
        beta = _irls(X_full, y, np.full(3, 1e-3))
        z = X_full @ beta
        oracle_ll = float(np.mean(np.log1p(np.exp(-np.abs(z))) +
                                  np.maximum(z, 0) - y * z))
        assert oracle_ll < 0.1
        model = fit_nn(X, y, hidden=1, decay=0.0, seed=1, restarts=2,
                       max_iter=1500)
        probs = np.clip(model.predict_proba(X), 1e-12, 1 - 1e-12)
        ll = float(-np.mean(y * np.log(probs) + (1 - y) * np.log1p(-probs)))
        assert ll < 0.1

    def test_huge_decay_shrinks_to_base_rate(self, small_design):
        design, y = small_design
        X = design.values[:, design.nonspline_indices()]
        model = fit_nn(X, y, hidden=3, decay=1e4, seed=0, restarts=1,
                       max_iter=400)
        probs = model.predict_proba(X)
        assert np.abs(probs - y.mean()).max() < 0.02

    def test_reproducible_given_seed(self, small_design):
        design, y = small_design
        X = design.values[:, design.nonspline_indices()][:300]
        a = fit_nn(X, y[:300], hidden=2, decay=0.01, seed=42, restarts=2,
                   max_iter=150)
        b = fit_nn(X, y[:300], hidden=2, decay=0.01, seed=42, restarts=2,
                   max_iter=150)
        assert np.array_equal(a.w1, b.w1)
        assert np.array_equal(a.w2, b.w2)
        assert a.b2 == b.b2

    def test_predictions_strictly_inside_unit_interval(self, small_design):
        design, y = small_design
        X = design.values[:, design.nonspline_indices()]
        model = fit_nn(X, y, hidden=3, decay=0.0001, seed=3, restarts=1,
                       max_iter=200)
        probs = model.predict_proba(X)
        assert (probs > 0).all() and (probs < 1).all()

    def test_column_mismatch_raises(self, small_design):
        design, y = small_design
        X = design.values[:, design.nonspline_indices()]
        model = fit_nn(X, y, hidden=1, decay=0.0, seed=0, restarts=1,
                       max_iter=50)
        with pytest.raises(ValueError, match="column mismatch"):
            model.predict_proba(X[:, :3])

    def test_serialization_dict(self, small_design):
        design, y = small_design
        X = design.values[:, design.nonspline_indices()][:200]
        model = fit_nn(X, y[:200], hidden=2, decay=0.1, seed=7, restarts=1,
                       max_iter=100)
        d = model.to_dict()
        clone = NnModel(
            w1=np.array(d["w1"]), b1=np.array(d["b1"]), w2=np.array(d["w2"]),
            b2=d["b2"], hidden=d["hidden"], decay=d["decay"],
            input_mean=np.array(d["input_mean"]),
            input_sd=np.array(d["input_sd"]), train_objective=0.0,
            n_iterations=0)
        assert np.array_equal(clone.predict_proba(X), model.predict_proba(X))
