"""Uniform fit/predict interface over the seven study models plus controls.

Tree and network models consume the non-spline design columns (raw age and
dummies); the penalized regression and the Bayesian models use the full
design including the spline block. Controls provide the random-score and
constant-rate baselines used by the screening simulator's sanity checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bayes import BayesSpec, predict_bayes, sample_posterior
from .schema import Dataset, DesignEncoder, DesignMatrix, FeatureStage
from .smooth_models import GamFitError, fit_gam, fit_nn, predict_gam
from .trees import fit_gbm, fit_random_forest, gbm_custom_select

MODEL_IDS = ("gam", "rf_caret", "gbm_custom", "gbm_caret", "nn_caret",
             "bayes_normal", "bayes_lasso")
CONTROL_IDS = ("random_control", "constant_control")
ALL_MODEL_IDS = MODEL_IDS + CONTROL_IDS

# Stable integers for seed derivation; independent of execution order.
MODEL_ORDER = {m: i for i, m in enumerate(ALL_MODEL_IDS)}
STAGE_ORDER = {FeatureStage.STAGE1: 0, FeatureStage.STAGE12: 1}


def default_grids() -> dict[str, list[dict]]:
    """The tuning grids searched by inner cross-validation."""
    return {
        "gbm_caret": [
            {"nu": nu, "n_trees": t, "interaction_depth": d}
            for nu in (0.1, 0.01, 0.005)
            for t in (700, 850, 1000)
            for d in (1, 2, 3)
        ],
        "nn_caret": [
            {"size": s, "decay": w}
            for s in (1, 3, 5)
            for w in (0.0, 0.1, 0.0001)
        ],
        "rf_caret": [{"mtry": m} for m in (2, 12, 23)],
    }


@dataclass(frozen=True)
class StudySettings:
    """Fitting knobs that the study driver may vary without touching the
    model contracts (for example lighter Bayesian chains for the big run)."""

    knots: int = 10
    rf_n_trees: int = 500
    gbm_min_node_weight: float = 10.0
    nn_restarts: int = 5
    nn_max_iter: int = 2000
    nn_inner_restarts: int = 1
    nn_inner_max_iter: int = 100
    bayes_chains: int = 2
    bayes_warmup: int = 500
    bayes_draws: int = 500
    gam_lambda: object = "auto"

    def to_dict(self) -> dict:
        return {
            "knots": self.knots, "rf_n_trees": self.rf_n_trees,
            "gbm_min_node_weight": self.gbm_min_node_weight,
            "nn_restarts": self.nn_restarts, "nn_max_iter": self.nn_max_iter,
            "nn_inner_restarts": self.nn_inner_restarts,
            "nn_inner_max_iter": self.nn_inner_max_iter,
            "bayes_chains": self.bayes_chains, "bayes_warmup": self.bayes_warmup,
            "bayes_draws": self.bayes_draws, "gam_lambda": self.gam_lambda,
        }

    @staticmethod
    def from_dict(d: dict) -> "StudySettings":
        return StudySettings(**d)


@dataclass
class FoldFit:
    """A fitted model bound to its fold encoder, ready to score new data."""

    model_id: str
    stage: FeatureStage
    encoder: DesignEncoder
    predictor: object          # callable DesignMatrix -> probs
    params: dict
    info: dict = field(default_factory=dict)

    def predict(self, ds: Dataset) -> np.ndarray:
        return self.predictor(self.encoder.encode(ds))


def _nonspline(design: DesignMatrix):
    idx = design.nonspline_indices()
    return design.values[:, idx], tuple(design.column_names[i] for i in idx)


def fit_model(model_id: str, train_ds: Dataset, stage: FeatureStage,
              params: dict, seed: int, settings: StudySettings) -> FoldFit:
    """Fit one model on a training subset; returns a FoldFit scoring new
    datasets through the training-fold encoder."""
    encoder = DesignEncoder.fit(train_ds, stage, settings.knots)
    design = encoder.encode(train_ds)
    y = train_ds.labels.astype(float)
    info: dict = {}

    if model_id == "gam":
        # Separation in a fold makes the unpenalized coefficients run off;
        # escalate a small ridge floor until IRLS converges.
        model = None
        for floor in (0.0, 1e-6, 1e-2):
            try:
                model = fit_gam(design, y, settings.gam_lambda,
                                ridge_floor=floor, seed=seed)
                break
            except GamFitError:
                continue
        if model is None:
            raise GamFitError("IRLS failed at every ridge floor")
        if model.ridge_floor > 0:
            info["ridge_floor"] = model.ridge_floor
        params = {"lambda": model.lam}
        predictor = lambda d: predict_gam(model, d)
    elif model_id == "rf_caret":
        X, _ = _nonspline(design)
        model = fit_random_forest(X, y, n_trees=settings.rf_n_trees,
                                  mtry=params["mtry"], seed=seed)
        predictor = lambda d: model.predict_proba(_nonspline(d)[0])
    elif model_id == "gbm_caret":
        X, _ = _nonspline(design)
        model, _ = fit_gbm(X, y, nu=params["nu"], n_trees=params["n_trees"],
                           interaction_depth=params["interaction_depth"],
                           seed=seed,
                           min_node_weight=settings.gbm_min_node_weight)
        predictor = lambda d: model.predict_proba(_nonspline(d)[0])
    elif model_id == "gbm_custom":
        X, names = _nonspline(design)
        result = gbm_custom_select(X, y, names, seed=seed)
        info["selected"] = list(result.selected)
        info["intercept_only"] = result.intercept_only
        params = {}
        predictor = lambda d: result.predict_proba(_nonspline(d)[0])
    elif model_id == "nn_caret":
        X, _ = _nonspline(design)
        model = fit_nn(X, y, hidden=params["size"], decay=params["decay"],
                       seed=seed, restarts=settings.nn_restarts,
                       max_iter=settings.nn_max_iter)
        predictor = lambda d: model.predict_proba(_nonspline(d)[0])
    elif model_id in ("bayes_normal", "bayes_lasso"):
        spec = BayesSpec(variant=model_id.split("_")[1], stage=stage,
                         knots=settings.knots)
        post = sample_posterior(spec, design, y, chains=settings.bayes_chains,
                                warmup=settings.bayes_warmup,
                                iterations=settings.bayes_draws, seed=seed)
        if post.warnings:
            info["warnings"] = list(post.warnings)
        info["rhat_max"] = float(post.rhat.max())
        params = {}
        predictor = lambda d: predict_bayes(post, d)
    elif model_id == "random_control":
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA11CE)))
        params = {}
        predictor = lambda d: rng.random(d.n)
    elif model_id == "constant_control":
        rate = float(y.mean())
        params = {}
        predictor = lambda d: np.full(d.n, rate)
    else:
        raise ValueError(f"unknown model id {model_id!r}")

    return FoldFit(model_id=model_id, stage=stage, encoder=encoder,
                   predictor=predictor, params=dict(params), info=info)


def valid_grid_points(model_id: str, grid: list[dict], n_columns: int) -> list[dict]:
    """Drop grid points that cannot fit this design (e.g. mtry beyond the
    column count), preserving order and removing duplicates."""
    seen = set()
    out = []
    for point in grid:
        key = tuple(sorted(point.items()))
        if key in seen:
            continue
        seen.add(key)
        if model_id == "rf_caret" and point["mtry"] > n_columns:
            continue
        out.append(point)
    return out


def smaller_model_key(model_id: str, point: dict):
    """Tie-break ordering: prefer fewer trees, lower depth, smaller hidden
    size, larger decay, smaller mtry."""
    if model_id == "gbm_caret":
        return (point["n_trees"], point["interaction_depth"], point["nu"])
    if model_id == "nn_caret":
        return (point["size"], -point["decay"])
    if model_id == "rf_caret":
        return (point["mtry"],)
    return tuple(sorted(point.items()))
