"""Repeated-CV model comparison: tuning, fold execution, screening curves.

Every (model, stage, repeat, fold) task is independent and seeded from the
master seed plus its own key, so results are identical regardless of
worker count or execution order. Tuning follows the grid protocol: inner
10-fold, 5-repeat cross-validation on the training part only, selecting
the smallest mean predictive log-loss.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cv import CvPlan, make_cv_plan
from .metrics import MetricError, auc, log_loss
from .models import (MODEL_ORDER, STAGE_ORDER, StudySettings, default_grids,
                     fit_model, smaller_model_key, valid_grid_points)
from .schema import Dataset, DesignEncoder, FeatureStage
from .smooth_models import fit_nn
from .trees import fit_gbm, fit_random_forest

DEFAULT_PROPORTIONS = tuple(round(0.01 * k, 2) for k in range(1, 101))
MANUAL_PROFILING_EFFICIENCY = 1.3


class StudyError(RuntimeError):
    pass


@dataclass
class FoldOutcome:
    """Held-out predictions and metrics for one (model, stage, fold)."""

    model_id: str
    stage: FeatureStage
    repeat: int
    fold: int
    probs: np.ndarray
    labels: np.ndarray
    auc: float | None
    log_loss: float
    wall_seconds: float
    params: dict = field(default_factory=dict)
    status: str = "ok"
    reason: str = ""
    info: dict = field(default_factory=dict)

    @property
    def key(self):
        return (self.model_id, self.stage.value, self.repeat, self.fold)


def task_seed_sequence(master_seed: int, model_id: str, stage: FeatureStage,
                       repeat: int, fold: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        (master_seed, MODEL_ORDER[model_id], STAGE_ORDER[stage], repeat, fold))


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------

def tune(model_id: str, train_ds: Dataset, stage: FeatureStage,
         grid: list[dict], seed: int, settings: StudySettings,
         inner_folds: int = 10, inner_repeats: int = 5) -> dict:
    """Pick grid parameters by inner repeated-CV mean log-loss.

    A singleton (or empty) grid skips the inner CV entirely. Grid points
    that cannot fit the design are dropped; if every point fails to fit,
    the last fitting error propagates.
    """
    if not grid:
        return {}
    y = train_ds.labels.astype(float)
    encoder = DesignEncoder.fit(train_ds, stage, settings.knots)
    design = encoder.encode(train_ds)
    ns_idx = design.nonspline_indices()
    X = design.values[:, ns_idx]
    points = valid_grid_points(model_id, grid, X.shape[1])
    if not points:
        raise StudyError(f"no valid grid points for {model_id} with "
                         f"{X.shape[1]} columns")
    if len(points) == 1:
        return dict(points[0])

    plan = make_cv_plan(y, folds=inner_folds, repeats=inner_repeats, seed=seed)
    folds = []
    for repeat, fold in plan.iter_folds():
        tr = plan.train_indices(repeat, fold)
        te = plan.test_indices(repeat, fold)
        folds.append((X[tr], y[tr], X[te], y[te]))

    losses = {i: [] for i in range(len(points))}
    failed: dict[int, str] = {}

    if model_id == "gbm_caret":
        groups: dict[tuple, list[int]] = {}
        for i, pt in enumerate(points):
            groups.setdefault((pt["nu"], pt["interaction_depth"]), []).append(i)
        for (nu, depth), members in groups.items():
            trees = sorted(points[i]["n_trees"] for i in members)
            member_of = {points[i]["n_trees"]: i for i in members}
            for X_tr, y_tr, X_te, y_te in folds:
                try:
                    _, staged = fit_gbm(
                        X_tr, y_tr, nu=nu, n_trees=max(trees),
                        interaction_depth=depth,
                        min_node_weight=settings.gbm_min_node_weight,
                        x_test=X_te, checkpoints=trees)
                except Exception as exc:  # noqa: BLE001 - recorded per point
                    for i in members:
                        failed[i] = repr(exc)
                    break
                for k, t in enumerate(sorted(trees)):
                    losses[member_of[t]].append(log_loss(staged[k], y_te))
    else:
        for i, pt in enumerate(points):
            for X_tr, y_tr, X_te, y_te in folds:
                try:
                    if model_id == "rf_caret":
                        m = fit_random_forest(X_tr, y_tr,
                                              n_trees=settings.rf_n_trees,
                                              mtry=pt["mtry"], seed=seed)
                        probs = m.predict_proba(X_te)
                    elif model_id == "nn_caret":
                        m = fit_nn(X_tr, y_tr, hidden=pt["size"],
                                   decay=pt["decay"], seed=seed,
                                   restarts=settings.nn_inner_restarts,
                                   max_iter=settings.nn_inner_max_iter)
                        probs = m.predict_proba(X_te)
                    else:
                        raise StudyError(f"no tuner for model {model_id!r}")
                except StudyError:
                    raise
                except Exception as exc:  # noqa: BLE001
                    failed[i] = repr(exc)
                    break
                losses[i].append(log_loss(probs, y_te))

    candidates = []
    for i, pt in enumerate(points):
        if i in failed or not losses[i]:
            continue
        candidates.append((float(np.mean(losses[i])),
                           smaller_model_key(model_id, pt), i))
    if not candidates:
        raise StudyError(f"all grid points failed for {model_id}: {failed}")
    candidates.sort()
    return dict(points[candidates[0][2]])


# ---------------------------------------------------------------------------
# Study execution
# ---------------------------------------------------------------------------

_CTX: dict = {}


def _init_worker(ctx):
    global _CTX
    _CTX = ctx
    # One BLAS thread per worker; fold tasks are the parallel unit.
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def _cache_path(cache_dir, model_id, stage, repeat, fold):
    return os.path.join(
        cache_dir, f"{model_id}_{stage.value}_r{repeat:02d}_f{fold:02d}.npz")


def _run_fold_task(key) -> dict:
    model_id, stage_value, repeat, fold = key
    stage = FeatureStage(stage_value)
    ds: Dataset = _CTX["ds"]
    plan: CvPlan = _CTX["plan"]
    settings: StudySettings = _CTX["settings"]
    grids = _CTX["grids"]
    master_seed = _CTX["master_seed"]
    cache_dir = _CTX.get("cache_dir")
    config_hash = _CTX.get("config_hash", "")

    if cache_dir:
        path = _cache_path(cache_dir, model_id, stage, repeat, fold)
        if os.path.exists(path):
            with np.load(path, allow_pickle=False) as z:
                if str(z["config_hash"]) == config_hash:
                    return {
                        "key": key, "probs": z["probs"], "labels": z["labels"],
                        "auc": None if np.isnan(z["auc"]) else float(z["auc"]),
                        "log_loss": float(z["log_loss"]),
                        "wall": float(z["wall"]),
                        "params": json.loads(str(z["params"])),
                        "status": str(z["status"]), "reason": str(z["reason"]),
                        "info": json.loads(str(z["info"])), "cached": True,
                    }

    ss = task_seed_sequence(master_seed, model_id, stage, repeat, fold)
    tune_seed, fit_seed = (int(s) for s in ss.generate_state(2))
    t0 = time.perf_counter()
    train_idx = plan.train_indices(repeat, fold)
    test_idx = plan.test_indices(repeat, fold)
    train_ds = ds.subset(train_idx)
    test_ds = ds.subset(test_idx)
    labels = test_ds.labels.astype(np.int64)

    result = {"key": key, "labels": labels, "cached": False}
    try:
        grid = grids.get(model_id, [])
        params = tune(model_id, train_ds, stage, grid, tune_seed, settings) \
            if grid else {}
        fit = fit_model(model_id, train_ds, stage, params, fit_seed, settings)
        probs = np.asarray(fit.predict(test_ds), dtype=float)
        try:
            auc_value = auc(probs, labels)
        except MetricError as exc:
            auc_value = None
            fit.info["auc_missing"] = str(exc)
        result.update({
            "probs": probs, "auc": auc_value,
            "log_loss": log_loss(probs, labels),
            "params": fit.params, "status": "ok", "reason": "",
            "info": fit.info,
        })
    except Exception as exc:  # noqa: BLE001 - per-fold failures are recorded
        result.update({
            "probs": np.full(len(labels), np.nan), "auc": None,
            "log_loss": float("nan"), "params": {}, "status": "failed",
            "reason": repr(exc), "info": {},
        })
    result["wall"] = time.perf_counter() - t0

    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = _cache_path(cache_dir, model_id, stage, repeat, fold)
        np.savez(
            path, probs=result["probs"], labels=labels,
            auc=np.nan if result["auc"] is None else result["auc"],
            log_loss=result["log_loss"], wall=result["wall"],
            params=json.dumps(result["params"], sort_keys=True),
            status=result["status"], reason=result["reason"],
            info=json.dumps(result["info"], sort_keys=True, default=str),
            config_hash=config_hash)
    return result


def run_study(ds: Dataset, models: list[str], stages: list[FeatureStage],
              plan: CvPlan, *, grids: dict | None = None,
              settings: StudySettings | None = None, master_seed: int = 0,
              jobs: int = 1, cache_dir: str | None = None,
              config_hash: str = "", progress=None) -> list[FoldOutcome]:
    """Execute every (model, stage, repeat, fold) task and collect outcomes.

    Fit failures are recorded as failed outcomes with a reason, never
    silently dropped. Results are ordered canonically, independent of the
    worker pool's completion order.
    """
    grids = default_grids() if grids is None else grids
    settings = settings or StudySettings()
    keys = [(m, s.value, r, f)
            for m in models for s in stages
            for r in range(plan.repeats) for f in range(plan.folds)]
    ctx = {"ds": ds, "plan": plan, "settings": settings, "grids": grids,
           "master_seed": master_seed, "cache_dir": cache_dir,
           "config_hash": config_hash}

    results = {}
    if jobs <= 1:
        _init_worker(ctx)
        for i, key in enumerate(keys):
            results[key] = _run_fold_task(key)
            if progress:
                progress(i + 1, len(keys), key)
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(ctx,)) as pool:
            for i, res in enumerate(pool.map(_run_fold_task, keys, chunksize=1)):
                results[res["key"]] = res
                if progress:
                    progress(i + 1, len(keys), res["key"])

    outcomes = []
    for key in keys:
        r = results[key]
        model_id, stage_value, repeat, fold = key
        outcomes.append(FoldOutcome(
            model_id=model_id, stage=FeatureStage(stage_value), repeat=repeat,
            fold=fold, probs=np.asarray(r["probs"]),
            labels=np.asarray(r["labels"]), auc=r["auc"],
            log_loss=r["log_loss"], wall_seconds=r["wall"],
            params=r["params"], status=r["status"], reason=r["reason"],
            info=r.get("info", {})))
    return outcomes


# ---------------------------------------------------------------------------
# Targeted-screening efficiency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyCurve:
    """Efficiency vs screening proportion with pointwise IQR bands.

    Efficiency at proportion P is the positive predictive value of
    screening the top ceil(P * n) passengers by predicted risk, divided by
    the fold's base rate; 1.0 corresponds to random screening.
    """

    model_id: str
    stage: FeatureStage
    proportions: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    per_fold: np.ndarray          # (n_folds_used, n_proportions)
    fold_keys: tuple
    n_excluded_zero_positive: int
    jitter_seed: int
    manual_baseline: float = MANUAL_PROFILING_EFFICIENCY


def fold_efficiency(probs, labels, proportions, rng) -> np.ndarray:
    """Efficiency of top-P screening for one fold; ties broken by the
    supplied RNG's random jitter ordering."""
    labels = np.asarray(labels)
    n = len(labels)
    pos = int(labels.sum())
    if pos == 0:
        raise MetricError("fold has no positives; efficiency undefined")
    jitter = rng.permutation(n)
    order = np.lexsort((jitter, -np.asarray(probs)))
    captured_cum = np.cumsum(labels[order])
    out = np.empty(len(proportions))
    base = pos / n
    for i, prop in enumerate(proportions):
        m = math.ceil(prop * n)
        m = min(max(m, 1), n)
        out[i] = (captured_cum[m - 1] / m) / base
    return out


def efficiency_curve(outcomes: list[FoldOutcome], proportions=None,
                     jitter_seed: int = 0) -> EfficiencyCurve:
    """Aggregate per-fold efficiency into median and quartile bands.

    Folds without a positive label are excluded and counted. All supplied
    outcomes must belong to one (model, stage) group.
    """
    ok = [o for o in outcomes if o.status == "ok"]
    if not ok:
        raise StudyError("no successful outcomes to aggregate")
    ids = {(o.model_id, o.stage) for o in ok}
    if len(ids) != 1:
        raise StudyError(f"outcomes span multiple model/stage groups: {ids}")
    model_id, stage = next(iter(ids))
    proportions = np.asarray(proportions if proportions is not None
                             else DEFAULT_PROPORTIONS, dtype=float)
    rows = []
    keys = []
    excluded = 0
    for o in ok:
        if o.labels.sum() == 0:
            excluded += 1
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence((jitter_seed, MODEL_ORDER[o.model_id],
                                    STAGE_ORDER[o.stage], o.repeat, o.fold)))
        rows.append(fold_efficiency(o.probs, o.labels, proportions, rng))
        keys.append((o.repeat, o.fold))
    if not rows:
        raise StudyError("every fold lacked positives; efficiency undefined")
    per_fold = np.array(rows)
    q25, median, q75 = np.quantile(per_fold, [0.25, 0.5, 0.75], axis=0)
    return EfficiencyCurve(
        model_id=model_id, stage=stage, proportions=proportions,
        median=median, q25=q25, q75=q75, per_fold=per_fold,
        fold_keys=tuple(keys), n_excluded_zero_positive=excluded,
        jitter_seed=jitter_seed)


def random_median_deviations(outcomes: list[FoldOutcome], proportions=None,
                             n_reps: int = 500, seed: int = 0) -> np.ndarray:
    """Monte-Carlo distribution of max_P |median efficiency - 1| under
    purely random scores on the same fold compositions. Used to build the
    simultaneous envelope a random-score model should fall inside."""
    proportions = np.asarray(proportions if proportions is not None
                             else DEFAULT_PROPORTIONS, dtype=float)
    folds = [(len(o.labels), int(o.labels.sum())) for o in outcomes
             if o.status == "ok" and o.labels.sum() > 0]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
    deviations = np.empty(n_reps)
    for rep in range(n_reps):
        rows = np.empty((len(folds), len(proportions)))
        for i, (n, pos) in enumerate(folds):
            labels = np.zeros(n, dtype=np.int64)
            labels[rng.choice(n, pos, replace=False)] = 1
            captured = np.cumsum(labels)
            base = pos / n
            for k, prop in enumerate(proportions):
                m = min(max(math.ceil(prop * n), 1), n)
                rows[i, k] = (captured[m - 1] / m) / base
        med = np.median(rows, axis=0)
        deviations[rep] = np.abs(med - 1.0).max()
    return deviations


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def outcomes_to_csv(outcomes: list[FoldOutcome], path):
    # wall times are deliberately omitted: the CSV must be byte-identical
    # across reruns and worker counts (timings live in the manifest).
    import csv as _csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "stage", "repeat", "fold", "n_test",
                         "n_positive", "auc", "log_loss",
                         "params", "status", "reason"])
        for o in outcomes:
            writer.writerow([
                o.model_id, o.stage.value, o.repeat, o.fold, len(o.labels),
                int(o.labels.sum()),
                "" if o.auc is None else repr(float(o.auc)),
                "" if math.isnan(o.log_loss) else repr(float(o.log_loss)),
                json.dumps(o.params, sort_keys=True),
                o.status, o.reason])


def predictions_to_csv(outcomes: list[FoldOutcome], path):
    import csv as _csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "stage", "repeat", "fold", "row", "prob", "label"])
        for o in outcomes:
            if o.status != "ok":
                continue
            for i, (p, l) in enumerate(zip(o.probs, o.labels)):
                writer.writerow([o.model_id, o.stage.value, o.repeat, o.fold,
                                 i, repr(float(p)), int(l)])


def efficiency_to_csv(curves: list[EfficiencyCurve], path):
    import csv as _csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "stage", "proportion", "median", "q25", "q75",
                         "n_folds", "manual_baseline"])
        for c in curves:
            for i, prop in enumerate(c.proportions):
                writer.writerow([
                    c.model_id, c.stage.value, repr(float(prop)),
                    repr(float(c.median[i])), repr(float(c.q25[i])),
                    repr(float(c.q75[i])), c.per_fold.shape[0],
                    repr(float(c.manual_baseline))])
