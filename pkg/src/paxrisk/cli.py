"""Command-line driver: generate | study | interpret | show-defaults.

A YAML experiment config declares the data source, model list, CV sizes,
tuning grids, and output locations; defaults reproduce the full protocol
(10x10 outer CV, 10x5 inner tuning CV, the standard grids, 1.3 manual
baseline). Every run writes a JSON manifest with seeds, config echo, and
input/output hashes so identical inputs reproduce byte-identical CSVs.

Exit codes: 0 success, 2 config error, 3 data error, 4 run failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .cv import CvError, make_cv_plan
from .metrics import MetricError
from .models import ALL_MODEL_IDS, MODEL_IDS, StudySettings, default_grids
from .interpret import (importance_to_csv, partial_dependence, pdp_to_csv,
                        relative_influence)
from .schema import (DataError, Dataset, DesignEncoder, FeatureStage,
                     collapse_rare_levels, load_dataset, save_dataset)
from .study import (StudyError, efficiency_curve, efficiency_to_csv,
                    outcomes_to_csv, predictions_to_csv, run_study, tune)
from .synth import (GeneratorConfig, GeneratorError, default_study_config,
                    generate, load_manifest, save_manifest)
from .trees import GbmModel, fit_gbm, load_model, save_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUN = 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Declarative study configuration (see show-defaults for the layout)."""

    data: dict = field(default_factory=lambda: {"synthetic": default_study_config().to_dict()})
    models: list[str] = field(default_factory=lambda: list(MODEL_IDS))
    stages: list[str] = field(default_factory=lambda: ["stage1", "stage12"])
    folds: int = 10
    repeats: int = 10
    master_seed: int = 20150618
    jitter_seed: int = 97
    collapse_threshold: int = 50
    manual_baseline: float = 1.3
    screening_step: float = 0.01
    settings: StudySettings = field(default_factory=StudySettings)
    grids: dict = field(default_factory=default_grids)

    def __post_init__(self):
        unknown = set(self.models) - set(ALL_MODEL_IDS)
        if unknown:
            raise ConfigError(f"unknown model ids {sorted(unknown)}")
        bad_stages = set(self.stages) - {"stage1", "stage12"}
        if bad_stages:
            raise ConfigError(f"unknown stages {sorted(bad_stages)}")
        if "synthetic" not in self.data and "file" not in self.data:
            raise ConfigError("data must declare either 'synthetic' or 'file'")
        if self.folds < 2 or self.repeats < 1:
            raise ConfigError("cv sizes must satisfy folds >= 2, repeats >= 1")

    @property
    def stage_enums(self) -> list[FeatureStage]:
        return [FeatureStage(s) for s in self.stages]

    @property
    def proportions(self) -> tuple[float, ...]:
        k = int(round(1.0 / self.screening_step))
        return tuple(round(self.screening_step * i, 10) for i in range(1, k + 1))

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "models": list(self.models),
            "stages": list(self.stages),
            "cv": {"folds": self.folds, "repeats": self.repeats},
            "master_seed": self.master_seed,
            "jitter_seed": self.jitter_seed,
            "collapse_threshold": self.collapse_threshold,
            "manual_baseline": self.manual_baseline,
            "screening_step": self.screening_step,
            "settings": self.settings.to_dict(),
            "grids": self.grids,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        cv = d.pop("cv", {})
        settings = d.pop("settings", {})
        known = {"data", "models", "stages", "master_seed", "jitter_seed",
                 "collapse_threshold", "manual_baseline", "screening_step",
                 "grids"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return ExperimentConfig(
            **{k: v for k, v in d.items() if k in known},
            folds=int(cv.get("folds", 10)), repeats=int(cv.get("repeats", 10)),
            settings=StudySettings.from_dict({**StudySettings().to_dict(),
                                              **settings}))

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return ExperimentConfig.from_dict(raw)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, entries: dict):
    entries = dict(entries)
    entries["versions"] = {
        "paxrisk": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _load_or_generate(cfg: ExperimentConfig, out_dir=None):
    """Returns (dataset, truth manifest or None, data descriptor)."""
    if "file" in cfg.data:
        path = cfg.data["file"]
        ds = load_dataset(path)
        return ds, None, {"kind": "file", "path": str(path),
                          "sha256": _sha256(path)}
    gen_cfg = GeneratorConfig.from_dict(cfg.data["synthetic"])
    ds, truth = generate(gen_cfg)
    return ds, truth, {"kind": "synthetic", "seed": gen_cfg.seed,
                       "n": gen_cfg.n, "base_rate": gen_cfg.base_rate}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None and "synthetic" in cfg.data:
        cfg.data["synthetic"]["seed"] = args.seed
    if "synthetic" not in cfg.data:
        print("generate requires a synthetic data config", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    gen_cfg = GeneratorConfig.from_dict(cfg.data["synthetic"])
    ds, truth = generate(gen_cfg)
    data_path = os.path.join(args.out, "dataset.csv")
    truth_path = os.path.join(args.out, "truth_manifest.json")
    save_dataset(ds, data_path)
    save_manifest(truth, truth_path)
    _write_manifest(args.out, {
        "command": "generate",
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "outputs": {
            "dataset.csv": _sha256(data_path),
            "truth_manifest.json": _sha256(truth_path),
        },
        "n": ds.n,
        "positive_rate": float(ds.labels.mean()),
        "achieved_rate": truth.achieved_rate,
    })
    print(f"wrote {data_path} (n={ds.n}, positive rate "
          f"{ds.labels.mean():.4f}) and {truth_path}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    ds, truth, data_desc = _load_or_generate(cfg)
    ds = collapse_rare_levels(ds, cfg.collapse_threshold)
    ds.require_both_classes()
    plan = make_cv_plan(ds.labels, folds=cfg.folds, repeats=cfg.repeats,
                        seed=cfg.master_seed)

    cache_dir = os.path.join(args.out, "fold_cache")
    t0 = time.perf_counter()

    def progress(done, total, key):
        if args.verbose:
            print(f"[{done}/{total}] {key}", file=sys.stderr)

    outcomes = run_study(
        ds, cfg.models, cfg.stage_enums, plan, grids=cfg.grids,
        settings=cfg.settings, master_seed=cfg.master_seed, jobs=args.jobs,
        cache_dir=cache_dir if args.resume else None,
        config_hash=cfg.config_hash(), progress=progress)
    wall = time.perf_counter() - t0

    failed = [o for o in outcomes if o.status != "ok"]
    if failed:
        print(f"{len(failed)} of {len(outcomes)} fold tasks failed:",
              file=sys.stderr)
        for o in failed[:20]:
            print(f"  {o.key}: {o.reason}", file=sys.stderr)
    if len(failed) == len(outcomes):
        return EXIT_RUN

    curves = []
    for model in cfg.models:
        for stage in cfg.stage_enums:
            group = [o for o in outcomes
                     if o.model_id == model and o.stage == stage
                     and o.status == "ok"]
            if group:
                curve = efficiency_curve(group, cfg.proportions,
                                         jitter_seed=cfg.jitter_seed)
                curves.append(curve)

    outcomes_path = os.path.join(args.out, "outcomes.csv")
    predictions_path = os.path.join(args.out, "predictions.csv")
    efficiency_path = os.path.join(args.out, "efficiency.csv")
    outcomes_to_csv(outcomes, outcomes_path)
    predictions_to_csv(outcomes, predictions_path)
    efficiency_to_csv(curves, efficiency_path)
    _write_manifest(args.out, {
        "command": "study",
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "data": data_desc,
        "jobs": args.jobs,
        "resume": bool(args.resume),
        "jitter_seed": cfg.jitter_seed,
        "wall_seconds": round(wall, 3),
        "aggregate_task_seconds": round(sum(o.wall_seconds for o in outcomes), 3),
        "n_outcomes": len(outcomes),
        "n_failed": len(failed),
        "outputs": {
            "outcomes.csv": _sha256(outcomes_path),
            "predictions.csv": _sha256(predictions_path),
            "efficiency.csv": _sha256(efficiency_path),
        },
    })
    groups = {(o.model_id, o.stage.value) for o in outcomes if o.status == "ok"}
    print(f"study complete: {len(outcomes)} fold outcomes across "
          f"{len(groups)} model/stage groups in {wall:.1f} s "
          f"({sum(o.wall_seconds for o in outcomes):.1f} task-seconds)")
    return EXIT_OK


def _fit_full_gbm(cfg: ExperimentConfig, ds, seed):
    """Tune on the full dataset with the standard grid and fit the final
    boosting model used for interpretation outputs."""
    stage = FeatureStage.STAGE12
    params = tune("gbm_caret", ds, stage, cfg.grids["gbm_caret"], seed,
                  cfg.settings)
    encoder = DesignEncoder.fit(ds, stage, cfg.settings.knots)
    design = encoder.encode(ds)
    idx = design.nonspline_indices()
    X = design.values[:, idx]
    meta = tuple(design.column_meta[i] for i in idx)
    model, _ = fit_gbm(X, ds.labels.astype(float), nu=params["nu"],
                       n_trees=params["n_trees"],
                       interaction_depth=params["interaction_depth"],
                       seed=seed,
                       min_node_weight=cfg.settings.gbm_min_node_weight)
    return model, params, X, meta


def cmd_interpret(args) -> int:
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    ds, truth, data_desc = _load_or_generate(cfg)
    ds = collapse_rare_levels(ds, cfg.collapse_threshold)

    params = {}
    if args.artifact:
        if not os.path.exists(args.artifact):
            print(f"missing model artifact: {args.artifact}", file=sys.stderr)
            return EXIT_DATA
        model = load_model(args.artifact)
        if not isinstance(model, GbmModel):
            print("artifact is not a boosting model", file=sys.stderr)
            return EXIT_DATA
        encoder = DesignEncoder.fit(ds, FeatureStage.STAGE12, cfg.settings.knots)
        design = encoder.encode(ds)
        idx = design.nonspline_indices()
        X = design.values[:, idx]
        meta = tuple(design.column_meta[i] for i in idx)
        artifact_path = args.artifact
    else:
        seed = cfg.master_seed if args.seed is None else args.seed
        model, params, X, meta = _fit_full_gbm(cfg, ds, seed)
        artifact_path = os.path.join(args.out, "gbm_full.json")
        save_model(model, artifact_path)

    table = relative_influence(model, meta)
    outputs = {}
    importance_path = os.path.join(args.out, "importance.csv")
    importance_to_csv(table, importance_path)
    outputs["importance.csv"] = _sha256(importance_path)

    pd_traits = ["age", "occupation", "visit_reason"]
    for trait in pd_traits:
        grid = partial_dependence(model, meta, trait, X, dataset=ds)
        path = os.path.join(args.out, f"pd_{trait}.csv")
        pdp_to_csv(grid, path)
        outputs[os.path.basename(path)] = _sha256(path)
    interaction = partial_dependence(model, meta, "occupation", X,
                                     second_trait="citizenship_group",
                                     dataset=ds)
    interaction_path = os.path.join(args.out,
                                    "pd_interaction_occupation_citizenship.csv")
    pdp_to_csv(interaction, interaction_path)
    outputs[os.path.basename(interaction_path)] = _sha256(interaction_path)

    _write_manifest(args.out, {
        "command": "interpret",
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "data": data_desc,
        "artifact": artifact_path,
        "gbm_params": params,
        "importance": table.values,
        "zero_influence": table.zero_influence,
        "outputs": outputs,
    })
    print(f"wrote importance and marginal-effect tables to {args.out}")
    return EXIT_OK


def cmd_show_defaults(args) -> int:
    print(yaml.safe_dump(ExperimentConfig().to_dict(), sort_keys=False,
                         default_flow_style=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paxrisk",
        description="Passenger risk profiling: synthetic study pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML experiment config")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")

    p_gen = sub.add_parser("generate", parents=[common],
                           help="write a synthetic dataset + truth manifest")
    p_gen.set_defaults(fn=cmd_generate)

    p_study = sub.add_parser("study", parents=[common],
                             help="run the cross-validated model comparison")
    p_study.add_argument("--jobs", type=int, default=1,
                         help="worker processes for fold tasks")
    p_study.add_argument("--resume", action="store_true",
                         help="re-use completed fold outcomes from fold_cache")
    p_study.add_argument("--verbose", action="store_true")
    p_study.set_defaults(fn=cmd_study)

    p_int = sub.add_parser("interpret", parents=[common],
                           help="importance + marginal effects of the full-data GBM")
    p_int.add_argument("--artifact", default=None,
                       help="path to a fitted GBM JSON artifact")
    p_int.set_defaults(fn=cmd_interpret)

    p_def = sub.add_parser("show-defaults", help="print the default config")
    p_def.set_defaults(fn=cmd_show_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GeneratorError, CvError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StudyError, MetricError) as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
