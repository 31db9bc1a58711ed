import json
import os

import numpy as np
import pytest
import yaml

from paxrisk.cli import (EXIT_CONFIG, EXIT_DATA, ExperimentConfig, load_config,
                         main)

TINY_SYNTH = {
    "n": 500, "seed": 42, "base_rate": 0.08,
    "age_effect": {"breaks": [20, 45, 60], "values": [0.0, 0.8, 1.6, 0.2]},
    "age_distribution": [[0, 17, 0.08], [18, 29, 0.27], [30, 44, 0.3],
                         [45, 59, 0.2], [60, 85, 0.15]],
    "level_frequencies": {
        "sex": {"male": 0.52, "female": 0.48},
        "citizenship_group": {"group_x": 0.42, "group_y": 0.33, "group_z": 0.25},
        "declaration_status": {"0": 0.65, "1": 0.35},
        "occupation": {"professional": 0.3, "clerical": 0.25, "trades": 0.25,
                       "labourer": 0.2},
        "visit_reason": {"holiday": 0.4, "visiting_family": 0.35,
                         "business": 0.25},
    },
    "level_effects": {
        "sex": {"male": 0.25},
        "occupation": {"labourer": 0.7, "trades": 0.35},
        "visit_reason": {"visiting_family": 0.55},
    },
    "interaction_effects": [["labourer", "group_y", 1.1]],
}


def tiny_config(tmp_path, **overrides):
    cfg = {
        "data": {"synthetic": TINY_SYNTH},
        "models": ["gam", "gbm_caret", "random_control"],
        "stages": ["stage1", "stage12"],
        "cv": {"folds": 5, "repeats": 1},
        "master_seed": 5,
        "collapse_threshold": 20,
        "grids": {"gbm_caret": [{"nu": 0.05, "n_trees": 120,
                                 "interaction_depth": 2}]},
        "settings": {"knots": 6},
    }
    cfg.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        clone = ExperimentConfig.from_dict(cfg.to_dict())
        assert clone.to_dict() == cfg.to_dict()
        assert clone.config_hash() == cfg.config_hash()

    def test_defaults_encode_full_protocol(self):
        cfg = ExperimentConfig()
        assert cfg.folds == 10 and cfg.repeats == 10
        assert cfg.manual_baseline == 1.3
        assert len(cfg.grids["gbm_caret"]) == 27
        assert len(cfg.grids["nn_caret"]) == 9
        assert len(cfg.grids["rf_caret"]) == 3
        assert cfg.data["synthetic"]["n"] == 3361
        assert cfg.data["synthetic"]["base_rate"] == 0.065

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("banana: 1\n")
        with pytest.raises(Exception):
            load_config(path)

    def test_unknown_model_rejected(self):
        with pytest.raises(Exception):
            ExperimentConfig(models=["skynet"])


class TestShowDefaults:
    def test_output_parses_back(self, capsys):
        assert main(["show-defaults"]) == 0
        out = capsys.readouterr().out
        parsed = yaml.safe_load(out)
        assert parsed["cv"] == {"folds": 10, "repeats": 10}


class TestGenerate:
    def test_writes_dataset_and_manifest(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "gen" / "nested"  # missing directories get created
        assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "dataset.csv").exists()
        assert (out / "truth_manifest.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n"] == 500

    def test_repeat_invocation_identical_bytes(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["generate", "--config", cfg, "--out", str(out1)])
        main(["generate", "--config", cfg, "--out", str(out2)])
        assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()
        assert (out1 / "truth_manifest.json").read_bytes() == \
            (out2 / "truth_manifest.json").read_bytes()

    def test_config_error_exit_code(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "missing.yaml"),
                     "--out", str(tmp_path / "x")]) == EXIT_CONFIG


class TestStudy:
    def test_study_outputs_and_groups(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "study"
        assert main(["study", "--config", cfg, "--out", str(out),
                     "--jobs", "2"]) == 0
        lines = (out / "outcomes.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 2 * 5  # models x stages x folds
        eff = (out / "efficiency.csv").read_text().splitlines()
        assert eff[0].split(",")[:3] == ["model", "stage", "proportion"]
        assert (out / "predictions.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_outcomes"] == 30
        assert "outcomes.csv" in manifest["outputs"]

    def test_byte_identical_across_worker_counts(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["study", "--config", cfg, "--out", str(out1),
                     "--jobs", "1"]) == 0
        assert main(["study", "--config", cfg, "--out", str(out2),
                     "--jobs", "2"]) == 0
        for name in ("outcomes.csv", "predictions.csv", "efficiency.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_resume_reuses_fold_cache(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "study"
        main(["study", "--config", cfg, "--out", str(out), "--resume"])
        first = (out / "outcomes.csv").read_bytes()
        cache_files = sorted(os.listdir(out / "fold_cache"))
        assert cache_files
        main(["study", "--config", cfg, "--out", str(out), "--resume"])
        assert (out / "outcomes.csv").read_bytes() == first

    def test_data_error_exit_code(self, tmp_path):
        cfg = tiny_config(tmp_path, data={"file": str(tmp_path / "nope.csv")})
        assert main(["study", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == EXIT_DATA


class TestInterpret:
    @pytest.fixture(scope="class")
    def interpreted(self, tmp_path_factory):
        tmp_path = tmp_path_factory.mktemp("interp")
        cfg = tiny_config(tmp_path)
        out = tmp_path / "out"
        rc = main(["interpret", "--config", cfg, "--out", str(out)])
        return rc, out

    def test_importance_sums_to_100(self, interpreted):
        rc, out = interpreted
        assert rc == 0
        rows = (out / "importance.csv").read_text().splitlines()[1:]
        total = sum(float(r.split(",")[1]) for r in rows)
        assert total == pytest.approx(100.0, abs=1e-9)

    def test_pd_age_has_row_per_observed_age(self, interpreted):
        rc, out = interpreted
        import csv as _csv
        from paxrisk.synth import GeneratorConfig, generate
        with open(out / "pd_age.csv") as fh:
            rows = list(_csv.reader(fh))[1:]
        cfg = GeneratorConfig.from_dict(TINY_SYNTH)
        ds, _ = generate(cfg)
        assert len(rows) == len(set(ds.age.tolist()))

    def test_interaction_file_has_series_per_citizenship_group(self, interpreted):
        rc, out = interpreted
        import csv as _csv
        with open(out / "pd_interaction_occupation_citizenship.csv") as fh:
            rows = list(_csv.reader(fh))
        header, body = rows[0], rows[1:]
        assert header[1] == "citizenship_group"
        groups = {r[1] for r in body}
        assert groups == {"group_x", "group_y", "group_z"}

    def test_artifact_reuse(self, interpreted, tmp_path):
        rc, out = interpreted
        cfg = tiny_config(tmp_path)
        out2 = tmp_path / "out2"
        rc2 = main(["interpret", "--config", cfg, "--out", str(out2),
                    "--artifact", str(out / "gbm_full.json")])
        assert rc2 == 0
        assert (out2 / "importance.csv").read_bytes() == \
            (out / "importance.csv").read_bytes()

    def test_missing_artifact_exit_code(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert main(["interpret", "--config", cfg, "--out",
                     str(tmp_path / "x"), "--artifact",
                     str(tmp_path / "missing.json")]) == EXIT_DATA
