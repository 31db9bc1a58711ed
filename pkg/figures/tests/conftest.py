import csv

import numpy as np
import pytest

MODELS = ["gam", "rf_caret", "gbm_custom", "gbm_caret", "nn_caret",
          "bayes_normal", "bayes_lasso"]
STAGES = ["stage1", "stage12"]


@pytest.fixture
def outcomes_csv(tmp_path):
    """A small outcomes table in the study driver's documented format."""
    rng = np.random.default_rng(0)
    path = tmp_path / "outcomes.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "stage", "repeat", "fold", "n_test",
                         "n_positive", "auc", "log_loss", "params", "status",
                         "reason"])
        for model in MODELS:
            for stage in STAGES:
                for fold in range(10):
                    writer.writerow([model, stage, 0, fold, 336, 22,
                                     repr(0.6 + 0.2 * rng.random()),
                                     repr(0.2 + 0.1 * rng.random()),
                                     "{}", "ok", ""])
    return path


@pytest.fixture
def efficiency_csv(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "efficiency.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "stage", "proportion", "median", "q25",
                         "q75", "n_folds", "manual_baseline"])
        for model in MODELS:
            for stage in STAGES:
                for k in range(1, 101):
                    p = k / 100.0
                    med = 1.0 if p == 1.0 else 1.0 + 2.5 * (1 - p) * rng.random()
                    writer.writerow([model, stage, repr(p), repr(med),
                                     repr(med * 0.9), repr(med * 1.1), 100,
                                     repr(1.3)])
    return path


@pytest.fixture
def interpret_dir(tmp_path):
    """importance.csv plus the four pd_*.csv tables."""
    rng = np.random.default_rng(2)
    imp = tmp_path / "importance.csv"
    with open(imp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trait", "relative_influence"])
        for trait, value in (("age", 42.0), ("occupation", 30.0),
                             ("visit_reason", 15.0), ("citizenship_group", 8.0),
                             ("declaration_status", 3.0), ("sex", 2.0)):
            writer.writerow([trait, repr(value)])

    with open(tmp_path / "pd_age.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["age", "count", "logodds", "probability"])
        for age in range(0, 86):
            writer.writerow([age, 40, repr(-2.7 + 0.01 * age),
                             repr(1 / (1 + np.exp(2.7 - 0.01 * age)))])

    occupations = ["professional", "clerical", "trades", "labourer", "retired"]
    with open(tmp_path / "pd_occupation.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["occupation", "count", "logodds", "probability"])
        for i, occ in enumerate(occupations):
            writer.writerow([occ, 100 + 20 * i, repr(-2.5 + 0.2 * i),
                             repr(float(1 / (1 + np.exp(2.5 - 0.2 * i))))])

    with open(tmp_path / "pd_visit_reason.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["visit_reason", "count", "logodds", "probability"])
        for i, visit in enumerate(["holiday", "family", "business"]):
            writer.writerow([visit, 200 + 10 * i, repr(-2.4 + 0.1 * i),
                             repr(float(1 / (1 + np.exp(2.4 - 0.1 * i))))])

    groups = ["group_x", "group_y", "group_z"]
    with open(tmp_path / "pd_interaction_occupation_citizenship.csv", "w",
              newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["occupation", "citizenship_group", "count",
                         "logodds", "probability"])
        for occ in occupations:
            for g in groups:
                lo = -2.5 + rng.random()
                writer.writerow([occ, g, 50, repr(lo),
                                 repr(float(1 / (1 + np.exp(-lo))))])
    return tmp_path
