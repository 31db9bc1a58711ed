"""Shared IO validation, styling, and deterministic SVG saving."""

from __future__ import annotations

import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

STAGE1_COLOR = "0.35"   # dark grey fill
STAGE12_COLOR = "0.75"  # light grey fill
BAND_COLOR = "0.8"
BASELINE_COLOR = "0.5"

MODEL_LABELS = {
    "gam": "GAM",
    "rf_caret": "RF-caret",
    "gbm_custom": "GBM-custom",
    "gbm_caret": "GBM-caret",
    "nn_caret": "NN-caret",
    "bayes_normal": "Bayes-normal",
    "bayes_lasso": "Bayes-lasso",
    "random_control": "Random",
    "constant_control": "Constant",
}

EXIT_USAGE = 2
EXIT_INPUT = 3


class InputError(ValueError):
    """Raised when an input CSV is missing, empty, or malformed."""


def apply_style():
    plt.rcParams.update({
        "svg.fonttype": "none",      # keep text searchable
        "svg.hashsalt": "paxfigs",   # deterministic ids in SVG output
        "figure.dpi": 100,
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
    })


def read_table(path, required_columns) -> pd.DataFrame:
    if not os.path.exists(path):
        raise InputError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path)
    except Exception as exc:  # noqa: BLE001 - normalized for exit codes
        raise InputError(f"cannot parse {path}: {exc}") from exc
    missing = set(required_columns) - set(df.columns)
    if missing:
        raise InputError(f"{path} lacks required columns {sorted(missing)}")
    if df.empty:
        raise InputError(f"{path} contains no data rows")
    return df


def save_figure(fig, path):
    # No timestamp metadata, so identical inputs give identical bytes.
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def run_cli(parser, render, argv=None) -> int:
    args = parser.parse_args(argv)
    try:
        render(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


def model_label(model_id: str) -> str:
    return MODEL_LABELS.get(model_id, model_id)
