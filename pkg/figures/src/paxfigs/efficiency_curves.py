"""Screening efficiency vs screening rate, one panel per method."""

from __future__ import annotations

import argparse
import math
import sys

import matplotlib.pyplot as plt

from .common import (BAND_COLOR, BASELINE_COLOR, InputError, apply_style,
                     model_label, read_table, run_cli, save_figure)

REQUIRED = ("model", "stage", "proportion", "median", "q25", "q75",
            "manual_baseline")


def build_figure(df):
    apply_style()
    models = list(dict.fromkeys(df["model"]))
    n_cols = min(4, len(models))
    n_rows = math.ceil(len(models) / n_cols)
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(3.2 * n_cols, 2.6 * n_rows),
                             sharex=True, sharey=True, squeeze=False)
    baseline = float(df["manual_baseline"].iloc[0])
    for i, model in enumerate(models):
        ax = axes[i // n_cols][i % n_cols]
        for stage, style in (("stage1", "-"), ("stage12", "--")):
            sub = df[(df["model"] == model) & (df["stage"] == stage)]
            if sub.empty:
                continue
            sub = sub.sort_values("proportion")
            ax.fill_between(sub["proportion"], sub["q25"], sub["q75"],
                            color=BAND_COLOR, alpha=0.6, linewidth=0)
            ax.plot(sub["proportion"], sub["median"], style, color="black",
                    label="Stage 1" if stage == "stage1" else "Stage 1 and 2")
        ax.axhline(baseline, color=BASELINE_COLOR, linewidth=1.2)
        ax.set_title(model_label(model))
    for i in range(len(models), n_rows * n_cols):
        axes[i // n_cols][i % n_cols].set_visible(False)
    for ax in axes[-1]:
        ax.set_xlabel("screening proportion")
    for row in axes:
        row[0].set_ylabel("efficiency")
    axes[0][0].legend(loc="upper right", frameon=False)
    fig.suptitle("Targeted-screening efficiency relative to random selection")
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Efficiency-vs-screening-rate curves per model")
    parser.add_argument("--in", dest="infile", required=True,
                        help="efficiency CSV from the study run")
    parser.add_argument("--out", required=True, help="output SVG path")

    def render(args):
        df = read_table(args.infile, REQUIRED)
        save_figure(build_figure(df), args.out)

    return run_cli(parser, render, argv)


if __name__ == "__main__":
    sys.exit(main())
