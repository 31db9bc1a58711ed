"""Paired AUC / log-loss boxplots per model, shaded by predictor stage."""

from __future__ import annotations

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from .common import (STAGE1_COLOR, STAGE12_COLOR, InputError, apply_style,
                     model_label, read_table, run_cli, save_figure)

REQUIRED = ("model", "stage", "repeat", "fold", "auc", "log_loss", "status")


def build_figure(df):
    apply_style()
    df = df[df["status"] == "ok"].copy()
    if df.empty:
        raise InputError("no successful outcome rows to plot")
    models = list(dict.fromkeys(df["model"]))
    stages = [s for s in ("stage1", "stage12") if (df["stage"] == s).any()]
    fig, axes = plt.subplots(2, 1, figsize=(1.2 + 1.1 * len(models), 6.0),
                             sharex=True)
    for ax, metric, label in ((axes[0], "auc", "AUC"),
                              (axes[1], "log_loss", "predictive log-loss")):
        positions, boxes, colors = [], [], []
        ticks = []
        for i, model in enumerate(models):
            ticks.append(2.0 * i + 0.5 * (len(stages) - 1) * 0.8)
            for k, stage in enumerate(stages):
                values = df[(df["model"] == model) & (df["stage"] == stage)][metric]
                values = values.dropna().to_numpy(dtype=float)
                if len(values) == 0:
                    continue
                positions.append(2.0 * i + 0.8 * k)
                boxes.append(values)
                colors.append(STAGE1_COLOR if stage == "stage1" else STAGE12_COLOR)
        artists = ax.boxplot(boxes, positions=positions, widths=0.6,
                             patch_artist=True, showfliers=False,
                             medianprops={"color": "black"})
        for patch, color in zip(artists["boxes"], colors):
            patch.set_facecolor(color)
        ax.set_ylabel(label)
        ax.set_xticks(ticks)
        ax.set_xticklabels([model_label(m) for m in models], rotation=30,
                           ha="right")
    handles = [plt.Rectangle((0, 0), 1, 1, facecolor=STAGE1_COLOR),
               plt.Rectangle((0, 0), 1, 1, facecolor=STAGE12_COLOR)]
    axes[0].legend(handles, ["Stage 1 traits", "Stage 1 and 2 traits"],
                   loc="lower left", frameon=False)
    fig.suptitle("Predictive performance across cross-validation folds")
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Boxplots of AUC and log-loss per model and stage")
    parser.add_argument("--in", dest="infile", required=True,
                        help="outcomes CSV from the study run")
    parser.add_argument("--out", required=True, help="output SVG path")

    def render(args):
        df = read_table(args.infile, REQUIRED)
        save_figure(build_figure(df), args.out)

    return run_cli(parser, render, argv)


if __name__ == "__main__":
    sys.exit(main())
