"""Trait-importance bars and marginal-effect panels for the full-data model."""

from __future__ import annotations

import argparse
import os
import sys

import matplotlib.pyplot as plt

from .common import (InputError, apply_style, read_table, run_cli, save_figure)

IMPORTANCE_REQUIRED = ("trait", "relative_influence")
PD_SINGLE_REQUIRED = ("count", "logodds", "probability")
PD_FILES = {
    "age": "pd_age.csv",
    "occupation": "pd_occupation.csv",
    "visit_reason": "pd_visit_reason.csv",
    "interaction": "pd_interaction_occupation_citizenship.csv",
}


def build_importance_figure(df):
    apply_style()
    df = df.sort_values("relative_influence", ascending=False)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.bar(range(len(df)), df["relative_influence"], color="0.5")
    ax.set_xticks(range(len(df)))
    ax.set_xticklabels(df["trait"], rotation=30, ha="right")
    ax.set_ylabel("relative influence")
    total = df["relative_influence"].sum()
    ax.annotate(f"sum = {total:.0f}", xy=(0.98, 0.95),
                xycoords="axes fraction", ha="right")
    ax.set_title("Relative importance of passenger traits")
    return fig


def build_effects_figure(pd_tables):
    apply_style()
    fig, axes = plt.subplots(2, 2, figsize=(9.5, 6.5))

    age = pd_tables["age"]
    ax = axes[0][0]
    ax.plot(age["age"], age["probability"], color="black")
    ax.set_xlabel("age (years)")
    ax.set_ylabel("marginal probability")
    ax.set_title("Age")

    for ax, key, title in ((axes[0][1], "occupation", "Occupation"),
                           (axes[1][0], "visit_reason", "Visit reason")):
        table = pd_tables[key].sort_values("probability", ascending=False)
        levels = table[key].astype(str)
        ax.bar(range(len(table)), table["probability"], color="0.6")
        ax.set_xticks(range(len(table)))
        ax.set_xticklabels(levels, rotation=30, ha="right")
        for i, count in enumerate(table["count"]):
            ax.annotate(str(int(count)), xy=(i, table["probability"].iloc[i]),
                        ha="center", va="bottom", fontsize=7)
        ax.set_ylabel("marginal probability")
        ax.set_title(f"{title} (passenger counts annotated)")

    inter = pd_tables["interaction"]
    ax = axes[1][1]
    occupations = list(dict.fromkeys(inter["occupation"].astype(str)))
    groups = list(dict.fromkeys(inter["citizenship_group"].astype(str)))
    linestyles = ["-", "--", ":", "-.", (0, (3, 1, 1, 1))]
    for k, group in enumerate(groups):
        sub = inter[inter["citizenship_group"].astype(str) == group]
        values = [float(sub[sub["occupation"].astype(str) == o]["probability"].iloc[0])
                  for o in occupations]
        ax.plot(range(len(occupations)), values,
                linestyle=linestyles[k % len(linestyles)], color="black",
                label=group)
    ax.set_xticks(range(len(occupations)))
    ax.set_xticklabels(occupations, rotation=30, ha="right")
    ax.set_ylabel("marginal probability")
    ax.set_title("Occupation by citizenship group")
    ax.legend(frameon=False, fontsize=7)
    fig.suptitle("Marginal effects of selected passenger traits")
    fig.tight_layout()
    return fig


def load_pd_tables(pd_dir):
    tables = {}
    for key, filename in PD_FILES.items():
        path = os.path.join(pd_dir, filename)
        first_cols = {"age": ("age",), "occupation": ("occupation",),
                      "visit_reason": ("visit_reason",),
                      "interaction": ("occupation", "citizenship_group")}[key]
        tables[key] = read_table(path, first_cols + PD_SINGLE_REQUIRED)
    return tables


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Importance bars and marginal-effect panels")
    parser.add_argument("--in", dest="infile", required=True,
                        help="importance CSV")
    parser.add_argument("--pd-dir", required=True,
                        help="directory holding the pd_*.csv tables")
    parser.add_argument("--out", required=True,
                        help="output SVG for the importance bars")
    parser.add_argument("--out-effects", required=True,
                        help="output SVG for the marginal-effect panels")

    def render(args):
        importance = read_table(args.infile, IMPORTANCE_REQUIRED)
        tables = load_pd_tables(args.pd_dir)
        save_figure(build_importance_figure(importance), args.out)
        save_figure(build_effects_figure(tables), args.out_effects)

    return run_cli(parser, render, argv)


if __name__ == "__main__":
    sys.exit(main())
