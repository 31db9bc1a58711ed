#!/usr/bin/env python3
"""Reproduce the complete model-comparison experiment end to end.

Generates the canonical synthetic dataset, runs the 7-model, 2-stage,
10x10-fold study with tuning, produces the interpretation tables, and (if
the paxfigs package is installed) renders the four figures. Resumable:
completed fold tasks are reused from <out>/study/fold_cache.

    python3 scripts/run_full_study.py --out out/full --jobs 8
"""

import argparse
import os
import shutil
import subprocess
import sys

from paxrisk.cli import main as paxrisk_main


def run(args):
    study_dir = os.path.join(args.out, "study")
    interpret_dir = os.path.join(args.out, "interpret")
    figures_dir = os.path.join(args.out, "figures")

    rc = paxrisk_main(["generate", "--out", os.path.join(args.out, "data")])
    if rc:
        return rc
    rc = paxrisk_main(["study", "--out", study_dir, "--jobs", str(args.jobs),
                       "--resume"] + (["--verbose"] if args.verbose else []))
    if rc:
        return rc
    rc = paxrisk_main(["interpret", "--out", interpret_dir])
    if rc:
        return rc

    if shutil.which("paxfigs-metrics") is None:
        print("paxfigs not installed; skipping figure rendering "
              "(pip install -e figures/)")
        return 0
    os.makedirs(figures_dir, exist_ok=True)
    calls = [
        ["paxfigs-metrics", "--in", os.path.join(study_dir, "outcomes.csv"),
         "--out", os.path.join(figures_dir, "metrics_boxplots.svg")],
        ["paxfigs-efficiency", "--in", os.path.join(study_dir, "efficiency.csv"),
         "--out", os.path.join(figures_dir, "efficiency_curves.svg")],
        ["paxfigs-importance", "--in", os.path.join(interpret_dir, "importance.csv"),
         "--pd-dir", interpret_dir,
         "--out", os.path.join(figures_dir, "importance_bars.svg"),
         "--out-effects", os.path.join(figures_dir, "marginal_effects.svg")],
    ]
    for cmd in calls:
        result = subprocess.run(cmd)
        if result.returncode:
            return result.returncode
    print(f"figures written to {figures_dir}")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/full")
    parser.add_argument("--jobs", type=int, default=max(1, os.cpu_count() or 1))
    parser.add_argument("--verbose", action="store_true")
    sys.exit(run(parser.parse_args()))
