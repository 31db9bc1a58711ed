"""Label-stratified repeated k-fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CvError(ValueError):
    """Raised when a cross-validation plan cannot be constructed."""


@dataclass(frozen=True)
class CvPlan:
    """Fold assignments for every repeat: `assignment[r, i]` is row i's
    test fold in repeat r. Within each label stratum fold sizes differ by
    at most one."""

    n: int
    folds: int
    repeats: int
    seed: int
    assignment: np.ndarray  # (repeats, n) int8

    def __post_init__(self):
        self.assignment.flags.writeable = False

    def test_indices(self, repeat: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment[repeat] == fold)

    def train_indices(self, repeat: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment[repeat] != fold)

    def iter_folds(self):
        for repeat in range(self.repeats):
            for fold in range(self.folds):
                yield repeat, fold


def make_cv_plan(labels, folds: int = 10, repeats: int = 10, seed: int = 0) -> CvPlan:
    """Stratified fold assignment, deterministic given the seed."""
    labels = np.asarray(labels)
    n = len(labels)
    if folds < 2:
        raise CvError(f"folds must be >= 2, got {folds}")
    assignment = np.empty((repeats, n), dtype=np.int8)
    strata = [np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)]
    for stratum in strata:
        if len(stratum) < folds:
            raise CvError(
                f"stratum of size {len(stratum)} is smaller than folds={folds}")
    for repeat in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence((seed, repeat)))
        totals = np.zeros(folds, dtype=np.int64)
        for stratum in strata:
            perm = rng.permutation(stratum)
            base, rem = divmod(len(stratum), folds)
            # Put the remainder on the currently smallest folds so overall
            # fold sizes stay within one of each other too.
            order = np.lexsort((np.arange(folds), totals))
            extra = set(order[:rem].tolist())
            pos = 0
            for f in range(folds):
                count = base + (1 if f in extra else 0)
                assignment[repeat, perm[pos: pos + count]] = f
                totals[f] += count
                pos += count
    return CvPlan(n=n, folds=folds, repeats=repeats, seed=seed,
                  assignment=assignment)
