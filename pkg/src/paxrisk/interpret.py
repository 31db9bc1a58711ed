"""Variable importance and marginal effects for fitted boosting models.

Relative influence sums each split's squared-error improvement back to the
source passenger trait and standardizes the result to 100. Partial
dependence descends every tree with the target trait forced to a grid
value and all other splits routing rows by their own data, which
reproduces brute-force substitution exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _tree_kernels as tk
from .schema import ColumnInfo
from .trees import GbmModel, raw_influence


class InterpretError(ValueError):
    pass


@dataclass(frozen=True)
class ImportanceTable:
    """Per-trait relative influence standardized to sum to 100."""

    values: dict[str, float]
    zero_influence: bool = False   # intercept-only model; all entries zero

    def total(self) -> float:
        return float(sum(self.values.values()))


def relative_influence(model: GbmModel, column_meta: tuple[ColumnInfo, ...]
                       ) -> ImportanceTable:
    """Split-gain importance grouped by source trait, normalized to 100."""
    per_column = raw_influence(model, len(column_meta))
    traits: dict[str, float] = {}
    for j, col in enumerate(column_meta):
        traits[col.source] = traits.get(col.source, 0.0) + float(per_column[j])
    total = sum(traits.values())
    if total <= 0.0:
        return ImportanceTable(values={t: 0.0 for t in traits}, zero_influence=True)
    return ImportanceTable(
        values={t: 100.0 * v / total for t, v in traits.items()})


def pd_logodds(model: GbmModel, X: np.ndarray, target_cols, target_values) -> float:
    """Model log-odds with `target_cols` forced to `target_values`,
    averaged over the rows of X (exact tree-traversal computation)."""
    X = np.ascontiguousarray(X, dtype=float)
    p = X.shape[1]
    is_target = np.zeros(p, dtype=np.bool_)
    target_val = np.zeros(p, dtype=np.float64)
    for c, v in zip(target_cols, target_values):
        is_target[c] = True
        target_val[c] = v
    return float(tk.pd_routing(model.offsets, model.feature, model.threshold,
                               model.left, model.right, model.value, X,
                               is_target, target_val, model.f0, model.nu))


def pd_logodds_brute(model: GbmModel, X: np.ndarray, target_cols,
                     target_values) -> float:
    """Oracle: substitute the assignment into every row and average the
    full-model log-odds."""
    X_sub = np.array(X, dtype=float)
    for c, v in zip(target_cols, target_values):
        X_sub[:, c] = v
    return float(model.predict_logodds(X_sub).mean())


@dataclass(frozen=True)
class PdpGrid:
    """Marginal-effect evaluations for one trait (optionally crossed with
    a second trait for interaction panels)."""

    trait: str
    points: tuple          # grid labels: ages or level names
    logodds: np.ndarray
    probability: np.ndarray
    counts: np.ndarray     # observations at each point (first trait)
    second_trait: str | None = None
    second_points: tuple = ()
    # For interaction grids, logodds/probability have shape
    # (len(points), len(second_points)); otherwise (len(points),).


def _trait_assignments(column_meta, trait, point):
    """Column/value assignment forcing `trait` to `point`.

    For age: the linear age column takes the value. For a categorical:
    its dummy columns are set to the one-hot code of the level (all zero
    for the reference level).
    """
    cols, vals = [], []
    found = False
    for j, col in enumerate(column_meta):
        if col.source != trait:
            continue
        found = True
        if col.kind == "linear":
            cols.append(j)
            vals.append(float(point))
        elif col.kind == "dummy":
            cols.append(j)
            vals.append(1.0 if col.level == str(point) else 0.0)
    if not found:
        raise InterpretError(f"trait {trait!r} has no columns in this model")
    return cols, vals


def _trait_points(column_meta, trait, X, dataset=None):
    """Observed-range grid and per-point counts for one trait."""
    if trait == "age":
        age_col = [j for j, c in enumerate(column_meta)
                   if c.source == "age" and c.kind == "linear"]
        ages = X[:, age_col[0]].astype(int)
        points = tuple(int(a) for a in np.unique(ages))
        counts = np.array([(ages == a).sum() for a in points])
        return points, counts
    dummy_cols = {c.level: j for j, c in enumerate(column_meta)
                  if c.source == trait and c.kind == "dummy"}
    if not dummy_cols:
        raise InterpretError(f"trait {trait!r} has no columns in this model")
    onehots = X[:, list(dummy_cols.values())]
    ref_count = int((onehots.sum(axis=1) == 0).sum())
    levels = []
    if dataset is not None:
        observed = sorted(set(np.asarray(getattr(dataset, trait)).astype(str)))
        ref = [l for l in observed if l not in dummy_cols]
        levels = ref + [l for l in observed if l in dummy_cols]
        counts = []
        col_of = dummy_cols
        for l in levels:
            if l in col_of:
                counts.append(int(X[:, col_of[l]].sum()))
            else:
                counts.append(ref_count)
        return tuple(levels), np.array(counts)
    levels = ["<reference>"] + sorted(dummy_cols)
    counts = np.array([ref_count] + [int(X[:, dummy_cols[l]].sum())
                                     for l in sorted(dummy_cols)])
    return tuple(levels), counts


def partial_dependence(model: GbmModel, column_meta: tuple[ColumnInfo, ...],
                       trait: str, X: np.ndarray, *, second_trait: str | None = None,
                       dataset=None) -> PdpGrid:
    """Tree-traversal marginal effect of one trait (or a trait pair).

    Evaluation points cover the observed range only: every observed
    integer age, or the observed levels of a categorical. A trait absent
    from the model's split set yields a constant grid at the base rate.
    """
    X = np.asarray(X, dtype=float)
    points, counts = _trait_points(column_meta, trait, X, dataset)
    if second_trait is None:
        logodds = np.empty(len(points))
        for i, pt in enumerate(points):
            cols, vals = _trait_assignments(column_meta, trait, pt)
            logodds[i] = pd_logodds(model, X, cols, vals)
        return PdpGrid(trait=trait, points=points, logodds=logodds,
                       probability=1.0 / (1.0 + np.exp(-logodds)), counts=counts)
    points2, _ = _trait_points(column_meta, second_trait, X, dataset)
    logodds = np.empty((len(points), len(points2)))
    for i, pt in enumerate(points):
        cols1, vals1 = _trait_assignments(column_meta, trait, pt)
        for k, pt2 in enumerate(points2):
            cols2, vals2 = _trait_assignments(column_meta, second_trait, pt2)
            logodds[i, k] = pd_logodds(model, X, cols1 + cols2, vals1 + vals2)
    return PdpGrid(trait=trait, points=points, logodds=logodds,
                   probability=1.0 / (1.0 + np.exp(-logodds)), counts=counts,
                   second_trait=second_trait, second_points=points2)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def importance_to_csv(table: ImportanceTable, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trait", "relative_influence"])
        for trait, value in sorted(table.values.items(), key=lambda kv: -kv[1]):
            writer.writerow([trait, repr(value)])


def pdp_to_csv(grid: PdpGrid, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if grid.second_trait is None:
            writer.writerow([grid.trait, "count", "logodds", "probability"])
            for i, pt in enumerate(grid.points):
                writer.writerow([pt, int(grid.counts[i]),
                                 repr(float(grid.logodds[i])),
                                 repr(float(grid.probability[i]))])
        else:
            writer.writerow([grid.trait, grid.second_trait, "count",
                             "logodds", "probability"])
            for i, pt in enumerate(grid.points):
                for k, pt2 in enumerate(grid.second_points):
                    writer.writerow([pt, pt2, int(grid.counts[i]),
                                     repr(float(grid.logodds[i, k])),
                                     repr(float(grid.probability[i, k]))])
