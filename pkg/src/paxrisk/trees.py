"""Classification/regression trees and the two ensembles built on them.

The random forest votes over fully grown trees fit to bootstrap resamples;
the gradient boosting machine fits shallow regression trees to Bernoulli
residuals with one-step Newton leaf estimates. Both run on exact binned
features (see _tree_kernels) and serialize to JSON for bit-exact reload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _tree_kernels as tk
from .metrics import auc

LEAF = tk.LEAF


class TreeFitError(ValueError):
    """Raised for invalid tree/ensemble fitting inputs."""


@dataclass(frozen=True)
class BinnedMatrix:
    """Exact per-column binning: bin ids index sorted distinct values."""

    bins_t: np.ndarray      # (p, n) uint16, column-major access
    n_bins: np.ndarray      # (p,) int64
    bin_values: np.ndarray  # (p, max_bins) float64, padded with trailing zeros

    @property
    def p(self) -> int:
        return self.bins_t.shape[0]

    @property
    def n(self) -> int:
        return self.bins_t.shape[1]


def bin_matrix(X: np.ndarray) -> BinnedMatrix:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise TreeFitError("feature matrix must be 2-D")
    n, p = X.shape
    bins_t = np.empty((p, n), dtype=np.uint16)
    n_bins = np.empty(p, dtype=np.int64)
    per_col = []
    for j in range(p):
        vals = np.unique(X[:, j])
        if len(vals) > 65535:
            raise TreeFitError(f"column {j} has too many distinct values to bin")
        bins_t[j] = np.searchsorted(vals, X[:, j]).astype(np.uint16)
        n_bins[j] = len(vals)
        per_col.append(vals)
    max_bins = int(n_bins.max()) if p else 1
    bin_values = np.zeros((p, max_bins), dtype=np.float64)
    for j in range(p):
        bin_values[j, : n_bins[j]] = per_col[j]
    return BinnedMatrix(bins_t=bins_t, n_bins=n_bins, bin_values=bin_values)


@dataclass(frozen=True)
class Tree:
    """Flat-array binary tree: `feature == -1` marks a leaf.

    `value` holds the leaf payload (class vote for forest trees, Newton
    log-odds step for boosting trees), `weight` the training-weight sum
    per node, and `gain` the split improvement used for influence.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value", "weight", "gain"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def leaf_for(self, x: np.ndarray) -> int:
        node = 0
        while self.feature[node] != LEAF:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] \
                else self.right[node]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.array([self.value[self.leaf_for(row)] for row in X])

    def max_depth(self) -> int:
        depth = {0: 0}
        out = 0
        for node in range(self.n_nodes):
            d = depth[node]
            out = max(out, d)
            if self.feature[node] != LEAF:
                depth[int(self.left[node])] = d + 1
                depth[int(self.right[node])] = d + 1
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "weight": self.weight.tolist(),
            "gain": self.gain.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Tree":
        return Tree(
            feature=np.array(d["feature"], dtype=np.int32),
            threshold=np.array(d["threshold"], dtype=np.float64),
            left=np.array(d["left"], dtype=np.int32),
            right=np.array(d["right"], dtype=np.int32),
            value=np.array(d["value"], dtype=np.float64),
            weight=np.array(d["weight"], dtype=np.float64),
            gain=np.array(d["gain"], dtype=np.float64),
        )


def _scratch(n_rows: int, p: int, max_bins: int, subtract_levels: int = 0):
    max_nodes = 2 * n_rows + 1
    levels = max(subtract_levels, 1)
    return dict(
        feature=np.empty(max_nodes, dtype=np.int32),
        thr_bin=np.empty(max_nodes, dtype=np.int32),
        left=np.empty(max_nodes, dtype=np.int32),
        right=np.empty(max_nodes, dtype=np.int32),
        node_s=np.zeros(max_nodes, dtype=np.float64),
        node_h=np.zeros(max_nodes, dtype=np.float64),
        node_w=np.zeros(max_nodes, dtype=np.float64),
        node_gain=np.zeros(max_nodes, dtype=np.float64),
        node_depth=np.zeros(max_nodes, dtype=np.int32),
        leaf_of_pos=np.empty(n_rows, dtype=np.int64),
        hist_w=np.zeros((p, max_bins), dtype=np.float64),
        hist_s=np.zeros((p, max_bins), dtype=np.float64),
        stack_hist_w=np.zeros((levels, p, max_bins) if subtract_levels else (1, 1, 1),
                              dtype=np.float64),
        stack_hist_s=np.zeros((levels, p, max_bins) if subtract_levels else (1, 1, 1),
                              dtype=np.float64),
        col_perm=np.empty(p, dtype=np.int64),
        rows_buf=np.empty(n_rows, dtype=np.int64),
        stack_start=np.empty(max_nodes + 2, dtype=np.int64),
        stack_end=np.empty(max_nodes + 2, dtype=np.int64),
        stack_depth=np.empty(max_nodes + 2, dtype=np.int64),
        stack_node=np.empty(max_nodes + 2, dtype=np.int64),
        stack_wsum=np.empty(max_nodes + 2, dtype=np.float64),
        stack_ssum=np.empty(max_nodes + 2, dtype=np.float64),
        stack_hsum=np.empty(max_nodes + 2, dtype=np.float64),
        stack_mode=np.empty(max_nodes + 2, dtype=np.int64),
    )


def _grow(binned: BinnedMatrix, g, h, w, rows, n_rows, max_depth, min_node_weight,
          mtry, rng_state, scratch, *, need_h=False, binary_targets=False,
          use_subtract=False):
    n_nodes = tk.grow_tree(
        binned.bins_t, binned.n_bins, g, h, w, rows, n_rows,
        max_depth, min_node_weight, mtry, rng_state,
        need_h, binary_targets, use_subtract,
        scratch["feature"], scratch["thr_bin"], scratch["left"], scratch["right"],
        scratch["node_s"], scratch["node_h"], scratch["node_w"],
        scratch["node_gain"], scratch["node_depth"], scratch["leaf_of_pos"],
        scratch["hist_w"], scratch["hist_s"],
        scratch["stack_hist_w"], scratch["stack_hist_s"],
        scratch["col_perm"], scratch["rows_buf"],
        scratch["stack_start"], scratch["stack_end"], scratch["stack_depth"],
        scratch["stack_node"], scratch["stack_wsum"], scratch["stack_ssum"],
        scratch["stack_hsum"], scratch["stack_mode"])
    return n_nodes


def _real_thresholds(binned: BinnedMatrix, feature, thr_bin, n_nodes) -> np.ndarray:
    thr = np.zeros(n_nodes, dtype=np.float64)
    for node in range(n_nodes):
        c = feature[node]
        if c != LEAF:
            b = thr_bin[node]
            thr[node] = 0.5 * (binned.bin_values[c, b] + binned.bin_values[c, b + 1])
    return thr


def fit_tree(X, targets, weights=None, *, max_depth=6, min_node_weight=1.0,
             mtry=0, mode="regression", seed=0) -> Tree:
    """Greedy binary CART fit.

    mode="regression" minimizes weighted squared error (leaf = weighted
    mean); mode="classification" takes 0/1 targets, splits by Gini
    impurity decrease, and stores the majority class per leaf. A root with
    no valid split yields a single-leaf tree.
    """
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = X.shape[0]
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    if len(targets) != n or len(weights) != n:
        raise TreeFitError("rows(X), targets, and weights must have equal length")
    if (weights < 0).any() or weights.sum() <= 0:
        raise TreeFitError("weights must be nonnegative and not all zero")
    if mode not in ("regression", "classification"):
        raise TreeFitError(f"unknown mode {mode!r}")
    if mode == "classification" and not np.isin(targets, (0.0, 1.0)).all():
        raise TreeFitError("classification targets must be 0/1")
    if mtry > X.shape[1]:
        raise TreeFitError(f"mtry={mtry} exceeds column count {X.shape[1]}")

    binned = bin_matrix(X)
    scratch = _scratch(n, binned.p, int(binned.n_bins.max()))
    rows = np.arange(n, dtype=np.int64)
    g = targets
    state = np.uint64(tk.derive_stream(np.uint64(seed & (2**64 - 1)), np.uint64(0)))
    n_nodes = _grow(binned, g, g, weights, rows, n, max_depth,
                    float(min_node_weight), int(mtry), state, scratch,
                    binary_targets=(mode == "classification"))

    value = np.zeros(n_nodes)
    for node in range(n_nodes):
        if scratch["feature"][node] == LEAF:
            W = scratch["node_w"][node]
            S = scratch["node_s"][node]
            if mode == "regression":
                value[node] = S / W if W > 0 else 0.0
            else:
                value[node] = 1.0 if S > 0.5 * W else 0.0
    return Tree(
        feature=scratch["feature"][:n_nodes].copy(),
        threshold=_real_thresholds(binned, scratch["feature"], scratch["thr_bin"], n_nodes),
        left=scratch["left"][:n_nodes].copy(),
        right=scratch["right"][:n_nodes].copy(),
        value=value,
        weight=scratch["node_w"][:n_nodes].copy(),
        gain=scratch["node_gain"][:n_nodes].copy(),
    )


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestModel:
    """Bootstrap ensemble of fully grown classification trees.

    Probability prediction is the fraction of trees whose leaf majority
    votes class 1, so predictions live on the grid {0, 1/n_trees, ..., 1}.
    """

    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    gain: np.ndarray
    n_trees: int
    mtry: int
    seed: int

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return tk.forest_vote_fraction(self.offsets, self.feature, self.threshold,
                                       self.left, self.right, self.value, X)

    @property
    def trees(self) -> list[Tree]:
        return _unpack_trees(self)

    def to_dict(self) -> dict:
        d = _pack_to_dict(self)
        d.update({"kind": "forest", "n_trees": self.n_trees, "mtry": self.mtry,
                  "seed": self.seed})
        return d

    @staticmethod
    def from_dict(d: dict) -> "ForestModel":
        return ForestModel(**_pack_from_dict(d), n_trees=int(d["n_trees"]),
                           mtry=int(d["mtry"]), seed=int(d["seed"]))


def _pack_to_dict(m) -> dict:
    return {
        "offsets": m.offsets.tolist(),
        "feature": m.feature.tolist(),
        "threshold": m.threshold.tolist(),
        "left": m.left.tolist(),
        "right": m.right.tolist(),
        "value": m.value.tolist(),
        "weight": m.weight.tolist(),
        "gain": m.gain.tolist(),
    }


def _pack_from_dict(d: dict) -> dict:
    return dict(
        offsets=np.array(d["offsets"], dtype=np.int64),
        feature=np.array(d["feature"], dtype=np.int32),
        threshold=np.array(d["threshold"], dtype=np.float64),
        left=np.array(d["left"], dtype=np.int32),
        right=np.array(d["right"], dtype=np.int32),
        value=np.array(d["value"], dtype=np.float64),
        weight=np.array(d["weight"], dtype=np.float64),
        gain=np.array(d["gain"], dtype=np.float64),
    )


def _unpack_trees(m) -> list[Tree]:
    out = []
    for t in range(len(m.offsets) - 1):
        lo, hi = int(m.offsets[t]), int(m.offsets[t + 1])
        out.append(Tree(
            feature=m.feature[lo:hi].copy(),
            threshold=m.threshold[lo:hi].copy(),
            left=m.left[lo:hi].copy(),
            right=m.right[lo:hi].copy(),
            value=m.value[lo:hi].copy(),
            weight=m.weight[lo:hi].copy(),
            gain=m.gain[lo:hi].copy(),
        ))
    return out


def fit_random_forest(X, y, *, n_trees=500, mtry=2, seed=0,
                      min_node_weight=1.0, max_depth=100000) -> ForestModel:
    """Forest of trees grown until pure (or single-row nodes) on bootstrap
    resamples, sampling `mtry` split candidates per node."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if not ((y == 1).any() and (y == 0).any()):
        raise TreeFitError("both classes must be present")
    if mtry > p:
        raise TreeFitError(f"mtry={mtry} exceeds column count {p}")
    if mtry < 1:
        raise TreeFitError("mtry must be >= 1")

    binned = bin_matrix(X)
    scratch = _scratch(n, p, int(binned.n_bins.max()))
    rows = np.empty(n, dtype=np.int64)
    mult = np.empty(n, dtype=np.float64)

    parts = {k: [] for k in ("feature", "threshold", "left", "right", "value",
                             "weight", "gain")}
    offsets = [0]
    for t in range(n_trees):
        seed64 = np.uint64(seed & (2**64 - 1))
        state_boot = np.uint64(tk.derive_stream(seed64, np.uint64(2 * t)))
        state_mtry = np.uint64(tk.derive_stream(seed64, np.uint64(2 * t + 1)))
        n_unique = int(tk.bootstrap_unique(n, state_boot, rows, mult))
        n_nodes = _grow(binned, y, y, mult, rows, n_unique, max_depth,
                        float(min_node_weight), int(mtry), state_mtry, scratch,
                        binary_targets=True)
        value = np.zeros(n_nodes)
        for node in range(n_nodes):
            if scratch["feature"][node] == LEAF:
                value[node] = 1.0 if scratch["node_s"][node] > 0.5 * scratch["node_w"][node] \
                    else 0.0
        parts["feature"].append(scratch["feature"][:n_nodes].copy())
        parts["threshold"].append(
            _real_thresholds(binned, scratch["feature"], scratch["thr_bin"], n_nodes))
        parts["left"].append(scratch["left"][:n_nodes].copy())
        parts["right"].append(scratch["right"][:n_nodes].copy())
        parts["value"].append(value)
        parts["weight"].append(scratch["node_w"][:n_nodes].copy())
        parts["gain"].append(scratch["node_gain"][:n_nodes].copy())
        offsets.append(offsets[-1] + n_nodes)

    return ForestModel(
        offsets=np.array(offsets, dtype=np.int64),
        feature=np.concatenate(parts["feature"]),
        threshold=np.concatenate(parts["threshold"]),
        left=np.concatenate(parts["left"]),
        right=np.concatenate(parts["right"]),
        value=np.concatenate(parts["value"]),
        weight=np.concatenate(parts["weight"]),
        gain=np.concatenate(parts["gain"]),
        n_trees=n_trees, mtry=mtry, seed=seed)


# ---------------------------------------------------------------------------
# Gradient boosting machine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GbmModel:
    """Bernoulli-deviance boosting model.

    Prediction is inverse-logit(F0 + nu * sum of tree outputs). Staged
    prediction with the first k trees reproduces the training state at
    iteration k exactly (boosting has no row subsampling here).
    """

    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    gain: np.ndarray
    f0: float
    nu: float
    n_trees: int
    interaction_depth: int
    seed: int
    deviance_trace: np.ndarray | None = None
    observation_weights: np.ndarray | None = field(default=None, repr=False)

    def predict_logodds(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return tk.ensemble_logodds(self.offsets, self.feature, self.threshold,
                                   self.left, self.right, self.value, X,
                                   self.f0, self.nu)

    def predict_proba(self, X) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.predict_logodds(X)))

    def staged_logodds(self, X, iterations) -> np.ndarray:
        """Log-odds after each iteration count in `iterations` (ascending)."""
        X = np.ascontiguousarray(X, dtype=float)
        ck = np.asarray(iterations, dtype=np.int64)
        return tk.staged_logodds(self.offsets, self.feature, self.threshold,
                                 self.left, self.right, self.value, X,
                                 self.f0, self.nu, ck)

    def truncated(self, k: int) -> "GbmModel":
        """The model consisting of the first k trees."""
        if not 0 <= k <= self.n_trees:
            raise TreeFitError(f"k={k} outside [0, {self.n_trees}]")
        hi = int(self.offsets[k])
        return GbmModel(
            offsets=self.offsets[: k + 1].copy(), feature=self.feature[:hi].copy(),
            threshold=self.threshold[:hi].copy(), left=self.left[:hi].copy(),
            right=self.right[:hi].copy(), value=self.value[:hi].copy(),
            weight=self.weight[:hi].copy(), gain=self.gain[:hi].copy(),
            f0=self.f0, nu=self.nu, n_trees=k,
            interaction_depth=self.interaction_depth, seed=self.seed)

    @property
    def trees(self) -> list[Tree]:
        return _unpack_trees(self)

    def to_dict(self) -> dict:
        d = _pack_to_dict(self)
        d.update({
            "kind": "gbm", "f0": self.f0, "nu": self.nu, "n_trees": self.n_trees,
            "interaction_depth": self.interaction_depth, "seed": self.seed,
            "observation_weights": None if self.observation_weights is None
            else self.observation_weights.tolist(),
        })
        return d

    @staticmethod
    def from_dict(d: dict) -> "GbmModel":
        ow = d.get("observation_weights")
        return GbmModel(**_pack_from_dict(d), f0=float(d["f0"]), nu=float(d["nu"]),
                        n_trees=int(d["n_trees"]),
                        interaction_depth=int(d["interaction_depth"]),
                        seed=int(d["seed"]),
                        observation_weights=None if ow is None else np.array(ow))


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") == "forest":
        return ForestModel.from_dict(d)
    if d.get("kind") == "gbm":
        return GbmModel.from_dict(d)
    raise TreeFitError(f"unknown model kind {d.get('kind')!r}")


def fit_gbm(X, y, weights=None, *, nu=0.01, n_trees=100, interaction_depth=2,
            seed=0, min_node_weight=10.0, x_test=None, checkpoints=None,
            trace_deviance=False) -> tuple[GbmModel, np.ndarray | None]:
    """Boosting fit; optionally records staged test predictions.

    Returns (model, checkpoint_probs) where checkpoint_probs[i] holds the
    test-set probabilities after checkpoints[i] iterations (None when no
    test matrix is supplied).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    if len(y) != n or len(weights) != n:
        raise TreeFitError("rows(X), y, and weights must have equal length")
    if not ((y == 1).any() and (y == 0).any()):
        raise TreeFitError("both classes must be present")
    if not 0.0 < nu <= 1.0:
        raise TreeFitError(f"learning rate must lie in (0, 1], got {nu}")

    sw1 = float((weights * y).sum())
    sw0 = float((weights * (1.0 - y)).sum())
    f0 = float(np.log(sw1 / sw0))

    binned = bin_matrix(X)
    if x_test is None:
        x_test_arr = np.empty((0, X.shape[1]), dtype=np.float64)
    else:
        x_test_arr = np.ascontiguousarray(x_test, dtype=np.float64)
    ck = np.asarray(sorted(checkpoints or []), dtype=np.int64)

    (offsets, feature, threshold, left, right, value, weight, gain,
     checkpoint_f, trace, _) = tk.gbm_path(
        binned.bins_t, binned.n_bins, binned.bin_values, y, weights,
        f0, float(nu), int(n_trees), int(interaction_depth),
        float(min_node_weight), x_test_arr, ck, trace_deviance)

    model = GbmModel(
        offsets=offsets, feature=feature, threshold=threshold, left=left,
        right=right, value=value, weight=weight, gain=gain, f0=f0, nu=float(nu),
        n_trees=int(n_trees), interaction_depth=int(interaction_depth),
        seed=int(seed),
        deviance_trace=trace if trace_deviance else None,
        observation_weights=weights.copy())
    if x_test is None:
        return model, None
    return model, 1.0 / (1.0 + np.exp(-checkpoint_f))


def raw_influence(model: GbmModel, n_columns: int) -> np.ndarray:
    """Total split-gain improvement accumulated per feature column."""
    out = np.zeros(n_columns)
    mask = model.feature != LEAF
    np.add.at(out, model.feature[mask], model.gain[mask])
    return out


# ---------------------------------------------------------------------------
# GBM with custom feature selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GbmCustomResult:
    """Outcome of the screening-and-refit selection pipeline."""

    selected: tuple[str, ...]            # surviving column names
    selected_indices: np.ndarray         # indices into the supplied matrix
    model: GbmModel                      # final fit on the surviving columns
    screen_auc: dict[str, float]         # mean single-variable test AUC
    dropped_screen: tuple[str, ...]      # failed the AUC gate
    dropped_influence: tuple[str, ...]   # zero relative influence
    intercept_only: bool

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.intercept_only:
            return np.full(X.shape[0], 1.0 / (1.0 + np.exp(-self.model.f0)))
        return self.model.predict_proba(X[:, self.selected_indices])


def gbm_custom_select(X, y, column_names, *, seed=0, n_splits=5, test_fraction=0.3,
                      auc_gate=0.51, positive_weight=7.0, negative_weight=1.0,
                      nu=0.005, n_trees=200, interaction_depth=2,
                      min_node_weight=10.0) -> GbmCustomResult:
    """Screen variables by single-variable GBM test AUC, then by influence.

    Five random 70:30 train/test splits score each dummy-encoded column with
    its own weighted GBM; columns averaging test AUC below the gate are
    dropped. A multivariable GBM then drops zero-influence columns, and the
    final model is refit on the survivors. If everything is eliminated the
    result degrades to an intercept-only model at the weighted base rate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    column_names = tuple(column_names)
    if len(column_names) != p:
        raise TreeFitError("column_names length must match columns of X")
    weights = np.where(y == 1, positive_weight, negative_weight)

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    pos_idx = np.flatnonzero(y == 1)
    neg_idx = np.flatnonzero(y == 0)
    split_pairs = []
    for _ in range(n_splits):
        # Stratified 70:30 so every test part contains both classes.
        test_parts = []
        for idx in (pos_idx, neg_idx):
            perm = rng.permutation(idx)
            n_test = max(1, int(round(test_fraction * len(idx))))
            test_parts.append(perm[:n_test])
        test_idx = np.sort(np.concatenate(test_parts))
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        split_pairs.append((np.flatnonzero(mask), test_idx))

    screen_auc = {}
    survivors = []
    for j in range(p):
        aucs = []
        for train_idx, test_idx in split_pairs:
            model, _ = fit_gbm(
                X[train_idx][:, [j]], y[train_idx], weights[train_idx],
                nu=nu, n_trees=n_trees, interaction_depth=interaction_depth,
                seed=seed, min_node_weight=min_node_weight)
            scores = model.predict_proba(X[test_idx][:, [j]])
            aucs.append(auc(scores, y[test_idx]))
        mean_auc = float(np.mean(aucs))
        screen_auc[column_names[j]] = mean_auc
        if mean_auc >= auc_gate:
            survivors.append(j)
    dropped_screen = tuple(column_names[j] for j in range(p) if j not in set(survivors))

    def intercept_only_result(dropped_influence=()):
        base_model, _ = _intercept_only_gbm(y, weights, nu, interaction_depth, seed)
        return GbmCustomResult(
            selected=(), selected_indices=np.array([], dtype=np.int64),
            model=base_model, screen_auc=screen_auc,
            dropped_screen=dropped_screen, dropped_influence=tuple(dropped_influence),
            intercept_only=True)

    if not survivors:
        return intercept_only_result()

    mid_model, _ = fit_gbm(
        X[:, survivors], y, weights, nu=nu, n_trees=n_trees,
        interaction_depth=interaction_depth, seed=seed,
        min_node_weight=min_node_weight)
    influence = raw_influence(mid_model, len(survivors))
    final_cols = [survivors[j] for j in range(len(survivors)) if influence[j] > 0.0]
    dropped_influence = tuple(column_names[survivors[j]]
                              for j in range(len(survivors)) if influence[j] <= 0.0)
    if not final_cols:
        return intercept_only_result(dropped_influence)

    final_model, _ = fit_gbm(
        X[:, final_cols], y, weights, nu=nu, n_trees=n_trees,
        interaction_depth=interaction_depth, seed=seed,
        min_node_weight=min_node_weight)
    return GbmCustomResult(
        selected=tuple(column_names[j] for j in final_cols),
        selected_indices=np.array(final_cols, dtype=np.int64),
        model=final_model, screen_auc=screen_auc,
        dropped_screen=dropped_screen, dropped_influence=dropped_influence,
        intercept_only=False)


def _intercept_only_gbm(y, weights, nu, depth, seed):
    sw1 = float((weights * y).sum())
    sw0 = float((weights * (1.0 - y)).sum())
    f0 = float(np.log(sw1 / sw0))
    model = GbmModel(
        offsets=np.array([0], dtype=np.int64),
        feature=np.array([], dtype=np.int32),
        threshold=np.array([], dtype=np.float64),
        left=np.array([], dtype=np.int32),
        right=np.array([], dtype=np.int32),
        value=np.array([], dtype=np.float64),
        weight=np.array([], dtype=np.float64),
        gain=np.array([], dtype=np.float64),
        f0=f0, nu=nu, n_trees=0, interaction_depth=depth, seed=seed)
    return model, None
