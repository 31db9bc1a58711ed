"""Numba kernels for binned CART growth, boosting paths, and forests.

Features are pre-binned to their sorted distinct values (exact, not
approximate, since ages are small integers and the remaining columns are
dummies). Split search scans bin histograms; recorded thresholds are
midpoints of adjacent distinct training values so prediction works on raw
float matrices. All randomness flows through an explicit splitmix64 state
so parallel and serial fits agree bit for bit.

Two growth modes share one kernel: a plain mode that accumulates only the
sampled candidate columns per node (random forest), and a subtraction mode
for shallow all-column trees (boosting) that keeps one histogram per tree
level and derives the larger child's histogram as parent minus sibling.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1
MODE_ACC = 0    # accumulate own histogram and keep it for the sibling
MODE_SUB = 1    # histogram = parent level minus sibling level
MODE_NONE = 2   # leaf-immediate or plain mode; no stacked histogram

_MIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _next_u64(state):
    state = state + _MIX_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX_M1
    z = (z ^ (z >> np.uint64(27))) * _MIX_M2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def derive_stream(seed, index):
    """Stable per-tree RNG state derived from (seed, tree index)."""
    state = np.uint64(seed) ^ (np.uint64(index) + np.uint64(1)) * _MIX_M1
    state, _ = _next_u64(state)
    state, _ = _next_u64(state)
    return state


@njit(cache=True)
def grow_tree(bins_t, n_bins, g, h, w, rows, n_rows, max_depth, min_child_weight,
              mtry, rng_state, need_h, binary_targets, use_subtract,
              feature, thr_bin, left, right, node_s, node_h, node_w,
              node_gain, node_depth, leaf_of_pos,
              hist_w, hist_s, stack_hist_w, stack_hist_s,
              col_perm, rows_buf, stack_start, stack_end, stack_depth,
              stack_node, stack_wsum, stack_ssum, stack_hsum, stack_mode):
    """Grow one binary tree on rows[0:n_rows] (weighted, duplicates allowed).

    Splits maximize sum-of(S^2/W) improvement of the weighted targets g,
    which is the weighted squared-error gain and, for 0/1 targets, is
    proportional to the Gini impurity decrease. Ties resolve to the lowest
    column index, then the lowest threshold. Returns the node count.
    """
    p = bins_t.shape[0]
    root_w = 0.0
    root_s = 0.0
    root_h = 0.0
    for i in range(n_rows):
        r = rows[i]
        root_w += w[r]
        root_s += w[r] * g[r]
        if need_h:
            root_h += w[r] * h[r]

    n_nodes = 1
    top = 0
    stack_start[0] = 0
    stack_end[0] = n_rows
    stack_depth[0] = 0
    stack_node[0] = 0
    stack_wsum[0] = root_w
    stack_ssum[0] = root_s
    stack_hsum[0] = root_h
    stack_mode[0] = MODE_ACC if use_subtract else MODE_NONE

    while top >= 0:
        seg_lo = stack_start[top]
        seg_hi = stack_end[top]
        depth = stack_depth[top]
        node = stack_node[top]
        tot_w = stack_wsum[top]
        tot_s = stack_ssum[top]
        tot_h = stack_hsum[top]
        mode = stack_mode[top]
        top -= 1

        node_s[node] = tot_s
        node_h[node] = tot_h
        node_w[node] = tot_w
        node_depth[node] = depth
        node_gain[node] = 0.0

        pure = False
        if binary_targets:
            pure = tot_s == 0.0 or tot_s == tot_w
        splittable = (depth < max_depth and seg_hi - seg_lo >= 2
                      and tot_w >= 2.0 * min_child_weight and tot_w > 0.0
                      and not pure)

        if use_subtract:
            # Maintain the per-level histogram even for some leaves: an
            # ACC node's histogram is what lets its sibling subtract.
            if mode == MODE_ACC and (splittable or node != 0):
                for c in range(p):
                    for b in range(n_bins[c]):
                        stack_hist_w[depth, c, b] = 0.0
                        stack_hist_s[depth, c, b] = 0.0
                for i in range(seg_lo, seg_hi):
                    r = rows[i]
                    wi = w[r]
                    wg = wi * g[r]
                    for c in range(p):
                        b = bins_t[c, r]
                        stack_hist_w[depth, c, b] += wi
                        stack_hist_s[depth, c, b] += wg
            elif mode == MODE_SUB and splittable:
                for c in range(p):
                    for b in range(n_bins[c]):
                        stack_hist_w[depth, c, b] = (stack_hist_w[depth - 1, c, b]
                                                     - stack_hist_w[depth, c, b])
                        stack_hist_s[depth, c, b] = (stack_hist_s[depth - 1, c, b]
                                                     - stack_hist_s[depth, c, b])

        best_gain = 0.0
        best_col = -1
        best_bin = -1
        if splittable:
            n_cand = p
            if 0 < mtry < p:
                for j in range(p):
                    col_perm[j] = j
                for j in range(mtry):
                    rng_state, z = _next_u64(rng_state)
                    k = j + int(z % np.uint64(p - j))
                    tmp = col_perm[j]
                    col_perm[j] = col_perm[k]
                    col_perm[k] = tmp
                n_cand = mtry
            else:
                for j in range(p):
                    col_perm[j] = j

            parent_score = tot_s * tot_s / tot_w
            for ci in range(n_cand):
                c = col_perm[ci]
                nb = n_bins[c]
                if nb < 2:
                    continue
                if not use_subtract:
                    for b in range(nb):
                        hist_w[c, b] = 0.0
                        hist_s[c, b] = 0.0
                    for i in range(seg_lo, seg_hi):
                        r = rows[i]
                        b = bins_t[c, r]
                        hist_w[c, b] += w[r]
                        hist_s[c, b] += w[r] * g[r]
                wl = 0.0
                sl = 0.0
                for b in range(nb - 1):
                    if use_subtract:
                        wl += stack_hist_w[depth, c, b]
                        sl += stack_hist_s[depth, c, b]
                    else:
                        wl += hist_w[c, b]
                        sl += hist_s[c, b]
                    wr = tot_w - wl
                    if wl < min_child_weight or wr < min_child_weight:
                        continue
                    if wl <= 0.0 or wr <= 0.0:
                        continue
                    sr = tot_s - sl
                    gain = sl * sl / wl + sr * sr / wr - parent_score
                    if gain <= 1e-12:
                        continue
                    # Ties go to the lowest column index, then lowest threshold.
                    take = False
                    if gain > best_gain:
                        take = True
                    elif gain == best_gain and best_col >= 0:
                        if c < best_col or (c == best_col and b < best_bin):
                            take = True
                    if take:
                        best_gain = gain
                        best_col = c
                        best_bin = b

        if best_col < 0:
            feature[node] = LEAF
            thr_bin[node] = -1
            left[node] = -1
            right[node] = -1
            for i in range(seg_lo, seg_hi):
                leaf_of_pos[i] = node
            continue

        # Left-child stats from the winning column's histogram prefix.
        wl = 0.0
        sl = 0.0
        for b in range(best_bin + 1):
            if use_subtract:
                wl += stack_hist_w[depth, best_col, b]
                sl += stack_hist_s[depth, best_col, b]
            else:
                wl += hist_w[best_col, b]
                sl += hist_s[best_col, b]

        # Stable partition; fuse the left-child h accumulation.
        hl = 0.0
        n_left = 0
        for i in range(seg_lo, seg_hi):
            r = rows[i]
            if bins_t[best_col, r] <= best_bin:
                rows_buf[seg_lo + n_left] = r
                n_left += 1
                if need_h:
                    hl += w[r] * h[r]
        n_right = 0
        for i in range(seg_lo, seg_hi):
            r = rows[i]
            if bins_t[best_col, r] > best_bin:
                rows_buf[seg_lo + n_left + n_right] = r
                n_right += 1
        for i in range(seg_lo, seg_hi):
            rows[i] = rows_buf[i]

        feature[node] = best_col
        thr_bin[node] = best_bin
        node_gain[node] = best_gain
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        left[node] = left_id
        right[node] = right_id

        child_depth = depth + 1
        if use_subtract and child_depth < max_depth:
            left_mode = MODE_ACC if n_left <= n_right else MODE_SUB
            right_mode = MODE_SUB if n_left <= n_right else MODE_ACC
        else:
            left_mode = MODE_NONE
            right_mode = MODE_NONE

        # Push the larger child first so the smaller (ACC) child pops first
        # and its histogram is in place when the sibling subtracts.
        if n_left <= n_right:
            top += 1
            stack_start[top] = seg_lo + n_left
            stack_end[top] = seg_hi
            stack_depth[top] = child_depth
            stack_node[top] = right_id
            stack_wsum[top] = tot_w - wl
            stack_ssum[top] = tot_s - sl
            stack_hsum[top] = tot_h - hl
            stack_mode[top] = right_mode
            top += 1
            stack_start[top] = seg_lo
            stack_end[top] = seg_lo + n_left
            stack_depth[top] = child_depth
            stack_node[top] = left_id
            stack_wsum[top] = wl
            stack_ssum[top] = sl
            stack_hsum[top] = hl
            stack_mode[top] = left_mode
        else:
            top += 1
            stack_start[top] = seg_lo
            stack_end[top] = seg_lo + n_left
            stack_depth[top] = child_depth
            stack_node[top] = left_id
            stack_wsum[top] = wl
            stack_ssum[top] = sl
            stack_hsum[top] = hl
            stack_mode[top] = left_mode
            top += 1
            stack_start[top] = seg_lo + n_left
            stack_end[top] = seg_hi
            stack_depth[top] = child_depth
            stack_node[top] = right_id
            stack_wsum[top] = tot_w - wl
            stack_ssum[top] = tot_s - sl
            stack_hsum[top] = tot_h - hl
            stack_mode[top] = right_mode
    return n_nodes


@njit(cache=True, inline="always")
def _leaf_for(feature, thr, left, right, base, x_row):
    node = 0
    while feature[base + node] != LEAF:
        if x_row[feature[base + node]] <= thr[base + node]:
            node = left[base + node]
        else:
            node = right[base + node]
    return node


@njit(cache=True)
def gbm_path(bins_t, n_bins, bin_values, y, w, f0, nu, n_trees, max_depth,
             min_child_weight, x_test, checkpoints, trace_deviance):
    """Fit a full Bernoulli-deviance boosting path.

    Per iteration: fit a regression tree to the negative gradient (y - p)
    with per-leaf one-step Newton estimates clipped to +-4 on the log-odds
    scale, then advance train and test scores by nu * tree. Records the
    test log-odds at each requested checkpoint (iteration counts), so one
    path serves every tree-count candidate on a tuning grid.

    Returns packed tree arrays:
      (offsets, feature, threshold, left, right, value, weight, gain,
       checkpoint_f_test, deviance_trace, f_train)
    """
    n = y.shape[0]
    p = bins_t.shape[0]
    n_test = x_test.shape[0]
    max_nodes = 2 ** (max_depth + 1) - 1
    total_nodes = n_trees * max_nodes

    offsets = np.zeros(n_trees + 1, dtype=np.int64)
    feature = np.empty(total_nodes, dtype=np.int32)
    threshold = np.empty(total_nodes, dtype=np.float64)
    left = np.empty(total_nodes, dtype=np.int32)
    right = np.empty(total_nodes, dtype=np.int32)
    value = np.zeros(total_nodes, dtype=np.float64)
    weight = np.zeros(total_nodes, dtype=np.float64)
    gain = np.zeros(total_nodes, dtype=np.float64)

    t_feature = np.empty(max_nodes, dtype=np.int32)
    t_thr_bin = np.empty(max_nodes, dtype=np.int32)
    t_left = np.empty(max_nodes, dtype=np.int32)
    t_right = np.empty(max_nodes, dtype=np.int32)
    t_s = np.zeros(max_nodes, dtype=np.float64)
    t_h = np.zeros(max_nodes, dtype=np.float64)
    t_w = np.zeros(max_nodes, dtype=np.float64)
    t_gain = np.zeros(max_nodes, dtype=np.float64)
    t_depth = np.zeros(max_nodes, dtype=np.int32)
    t_value = np.zeros(max_nodes, dtype=np.float64)

    max_bins = 0
    for j in range(p):
        if n_bins[j] > max_bins:
            max_bins = n_bins[j]
    hist_w = np.zeros((1, 1), dtype=np.float64)
    hist_s = np.zeros((1, 1), dtype=np.float64)
    stack_hist_w = np.zeros((max_depth + 1, p, max_bins), dtype=np.float64)
    stack_hist_s = np.zeros((max_depth + 1, p, max_bins), dtype=np.float64)
    col_perm = np.empty(p, dtype=np.int64)
    rows = np.empty(n, dtype=np.int64)
    rows_buf = np.empty(n, dtype=np.int64)
    leaf_of_pos = np.empty(n, dtype=np.int64)
    stack_cap = max_nodes + 2
    stack_start = np.empty(stack_cap, dtype=np.int64)
    stack_end = np.empty(stack_cap, dtype=np.int64)
    stack_depth_arr = np.empty(stack_cap, dtype=np.int64)
    stack_node = np.empty(stack_cap, dtype=np.int64)
    stack_wsum = np.empty(stack_cap, dtype=np.float64)
    stack_ssum = np.empty(stack_cap, dtype=np.float64)
    stack_hsum = np.empty(stack_cap, dtype=np.float64)
    stack_mode = np.empty(stack_cap, dtype=np.int64)

    f_train = np.full(n, f0)
    f_test = np.full(n_test, f0)
    n_checkpoints = checkpoints.shape[0]
    checkpoint_f = np.zeros((n_checkpoints, n_test), dtype=np.float64)
    trace = np.zeros(n_trees + 1, dtype=np.float64)

    g = np.empty(n, dtype=np.float64)
    h = np.empty(n, dtype=np.float64)
    prob = np.empty(n, dtype=np.float64)

    sw = 0.0
    for i in range(n):
        sw += w[i]

    if trace_deviance:
        dev = 0.0
        for i in range(n):
            fi = f_train[i]
            if fi > 0:
                dev += w[i] * (np.log1p(np.exp(-fi)) + (1.0 - y[i]) * fi)
            else:
                dev += w[i] * (np.log1p(np.exp(fi)) - y[i] * fi)
        trace[0] = dev / sw

    ck = 0
    for t in range(n_trees):
        for i in range(n):
            fi = f_train[i]
            if fi >= 0:
                prob[i] = 1.0 / (1.0 + np.exp(-fi))
            else:
                e = np.exp(fi)
                prob[i] = e / (1.0 + e)
            g[i] = y[i] - prob[i]
            h[i] = prob[i] * (1.0 - prob[i])
            rows[i] = i

        n_nodes = grow_tree(bins_t, n_bins, g, h, w, rows, n, max_depth,
                            min_child_weight, 0, np.uint64(0), True, False, True,
                            t_feature, t_thr_bin, t_left, t_right,
                            t_s, t_h, t_w, t_gain, t_depth, leaf_of_pos,
                            hist_w, hist_s, stack_hist_w, stack_hist_s,
                            col_perm, rows_buf, stack_start, stack_end,
                            stack_depth_arr, stack_node, stack_wsum, stack_ssum,
                            stack_hsum, stack_mode)

        for node in range(n_nodes):
            if t_feature[node] == LEAF:
                denom = t_h[node]
                if denom <= 1e-12:
                    val = 0.0
                else:
                    val = t_s[node] / denom
                    if val > 4.0:
                        val = 4.0
                    elif val < -4.0:
                        val = -4.0
                t_value[node] = val
            else:
                t_value[node] = 0.0

        for i in range(n):
            f_train[rows[i]] += nu * t_value[leaf_of_pos[i]]

        base = offsets[t]
        for node in range(n_nodes):
            feature[base + node] = t_feature[node]
            left[base + node] = t_left[node]
            right[base + node] = t_right[node]
            value[base + node] = t_value[node]
            weight[base + node] = t_w[node]
            gain[base + node] = t_gain[node]
            if t_feature[node] == LEAF:
                threshold[base + node] = 0.0
            else:
                c = t_feature[node]
                b = t_thr_bin[node]
                threshold[base + node] = 0.5 * (bin_values[c, b] + bin_values[c, b + 1])
        offsets[t + 1] = base + n_nodes

        for i in range(n_test):
            node = _leaf_for(feature, threshold, left, right, base, x_test[i])
            f_test[i] += nu * value[base + node]

        if trace_deviance:
            dev = 0.0
            for i in range(n):
                fi = f_train[i]
                if fi > 0:
                    dev += w[i] * (np.log1p(np.exp(-fi)) + (1.0 - y[i]) * fi)
                else:
                    dev += w[i] * (np.log1p(np.exp(fi)) - y[i] * fi)
            trace[t + 1] = dev / sw

        while ck < n_checkpoints and checkpoints[ck] == t + 1:
            for i in range(n_test):
                checkpoint_f[ck, i] = f_test[i]
            ck += 1

    while ck < n_checkpoints:
        for i in range(n_test):
            checkpoint_f[ck, i] = f_test[i]
        ck += 1

    n_total = offsets[n_trees]
    return (offsets, feature[:n_total].copy(), threshold[:n_total].copy(),
            left[:n_total].copy(), right[:n_total].copy(), value[:n_total].copy(),
            weight[:n_total].copy(), gain[:n_total].copy(), checkpoint_f,
            trace, f_train)


@njit(cache=True)
def ensemble_logodds(offsets, feature, threshold, left, right, value, X, f0, nu):
    """f0 + nu * sum of tree outputs for each row of a raw float matrix."""
    n = X.shape[0]
    out = np.full(n, f0)
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = _leaf_for(feature, threshold, left, right, base, X[i])
            out[i] += nu * value[base + node]
    return out


@njit(cache=True)
def staged_logodds(offsets, feature, threshold, left, right, value, X, f0, nu,
                   checkpoints):
    """Log-odds after each checkpoint iteration, replayed from stored trees."""
    n = X.shape[0]
    n_ck = checkpoints.shape[0]
    out = np.zeros((n_ck, n), dtype=np.float64)
    acc = np.full(n, f0)
    ck = 0
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = _leaf_for(feature, threshold, left, right, base, X[i])
            acc[i] += nu * value[base + node]
        while ck < n_ck and checkpoints[ck] == t + 1:
            for i in range(n):
                out[ck, i] = acc[i]
            ck += 1
    while ck < n_ck:
        for i in range(n):
            out[ck, i] = acc[i]
        ck += 1
    return out


@njit(cache=True)
def forest_vote_fraction(offsets, feature, threshold, left, right, value, X):
    """Fraction of trees voting class 1 per row of a raw float matrix."""
    n = X.shape[0]
    votes = np.zeros(n, dtype=np.float64)
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = _leaf_for(feature, threshold, left, right, base, X[i])
            votes[i] += value[base + node]
    return votes / n_trees


@njit(cache=True)
def pd_routing(offsets, feature, threshold, left, right, value, X,
               is_target, target_val, f0, nu):
    """Exact partial dependence of the tree sum at one grid assignment.

    Rows descend every tree together: splits on target columns follow the
    branch dictated by the assignment, splits on other columns route each
    row by its own value. The result equals brute-force substitution of
    the assignment into X, averaging the model log-odds over rows.
    """
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    total = f0 * n
    rows = np.empty(n, dtype=np.int64)
    rows_buf = np.empty(n, dtype=np.int64)
    stack_node = np.empty(4 * n + 8, dtype=np.int64)
    stack_lo = np.empty(4 * n + 8, dtype=np.int64)
    stack_hi = np.empty(4 * n + 8, dtype=np.int64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            rows[i] = i
        top = 0
        stack_node[0] = 0
        stack_lo[0] = 0
        stack_hi[0] = n
        while top >= 0:
            node = stack_node[top]
            lo = stack_lo[top]
            hi = stack_hi[top]
            top -= 1
            while feature[base + node] != LEAF:
                f = feature[base + node]
                thr = threshold[base + node]
                if is_target[f]:
                    if target_val[f] <= thr:
                        node = left[base + node]
                    else:
                        node = right[base + node]
                else:
                    n_left = 0
                    for i in range(lo, hi):
                        if X[rows[i], f] <= thr:
                            rows_buf[lo + n_left] = rows[i]
                            n_left += 1
                    n_right = 0
                    for i in range(lo, hi):
                        if X[rows[i], f] > thr:
                            rows_buf[lo + n_left + n_right] = rows[i]
                            n_right += 1
                    for i in range(lo, hi):
                        rows[i] = rows_buf[i]
                    if n_right > 0:
                        top += 1
                        stack_node[top] = right[base + node]
                        stack_lo[top] = lo + n_left
                        stack_hi[top] = hi
                    if n_left > 0:
                        hi = lo + n_left
                        node = left[base + node]
                    else:
                        node = -1
                        break
            if node >= 0:
                total += nu * value[base + node] * (hi - lo)
    return total / n


@njit(cache=True)
def bootstrap_unique(n, rng_state, rows, mult):
    """Bootstrap resample compressed to unique rows with multiplicities.

    Fills `rows[:n_unique]` with the distinct sampled row ids (ascending)
    and `mult[:n_unique]` with their draw counts; returns n_unique. The
    weighted tree grown on (rows, mult) is identical to one grown on the
    duplicated resample.
    """
    for i in range(n):
        rng_state, z = _next_u64(rng_state)
        rows[i] = int(z % np.uint64(n))
    rows[:n].sort()
    n_unique = 0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and rows[j + 1] == rows[i]:
            j += 1
        rows[n_unique] = rows[i]
        mult[n_unique] = float(j - i + 1)
        n_unique += 1
        i = j + 1
    return n_unique
