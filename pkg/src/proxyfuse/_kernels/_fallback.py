"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled module:

best_split(X, y, feat_idx, min_leaf)
    X is the (n_rows, n_features) float64 block of one tree node, y the
    targets. Considers only the columns in feat_idx (ascending). Returns
    (feature, threshold, gain) where gain is the split's reduction in the
    sum of squared errors, or (-1, nan, 0.0) when no split satisfies
    min_leaf. Ties are broken toward the lowest feature index, then the
    lowest threshold. Thresholds are midpoints between adjacent distinct
    values; rows with x <= threshold go left.

kendall_dis(y) -> int
    Number of strictly inverted pairs (i < j with y[i] > y[j]) in y,
    counted by merge recursion in O(n log^2 n).
"""

import numpy as np


def best_split(X, y, feat_idx, min_leaf):
    n = y.shape[0]
    total = float(y.sum())
    sse_parent_term = total * total / n
    best_gain = 0.0
    best_feat = -1
    best_thresh = np.nan
    if n < 2 * min_leaf:
        return best_feat, best_thresh, best_gain
    for f in feat_idx:
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        ys = y[order]
        csum = np.cumsum(ys)
        nl = np.arange(1, n)
        sl = csum[:-1]
        with np.errstate(invalid="ignore"):
            score = sl * sl / nl + (total - sl) ** 2 / (n - nl)
        valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        score = np.where(valid, score, -np.inf)
        i = int(np.argmax(score))
        gain = float(score[i]) - sse_parent_term
        if gain > best_gain:
            best_gain = gain
            best_feat = int(f)
            thresh = 0.5 * (xs[i] + xs[i + 1])
            # adjacent floats: the midpoint may round up onto the right
            # value, which would empty the right child
            best_thresh = xs[i] if thresh >= xs[i + 1] else thresh
    return best_feat, best_thresh, best_gain


def _merge_count(y):
    n = y.shape[0]
    if n < 2:
        return 0, y
    mid = n // 2
    inv_l, left = _merge_count(y[:mid])
    inv_r, right = _merge_count(y[mid:])
    # cross pairs: for each element of the left half, how many strictly
    # smaller elements sit in the right half
    cross = int(np.searchsorted(right, left, side="left").sum())
    merged = np.concatenate([left, right])
    merged.sort(kind="stable")
    return inv_l + inv_r + cross, merged


def kendall_dis(y):
    return _merge_count(np.asarray(y, dtype=np.float64))[0]
