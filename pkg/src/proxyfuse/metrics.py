"""Rank correlations, stratified splitting, and correlation reports.

Kendall's tau is the tie-corrected tau-b. Two paths are provided: a
vectorized O(n^2) reference and an O(n log n) merge-count fast path; they
agree to 1e-12 and the fast path is the default. Spearman's rho is the
Pearson correlation of average ranks. Degenerate inputs (all tied) return
nan — an error value distinct from 0, not a correlation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._kernels import kendall_dis

TRAIN, VAL, TEST = 0, 1, 2
SLICE_NAMES = ("train", "val", "test")


def rankdata(a):
    """1-based average ranks."""
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    order = np.argsort(a, kind="stable")
    sa = a[order]
    starts = np.flatnonzero(np.concatenate(([True], sa[1:] != sa[:-1])))
    ends = np.concatenate((starts[1:], [n]))
    avg = (starts + ends - 1) / 2.0 + 1.0
    out = np.empty(n)
    out[order] = np.repeat(avg, ends - starts)
    return out


def _tie_term(eq_adjacent, n):
    # sum of t*(t-1)/2 over maximal runs of adjacent-equal values
    if n == 0:
        return 0
    starts = np.flatnonzero(np.concatenate(([True], ~eq_adjacent)))
    lengths = np.diff(np.concatenate((starts, [n])))
    return int((lengths * (lengths - 1) // 2).sum())


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    return x, y


def kendall_tau(x, y):
    """Tau-b via lexsort + merge count of discordant pairs."""
    x, y = _check_pair(x, y)
    n = x.size
    perm = np.lexsort((y, x))
    xs, ys = x[perm], y[perm]
    n0 = n * (n - 1) // 2
    n1 = _tie_term(xs[1:] == xs[:-1], n)
    n2 = _tie_term(np.diff(np.sort(y)) == 0, n)
    ntie = _tie_term((xs[1:] == xs[:-1]) & (ys[1:] == ys[:-1]), n)
    dis = kendall_dis(ys)
    con_minus_dis = n0 - n1 - n2 + ntie - 2 * dis
    denom = np.sqrt(float(n0 - n1) * float(n0 - n2))
    if denom == 0.0:
        return float("nan")
    return float(con_minus_dis / denom)


def kendall_tau_brute(x, y):
    """O(n^2) reference: sums sign products over all pairs."""
    x, y = _check_pair(x, y)
    n = x.size
    iu = np.triu_indices(n, k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = n * (n - 1) // 2
    n1 = int((sx == 0).sum())
    n2 = int((sy == 0).sum())
    denom = np.sqrt(float(n0 - n1) * float(n0 - n2))
    if denom == 0.0:
        return float("nan")
    return float((sx * sy).sum() / denom)


def spearman_rho(x, y):
    x, y = _check_pair(x, y)
    rx, ry = rankdata(x), rankdata(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        return float("nan")
    return float((dx * dy).sum() / denom)


@dataclass
class SplitAssignment:
    tags: np.ndarray       # TRAIN / VAL / TEST per row
    bin_index: np.ndarray  # accuracy bin per row

    def rows(self, tag):
        return np.flatnonzero(self.tags == tag)


def _proportional_counts(n, fractions):
    raw = np.asarray(fractions, dtype=np.float64) * n
    base = np.floor(raw).astype(int)
    frac = raw - base
    order = np.argsort(-frac, kind="stable")
    base[order[: n - base.sum()]] += 1
    return base


def stratified_split(y, bins=5, fractions=(0.70, 0.15, 0.15), seed=0):
    """Equal-width accuracy bins; seeded proportional split within each bin.

    With bins=1 this degrades to a plain random split, which is what the
    'random sampling' evaluation mode uses.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n < bins * 3:
        raise ValueError(f"need at least {bins * 3} rows for {bins} bins, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    lo, hi = y.min(), y.max()
    if hi == lo:
        bin_index = np.zeros(n, dtype=int)
    else:
        bin_index = np.minimum(((y - lo) / (hi - lo) * bins).astype(int), bins - 1)
    rng = np.random.default_rng(seed)
    tags = np.empty(n, dtype=int)
    for b in range(bins):
        rows = np.flatnonzero(bin_index == b)
        if rows.size == 0:
            continue
        rows = rows[rng.permutation(rows.size)]
        c_train, c_val, _ = _proportional_counts(rows.size, fractions)
        tags[rows[:c_train]] = TRAIN
        tags[rows[c_train:c_train + c_val]] = VAL
        tags[rows[c_train + c_val:]] = TEST
    return SplitAssignment(tags=tags, bin_index=bin_index)


def correlation_report(rows, proxy_ids, min_rows=2):
    """Absolute tau/rho per (proxy, search_space, dataset) group.

    `rows` are mappings with 'search_space', 'dataset', 'accuracy' and one
    value per proxy id. Groups with fewer than min_rows rows are omitted
    with a warning. Returns a list of result dicts.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row["search_space"], row["dataset"]), []).append(row)
    report = []
    for (space, dataset) in sorted(groups):
        members = groups[(space, dataset)]
        if len(members) < min_rows:
            warnings.warn(f"group ({space}, {dataset}) has {len(members)} row(s); omitted")
            continue
        acc = np.array([r["accuracy"] for r in members])
        for pid in proxy_ids:
            scores = np.array([r[pid] for r in members])
            report.append({
                "proxy_id": pid,
                "search_space": space,
                "dataset": dataset,
                "kendall_abs": abs(kendall_tau(scores, acc)),
                "spearman_abs": abs(spearman_rho(scores, acc)),
                "n": len(members),
            })
    return report
