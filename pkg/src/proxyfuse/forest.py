"""Random-forest regression from scratch, baselines, and feature elimination.

Trees are CART regressors grown by variance reduction. With bootstrap off,
ensemble diversity comes entirely from seeded feature subsampling at each
split, so a bootstrap-free forest is still a genuine ensemble. Split ties
break toward the lowest feature index, then the lowest threshold —
determinism over luck. Leaf values are means, so every forest prediction
lies inside the training-target range.

Recursive feature elimination refits at step 1 (drop the single
lowest-importance feature each round) and records validation RMSE plus the
summed feature-group time at every size; the trade-off score is the mean
of the min-max-normalized RMSE and time columns.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import best_split
from .metrics import TRAIN, VAL, stratified_split

HP_RANGES = {
    "n_estimators": (10, 1000),
    "max_features": tuple(range(1, 11)) + ("sqrt", "log2"),
    "min_samples_split": (2, 32),
    "min_samples_leaf": (1, 32),
    "max_depth": (10, 100),
    "bootstrap": (False, True),
}


@dataclass(frozen=True)
class HyperParams:
    n_estimators: int = 100
    max_features: object = "sqrt"
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_depth: int = 30
    bootstrap: bool = True

    def validate(self):
        lo, hi = HP_RANGES["n_estimators"]
        if not lo <= self.n_estimators <= hi:
            raise ValueError(f"n_estimators {self.n_estimators} outside [{lo}, {hi}]")
        if self.max_features not in HP_RANGES["max_features"]:
            raise ValueError(f"max_features {self.max_features!r} not allowed")
        lo, hi = HP_RANGES["min_samples_split"]
        if not lo <= self.min_samples_split <= hi:
            raise ValueError(f"min_samples_split {self.min_samples_split} outside [{lo}, {hi}]")
        lo, hi = HP_RANGES["min_samples_leaf"]
        if not lo <= self.min_samples_leaf <= hi:
            raise ValueError(f"min_samples_leaf {self.min_samples_leaf} outside [{lo}, {hi}]")
        lo, hi = HP_RANGES["max_depth"]
        if not lo <= self.max_depth <= hi:
            raise ValueError(f"max_depth {self.max_depth} outside [{lo}, {hi}]")
        return self

    def to_dict(self):
        return {
            "n_estimators": self.n_estimators,
            "max_features": self.max_features,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "max_depth": self.max_depth,
            "bootstrap": self.bootstrap,
        }


def resolve_max_features(max_features, n_features):
    if max_features == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if max_features == "log2":
        return max(1, int(np.log2(n_features)))
    return max(1, min(int(max_features), n_features))


class _TreeBuilder:
    """Grows one CART tree into flat node arrays (struct-of-arrays layout)."""

    def __init__(self, X, y, hp, rng, n_features_total, importance_out,
                 max_features_override=None):
        self.X = X
        self.y = y
        self.hp = hp
        self.rng = rng
        self.m = (max_features_override if max_features_override is not None
                  else resolve_max_features(hp.max_features, n_features_total))
        self.n_features = n_features_total
        self.importance = importance_out
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, rows, depth):
        node = self._new_node()
        ys = self.y[rows]
        self.value[node] = float(ys.mean())
        if (depth >= self.hp.max_depth or rows.size < self.hp.min_samples_split
                or ys.min() == ys.max()):
            return node
        if self.m < self.n_features:
            feats = np.sort(self.rng.choice(self.n_features, self.m, replace=False))
        else:
            feats = np.arange(self.n_features)
        Xn = np.ascontiguousarray(self.X[rows])
        f, thresh, gain = best_split(Xn, ys, feats.astype(np.int64),
                                     self.hp.min_samples_leaf)
        if f < 0:
            return node
        mask = Xn[:, f] <= thresh
        if not mask.any() or mask.all():  # cannot happen per kernel contract
            return node
        self.feature[node] = int(f)
        self.threshold[node] = float(thresh)
        self.importance[f] += gain
        self.left[node] = self.build(rows[mask], depth + 1)
        self.right[node] = self.build(rows[~mask], depth + 1)
        return node

    def arrays(self):
        return {
            "feature": np.asarray(self.feature, dtype=np.int32),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int32),
            "right": np.asarray(self.right, dtype=np.int32),
            "value": np.asarray(self.value, dtype=np.float64),
        }


def _tree_predict(tree, X):
    idx = np.zeros(X.shape[0], dtype=np.int32)
    feature, threshold = tree["feature"], tree["threshold"]
    left, right = tree["left"], tree["right"]
    active = feature[idx] >= 0
    while active.any():
        f = feature[idx[active]]
        go_left = X[active, f] <= threshold[idx[active]]
        nxt = np.where(go_left, left[idx[active]], right[idx[active]])
        idx[active] = nxt
        active = feature[idx] >= 0
    return tree["value"][idx]


@dataclass
class ForestModel:
    trees: list
    hyperparams: HyperParams
    feature_names: list
    importances: np.ndarray
    target_range: tuple

    def predict(self, X):
        X = _check_matrix(X, len(self.feature_names) if self.feature_names else None)
        preds = np.zeros(X.shape[0])
        for tree in self.trees:
            preds += _tree_predict(tree, X)
        return preds / len(self.trees)

    def to_json(self):
        return json.dumps({
            "format": "proxyfuse-forest-v1",
            "hyperparams": self.hyperparams.to_dict(),
            "feature_names": self.feature_names,
            "importances": self.importances.tolist(),
            "target_range": list(self.target_range),
            "trees": [{k: v.tolist() for k, v in t.items()} for t in self.trees],
        })

    @classmethod
    def from_json(cls, text):
        blob = json.loads(text)
        if blob.get("format") != "proxyfuse-forest-v1":
            raise ValueError(f"unsupported model format {blob.get('format')!r}")
        trees = [{
            "feature": np.asarray(t["feature"], dtype=np.int32),
            "threshold": np.asarray(t["threshold"], dtype=np.float64),
            "left": np.asarray(t["left"], dtype=np.int32),
            "right": np.asarray(t["right"], dtype=np.int32),
            "value": np.asarray(t["value"], dtype=np.float64),
        } for t in blob["trees"]]
        return cls(trees=trees, hyperparams=HyperParams(**blob["hyperparams"]),
                   feature_names=list(blob["feature_names"]),
                   importances=np.asarray(blob["importances"]),
                   target_range=tuple(blob["target_range"]))


def _check_matrix(X, n_features=None):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"feature count mismatch: model has {n_features}, got {X.shape[1]}")
    return X


def _check_training_data(X, y):
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],) or X.shape[0] < 2:
        raise ValueError(f"need matching X/y with at least 2 rows, got {X.shape} and {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in training data; sanitize upstream")
    return X, y


def fit_forest(X, y, hp=HyperParams(), seed=0, feature_names=None):
    X, y = _check_training_data(X, y)
    hp.validate()
    n, f = X.shape
    importances = np.zeros(f)
    trees = []
    children = np.random.SeedSequence(seed).spawn(hp.n_estimators)
    for child in children:
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, n) if hp.bootstrap else np.arange(n)
        tree_importance = np.zeros(f)
        builder = _TreeBuilder(X, y, hp, rng, f, tree_importance)
        builder.build(rows, 0)
        trees.append(builder.arrays())
        total = tree_importance.sum()
        if total > 0:
            importances += tree_importance / total
    total = importances.sum()
    if total > 0:
        importances /= total
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(f)]
    return ForestModel(trees=trees, hyperparams=hp, feature_names=names,
                       importances=importances, target_range=(float(y.min()), float(y.max())))


def fit_tree(X, y, hp=HyperParams(), seed=0):
    """Single CART baseline: same growth rules, all features at every split."""
    X, y = _check_training_data(X, y)
    hp.validate()
    importance = np.zeros(X.shape[1])
    builder = _TreeBuilder(X, y, hp, np.random.default_rng(seed), X.shape[1],
                           importance, max_features_override=X.shape[1])
    builder.build(np.arange(X.shape[0]), 0)
    tree = builder.arrays()
    return ForestModel(trees=[tree], hyperparams=hp,
                       feature_names=[f"f{i}" for i in range(X.shape[1])],
                       importances=importance / importance.sum() if importance.sum() > 0
                       else importance,
                       target_range=(float(y.min()), float(y.max())))


@dataclass
class LinearModel:
    coef: np.ndarray  # intercept first

    def predict(self, X):
        X = _check_matrix(X, self.coef.size - 1)
        return self.coef[0] + X @ self.coef[1:]


def fit_linear(X, y):
    """Ordinary least squares via normal equations with 1e-8 ridge jitter."""
    X, y = _check_training_data(X, y)
    design = np.column_stack([np.ones(X.shape[0]), X])
    gram = design.T @ design + 1e-8 * np.eye(design.shape[1])
    coef = np.linalg.solve(gram, design.T @ y)
    return LinearModel(coef=coef)


def rmse(y_pred, y_true):
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_pred.shape != y_true.shape:
        raise ValueError(f"shape mismatch: {y_pred.shape} vs {y_true.shape}")
    return float(np.sqrt(np.mean((y_pred - y_true) ** 2)))


def standardize(X):
    """Per-column (x - mean) / std with a 1e-12 std floor; returns (X', params)."""
    X = _check_matrix(X)
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), 1e-12)
    return (X - mean) / std, (mean, std)


def destandardize(Xs, params):
    mean, std = params
    return Xs * std + mean


def one_hot(tag, vocabulary):
    if tag not in vocabulary:
        raise ValueError(f"unknown tag {tag!r}; expected one of {list(vocabulary)}")
    vec = np.zeros(len(vocabulary))
    vec[list(vocabulary).index(tag)] = 1.0
    return vec


# --- feature elimination --------------------------------------------------------


@dataclass
class TimingModel:
    """Seconds charged per feature subset: shared group costs once, marginals per feature."""

    feature_groups: dict            # feature -> set of group names
    group_seconds: dict             # group -> shared seconds
    feature_marginal: dict = field(default_factory=dict)

    def charge(self, features):
        groups = set()
        total = 0.0
        for name in features:
            groups |= self.feature_groups.get(name, set())
            total += self.feature_marginal.get(name, 0.0)
        return total + sum(self.group_seconds.get(g, 0.0) for g in groups)


@dataclass
class TradeoffRow:
    k: int
    rmse: float
    time_seconds: float
    score: float = float("nan")


def tradeoff_score(rmses, times):
    """Mean of min-max-normalized RMSE and time; an all-equal column is all zeros."""
    rmses = np.asarray(rmses, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if rmses.shape != times.shape or rmses.size < 2:
        raise ValueError("need equal-length rmse/time columns with at least 2 rows")

    def norm(col):
        span = col.max() - col.min()
        if span == 0:
            return np.zeros_like(col)
        return (col - col.min()) / span

    return list((norm(rmses) + norm(times)) / 2.0)


def rfe(X, y, feature_names, hp, seed, timing, split=None):
    """Drop the lowest-importance feature per step, from all features to one.

    Fits on the train slice of a stratified 70-15-15 split (or a provided
    SplitAssignment), records validation RMSE and charged time at every
    size, and attaches trade-off scores at the end. Returns (rows, steps)
    where steps[i] is the feature list used at rows[i].
    """
    X, y = _check_training_data(X, y)
    names = list(feature_names)
    if X.shape[1] != len(names):
        raise ValueError("feature_names length must match X columns")
    if split is None:
        split = stratified_split(y, seed=seed)
    train_rows, val_rows = split.rows(TRAIN), split.rows(VAL)
    selected = list(range(len(names)))
    rows, steps = [], []
    while selected:
        cols = np.asarray(selected)
        model = fit_forest(X[np.ix_(train_rows, cols)], y[train_rows], hp, seed,
                           feature_names=[names[i] for i in selected])
        val_rmse = rmse(model.predict(X[np.ix_(val_rows, cols)]), y[val_rows])
        step_names = [names[i] for i in selected]
        rows.append(TradeoffRow(k=len(selected), rmse=val_rmse,
                                time_seconds=timing.charge(step_names)))
        steps.append(step_names)
        if len(selected) == 1:
            break
        drop = int(np.argmin(model.importances))  # ties: lowest index goes
        selected.pop(drop)
    scores = tradeoff_score([r.rmse for r in rows], [r.time_seconds for r in rows])
    for row, score in zip(rows, scores):
        row.score = float(score)
    return rows, steps
