"""Sequential hyperparameter search with a Parzen-style good/bad model.

The first 20 trials are pure random warm-up. After that, observed trials
split at the 0.25 objective quantile; each dimension models the good and
bad sets separately — Gaussian kernels at the observed points with
bandwidth range/sqrt(count) for numeric dimensions, add-one smoothed
frequencies for categoricals. Each step draws 24 candidates from the good
model and evaluates the one maximizing the good/bad density ratio. A
`sampler="random"` fallback skips the model entirely, for comparison runs.

Search-space dimensions: ("int", lo, hi), ("float", lo, hi) or
("cat", (choices...)).
"""

import math

import numpy as np

from .forest import HP_RANGES, HyperParams

WARMUP_TRIALS = 20
GAMMA = 0.25
N_CANDIDATES = 24


def hp_space():
    """The allowed forest hyperparameter ranges as a search space."""
    return {
        "n_estimators": ("int",) + HP_RANGES["n_estimators"],
        "max_features": ("cat", HP_RANGES["max_features"]),
        "min_samples_split": ("int",) + HP_RANGES["min_samples_split"],
        "min_samples_leaf": ("int",) + HP_RANGES["min_samples_leaf"],
        "max_depth": ("int",) + HP_RANGES["max_depth"],
        "bootstrap": ("cat", HP_RANGES["bootstrap"]),
    }


def params_to_hyperparams(params):
    return HyperParams(**params).validate()


def _random_params(space, rng):
    out = {}
    for name, dim in space.items():
        if dim[0] == "int":
            out[name] = int(rng.integers(dim[1], dim[2] + 1))
        elif dim[0] == "float":
            out[name] = float(rng.uniform(dim[1], dim[2]))
        else:
            out[name] = dim[1][int(rng.integers(0, len(dim[1])))]
    return out


def _numeric_density(x, points, bw):
    z = (x - points) / bw
    return float(np.exp(-0.5 * z * z).mean() / (bw * math.sqrt(2 * math.pi)))


def _cat_probs(values, choices):
    counts = np.array([sum(1 for v in values if v == c) for c in choices], dtype=np.float64)
    return (counts + 1.0) / (len(values) + len(choices))


def _suggest(space, trials, rng):
    values = np.array([v for _, v in trials])
    order = np.argsort(values, kind="stable")
    n_good = max(1, int(math.ceil(GAMMA * len(trials))))
    good = [trials[i][0] for i in order[:n_good]]
    bad = [trials[i][0] for i in order[n_good:]]
    if not bad:
        bad = good

    models = {}
    for name, dim in space.items():
        if dim[0] == "cat":
            models[name] = ("cat", _cat_probs([g[name] for g in good], dim[1]),
                            _cat_probs([b[name] for b in bad], dim[1]))
        else:
            lo, hi = dim[1], dim[2]
            g_pts = np.array([g[name] for g in good], dtype=np.float64)
            b_pts = np.array([b[name] for b in bad], dtype=np.float64)
            g_bw = (hi - lo) / math.sqrt(len(g_pts))
            b_bw = (hi - lo) / math.sqrt(len(b_pts))
            models[name] = ("num", (g_pts, max(g_bw, 1e-12)), (b_pts, max(b_bw, 1e-12)))

    best_params, best_score = None, -math.inf
    for _ in range(N_CANDIDATES):
        cand = {}
        score = 0.0
        for name, dim in space.items():
            model = models[name]
            if dim[0] == "cat":
                _, g_p, b_p = model
                idx = int(rng.choice(len(dim[1]), p=g_p))
                cand[name] = dim[1][idx]
                score += math.log(g_p[idx] + 1e-12) - math.log(b_p[idx] + 1e-12)
            else:
                lo, hi = dim[1], dim[2]
                _, (g_pts, g_bw), (b_pts, b_bw) = model
                center = g_pts[int(rng.integers(0, len(g_pts)))]
                x = min(max(float(rng.normal(center, g_bw)), lo), hi)
                if dim[0] == "int":
                    x = int(round(x))
                    x = min(max(x, lo), hi)
                cand[name] = x
                score += (math.log(_numeric_density(x, g_pts, g_bw) + 1e-12)
                          - math.log(_numeric_density(x, b_pts, b_bw) + 1e-12))
        if score > best_score:
            best_params, best_score = cand, score
    return best_params


def tpe_optimize(space, objective, n_trials, seed=0, sampler="tpe"):
    """Minimize `objective` over `space`; returns (best_params, best_value, log).

    The log is the full list of (params, value) in evaluation order.
    Deterministic per seed.
    """
    if n_trials < WARMUP_TRIALS:
        raise ValueError(f"n_trials must be at least {WARMUP_TRIALS}, got {n_trials}")
    if sampler not in ("tpe", "random"):
        raise ValueError(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(seed)
    trials = []
    for t in range(n_trials):
        if sampler == "random" or t < WARMUP_TRIALS:
            params = _random_params(space, rng)
        else:
            params = _suggest(space, trials, rng)
        trials.append((params, float(objective(params))))
    best_params, best_value = min(trials, key=lambda pv: pv[1])
    return dict(best_params), best_value, trials
