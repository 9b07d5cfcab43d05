#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-Python fallback.

Times the CART split scan and the Kendall merge count in isolation, then an
end-to-end forest fit driven through each backend. Run after building the
extension:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from proxyfuse._kernels import _fallback

try:
    from proxyfuse._kernels import _core
except ImportError:
    _core = None


def _time(fn, reps=5):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_best_split():
    print("best_split (one node, 26 features, min_leaf=1)")
    print(f"{'rows':>8} {'fallback':>12} {'compiled':>12} {'speedup':>9}")
    for n in (200, 1000, 4000):
        rng = np.random.default_rng(0)
        X = np.ascontiguousarray(rng.standard_normal((n, 26)))
        y = rng.standard_normal(n)
        feats = np.arange(26, dtype=np.int64)
        t_py = _time(lambda: _fallback.best_split(X, y, feats, 1))
        if _core is None:
            print(f"{n:>8} {t_py * 1e3:>10.2f}ms {'-':>12} {'-':>9}")
            continue
        t_c = _time(lambda: _core.best_split(X, y, feats, 1))
        print(f"{n:>8} {t_py * 1e3:>10.2f}ms {t_c * 1e3:>10.2f}ms {t_py / t_c:>8.1f}x")


def bench_kendall():
    print("\nkendall_dis (merge count)")
    print(f"{'n':>8} {'fallback':>12} {'compiled':>12} {'speedup':>9}")
    for n in (1000, 10000, 100000):
        y = np.random.default_rng(1).integers(0, n // 3, n).astype(np.float64)
        t_py = _time(lambda: _fallback.kendall_dis(y))
        if _core is None:
            print(f"{n:>8} {t_py * 1e3:>10.2f}ms {'-':>12} {'-':>9}")
            continue
        t_c = _time(lambda: _core.kendall_dis(y))
        print(f"{n:>8} {t_py * 1e3:>10.2f}ms {t_c * 1e3:>10.2f}ms {t_py / t_c:>8.1f}x")


def bench_forest_fit():
    import proxyfuse._kernels as kernels
    from proxyfuse import forest
    from proxyfuse.forest import HyperParams

    print("\nfit_forest end to end (2000x26 rows, 30 trees)")
    rng = np.random.default_rng(2)
    X = rng.standard_normal((2000, 26))
    y = X[:, 0] + np.sin(X[:, 1]) + 0.3 * rng.standard_normal(2000)
    hp = HyperParams(n_estimators=30, max_features="sqrt", max_depth=30)
    for name, impl in (("fallback", _fallback), ("compiled", _core)):
        if impl is None:
            continue
        saved = kernels.best_split
        kernels.best_split = impl.best_split
        forest.best_split = impl.best_split
        try:
            t = _time(lambda: forest.fit_forest(X, y, hp, seed=0), reps=2)
        finally:
            kernels.best_split = saved
            forest.best_split = saved
        print(f"  {name:>9}: {t:.2f}s")


if __name__ == "__main__":
    if _core is None:
        print("compiled extension not available; timing the fallback only\n")
    bench_best_split()
    bench_kendall()
    bench_forest_fit()
