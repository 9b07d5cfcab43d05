"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Criteria 6 and 10 build real score tables and dominate the
suite's runtime; their wall-clock budgets are stated for an 8-core box and
are only asserted when that many cores are present.
"""

import os
import time
from multiprocessing import get_context

import numpy as np
import pytest

from proxyfuse import arch, cli, dsl, forest, metrics, probes, proxies, table, tune
from proxyfuse import autograd as ag
from proxyfuse.arch import DATASETS
from proxyfuse.forest import HyperParams, TimingModel
from proxyfuse.table import REPORT_PROXIES, ScoreTable


@pytest.fixture
def announce(capsys):
    def _announce(criterion, ok, detail=""):
        with capsys.disabled():
            status = "PASS" if ok else "FAIL"
            print(f"[criterion {criterion:>2}] {status}  {detail}")
        assert ok, f"criterion {criterion}: {detail}"

    return _announce


# --- 1: trade-off score reproduction -------------------------------------------

# published feature-elimination trace: (k, rmse, seconds, score)
RFE_TABLE = (
    (1, 13.411, 1.429, 0.500), (2, 5.022, 1.399, 0.169), (3, 2.571, 2.363, 0.088),
    (4, 2.009, 2.361, 0.066), (5, 1.477, 3.286, 0.059), (6, 1.282, 3.589, 0.056),
    (7, 1.314, 7.637, 0.122), (8, 1.011, 8.089, 0.117), (9, 0.954, 8.044, 0.114),
    (10, 0.928, 8.916, 0.127), (11, 0.820, 9.173, 0.127), (12, 0.810, 18.075, 0.267),
    (13, 0.785, 23.509, 0.352), (14, 0.813, 24.243, 0.365), (15, 0.776, 28.264, 0.427),
    (16, 0.756, 28.143, 0.425), (17, 0.775, 27.332, 0.412), (18, 0.749, 29.893, 0.452),
    (19, 0.755, 30.180, 0.457), (20, 0.767, 30.195, 0.458), (21, 0.761, 30.472, 0.462),
    (22, 0.766, 32.230, 0.490), (23, 0.761, 31.618, 0.480), (24, 0.794, 29.494, 0.447),
    (25, 0.734, 32.059, 0.486), (26, 0.768, 32.956, 0.501),
)


def test_criterion_01_tradeoff_reproduction(announce):
    t0 = time.perf_counter()
    rmses = [row[1] for row in RFE_TABLE]
    times = [row[2] for row in RFE_TABLE]
    scores = forest.tradeoff_score(rmses, times)
    worst = 0.0
    for (k, _, _, published), got in zip(RFE_TABLE, scores):
        worst = max(worst, abs(got - published))
    anchors = {1: 0.500, 2: 0.169, 6: 0.056, 26: 0.501}
    anchors_ok = all(abs(scores[k - 1] - v) <= 1e-3 for k, v in anchors.items())
    elapsed = time.perf_counter() - t0
    announce(1, worst <= 1e-3 and anchors_ok and elapsed < 1.0,
             f"max |score - published| = {worst:.5f} over 26 rows in {elapsed:.3f}s")


# --- 2: formula fidelity ----------------------------------------------------------


def _fuzz_network(i):
    rng = np.random.default_rng(i)
    if i % 2 == 0:
        ops = tuple(arch.EDGE_OPS[j] for j in rng.integers(0, 5, 6))
        spec = arch.CellSpec(ops, stem_channels=8, num_cells=int(rng.integers(1, 3)),
                             num_classes=int(rng.integers(2, 12)))
    else:
        widths = tuple(int(rng.choice((8, 16, 24))) for _ in range(5))
        spec = arch.SizeSpec(widths, num_classes=int(rng.integers(2, 12)))
    return arch.instantiate(spec, 10_000 + i)


def test_criterion_02_formula_fidelity(announce):
    t0 = time.perf_counter()
    registry = dsl.load_registry(dsl.default_registry_path())
    programs = [registry[f"gm_{c}"] for c in "abcdefghij"]
    round_trips = all(dsl.parse(dsl.pretty_print(p)) == p for p in programs)
    finite = 0
    for i in range(100):
        net = _fuzz_network(i)
        batch = np.random.default_rng(500 + i).standard_normal((4,) + arch.INPUT_SHAPE)
        record = probes.run_probes(net, batch, label_seed=i)
        if all(np.isfinite(dsl.eval_formula(p, record)) for p in programs):
            finite += 1
    elapsed = time.perf_counter() - t0
    announce(2, round_trips and finite == 100 and elapsed < 120,
             f"10 programs round-trip; finite on {finite}/100 networks in {elapsed:.1f}s")


# --- 3: gradient correctness -------------------------------------------------------


_FD_SHAPES = {
    "avgpool2d": (1, 2, 4, 4),
    "avgpool_halve": (1, 2, 4, 4),
    "transpose": (3, 4),
    "softmax": (2, 5),
}


def _fd_point(rng, shape, primitive):
    x = rng.standard_normal(shape)
    if primitive in ("relu", "abs", "minimum", "maximum"):
        x = np.where(np.abs(x) < 1e-3, x + 2e-3, x)
    if primitive in ("invert", "log"):
        x = np.abs(x) + 0.5
    return x


def test_criterion_03_gradient_correctness(announce):
    t0 = time.perf_counter()
    UNARY_SHAPES, _smooth_point = _FD_SHAPES, _fd_point
    worst = ("", 0.0)
    for name, (fn, arity) in sorted(ag.PRIMITIVES.items()):
        rng = np.random.default_rng(hash(name) % (2**32))
        for _ in range(100):
            if name == "cross_entropy":
                logits = rng.standard_normal((3, 4))
                labels = rng.integers(0, 4, 3)
                err = ag.gradient_check(lambda ts: fn(ts[0], labels), logits)
            elif name == "matmul":
                err = ag.gradient_check(
                    lambda ts: ag.tsum(ag.square(fn(ts[0], ts[1]))),
                    [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
            elif name == "conv2d":
                err = ag.gradient_check(
                    lambda ts: ag.tsum(ag.square(fn(ts[0], ts[1]))),
                    [rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((3, 2, 3, 3))])
            elif name == "add_rowvec":
                err = ag.gradient_check(
                    lambda ts: ag.tsum(ag.square(fn(ts[0], ts[1]))),
                    [rng.standard_normal((3, 4)), rng.standard_normal(4)])
            elif name == "add_chan":
                err = ag.gradient_check(
                    lambda ts: ag.tsum(ag.square(fn(ts[0], ts[1]))),
                    [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3)])
            elif arity == 2:
                a = _smooth_point(rng, (3, 4), name)
                b = _smooth_point(rng, (3, 4), name)
                if name in ("minimum", "maximum"):
                    b = b + np.where(np.abs(a - b) < 1e-3, 5e-3, 0.0)
                err = ag.gradient_check(lambda ts: ag.tsum(ag.square(fn(ts[0], ts[1]))), [a, b])
            else:
                x = _smooth_point(rng, UNARY_SHAPES.get(name, (3, 4)), name)
                err = ag.gradient_check(lambda ts: ag.tsum(ag.square(fn(ts[0]))), x)
            if err > worst[1]:
                worst = (name, err)
    elapsed = time.perf_counter() - t0
    announce(3, worst[1] < 1e-4 and elapsed < 60,
             f"worst primitive {worst[0]}: rel err {worst[1]:.2e} in {elapsed:.1f}s")


# --- 4: rank-metric oracles ----------------------------------------------------------


def test_criterion_04_rank_metric_oracles(announce):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        x = rng.integers(0, 6, n).astype(float)
        y = rng.integers(0, 6, n).astype(float)
        fast, brute = metrics.kendall_tau(x, y), metrics.kendall_tau_brute(x, y)
        if np.isnan(fast) or np.isnan(brute):
            ok = np.isnan(fast) and np.isnan(brute)
            worst = worst if ok else np.inf
        else:
            worst = max(worst, abs(fast - brute))
    spearman_ok = True
    for _ in range(200):
        n = int(rng.integers(2, 50))
        x = rng.integers(0, 5, n).astype(float)
        y = rng.integers(0, 5, n).astype(float)
        rho = metrics.spearman_rho(x, y)
        rx, ry = metrics.rankdata(x), metrics.rankdata(y)
        dx, dy = rx - rx.mean(), ry - ry.mean()
        denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
        oracle = float("nan") if denom == 0 else float((dx * dy).sum() / denom)
        if np.isnan(rho) or np.isnan(oracle):
            spearman_ok &= np.isnan(rho) and np.isnan(oracle)
        else:
            spearman_ok &= abs(rho - oracle) <= 1e-12
    tau_example = metrics.kendall_tau([1.0, 2, 3, 4], [1.0, 3, 2, 4])
    rho_example = metrics.spearman_rho([1.0, 2, 3, 4], [1.0, 3, 2, 4])
    examples_ok = abs(tau_example - 4 / 6) <= 1e-15 and abs(rho_example - 0.8) <= 1e-15
    announce(4, worst <= 1e-12 and spearman_ok and examples_ok,
             f"fast vs brute max diff {worst:.2e} over 1000 tied vectors; examples exact")


# --- 5: forest sanity -----------------------------------------------------------------


def test_criterion_05_forest_sanity(announce):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 4))
    y = rng.standard_normal(50)
    hp = HyperParams(n_estimators=10, max_features=10, min_samples_split=2,
                     min_samples_leaf=1, max_depth=100, bootstrap=False)
    memorized = forest.rmse(forest.fit_tree(X, y, hp).predict(X), y) == 0.0

    hits = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        Xp = rng.standard_normal((150, 20))
        yp = 3.0 * Xp[:, 1] + 0.3 * rng.standard_normal(150)
        model = forest.fit_forest(Xp, yp, HyperParams(n_estimators=30), seed=seed)
        hits += int(np.argmax(model.importances)) == 1

    model = forest.fit_forest(X, y, seed=1)
    probe = rng.standard_normal((300, 4)) * 20
    preds = model.predict(probe)
    bounded = preds.min() >= y.min() - 1e-12 and preds.max() <= y.max() + 1e-12
    announce(5, memorized and hits >= 28 and bounded,
             f"memorization exact; planted importance {hits}/30; predictions bounded")


# --- 6: pipeline ordering property ------------------------------------------------------


def _collect_space(space, n, seed, workers):
    tasks = []
    for i in range(n):
        spec = arch.sample_spec(space, cli._derive(seed, cli._TAG_SPEC, i))
        for ds in DATASETS:
            tasks.append((len(tasks), spec.canonical(), ds, seed, i))
    if workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(workers, initializer=cli._init_worker,
                      initargs=(dsl.default_registry_path(), 1.0, 0.01)) as pool:
            results = pool.map(cli._collect_task, tasks, chunksize=1)
    else:
        cli._init_worker(dsl.default_registry_path(), 1.0, 0.01)
        results = [cli._collect_task(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    rows = [row for _, row, _ in results]
    cli.fill_rank_aggregate(rows)
    times = [t for _, _, t in results]
    return rows, times


@pytest.mark.slow
def test_criterion_06_pipeline_ordering(announce, tmp_path):
    t0 = time.perf_counter()
    workers = os.cpu_count() or 1
    n_per_space = 600
    cache = os.environ.get("PROXYFUSE_ACCEPT_TABLE")  # dev-loop shortcut only
    if cache and os.path.exists(cache):
        tbl = ScoreTable.read_csv(cache)
    else:
        rows = []
        for space in ("sss", "tss"):
            space_rows, _ = _collect_space(space, n_per_space, seed=2024, workers=workers)
            rows.extend(space_rows)
        tbl = ScoreTable(rows).check()
        tbl.write_csv(tmp_path / "benchmark.csv")
        if cache:
            tbl.write_csv(cache)
    collect_elapsed = time.perf_counter() - t0

    X = tbl.feature_matrix(list(table.FEATURE_COLUMNS))
    y = tbl.target()
    hp = HyperParams(n_estimators=50, max_features="sqrt", max_depth=30, bootstrap=True)
    passing_seeds = 0
    for seed in range(30):
        split = metrics.stratified_split(y, seed=seed)
        tr, te = split.rows(metrics.TRAIN), split.rows(metrics.TEST)
        model = forest.fit_forest(X[tr], y[tr], hp, seed=seed,
                                  feature_names=list(table.FEATURE_COLUMNS))
        preds = model.predict(X[te])
        rep_rows = tbl.report_rows(te)
        for r, p in zip(rep_rows, preds):
            r["ensemble"] = float(p)
        report = metrics.correlation_report(rep_rows, list(REPORT_PROXIES) + ["ensemble"])
        wins = 0
        for space in ("sss", "tss"):
            for ds in DATASETS:
                cell = {e["proxy_id"]: e["kendall_abs"] for e in report
                        if e["search_space"] == space and e["dataset"] == ds}
                if not cell:
                    continue
                ens = cell.pop("ensemble")
                rivals = [v for v in cell.values() if not np.isnan(v)]
                wins += ens > (max(rivals) if rivals else 0.0)
        passing_seeds += wins >= 4
    elapsed = time.perf_counter() - t0
    budget_ok = elapsed < 1800 if workers >= 8 else True
    announce(6, passing_seeds >= 24 and budget_ok,
             f"{passing_seeds}/30 seeds with >=4/6 groups won; collect {collect_elapsed:.0f}s, "
             f"total {elapsed:.0f}s on {workers} core(s); 30-min budget stated for 8")


# --- 7: feature-elimination behavior ------------------------------------------------------


def test_criterion_07_rfe_behavior(announce):
    hits = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((240, 23))
        y = 4 * X[:, 0] - 3 * X[:, 1] + 2 * X[:, 2] + 0.5 * rng.standard_normal(240)
        names = [f"signal{i}" for i in range(3)] + [f"noise{i}" for i in range(20)]
        timing = TimingModel(feature_groups={n: {n} for n in names},
                             group_seconds={n: 1.0 for n in names})
        rows, steps = forest.rfe(X, y, names, HyperParams(n_estimators=20), seed, timing)
        at_k6 = next(s for r, s in zip(rows, steps) if r.k == 6)
        hits += sum(1 for n in at_k6 if n.startswith("signal")) >= 2

    rng = np.random.default_rng(0)
    X = rng.standard_normal((240, 23))
    y = 4 * X[:, 0] - 3 * X[:, 1] + 2 * X[:, 2] + 0.5 * rng.standard_normal(240)
    names = [f"f{i}" for i in range(23)]
    timing = TimingModel(feature_groups={n: {n} for n in names},
                         group_seconds={n: 1.0 for n in names})
    hp = HyperParams(n_estimators=20)
    split = metrics.stratified_split(y, seed=0)
    rows, _ = forest.rfe(X, y, names, hp, 0, timing, split=split)
    direct = forest.fit_forest(X[split.rows(metrics.TRAIN)], y[split.rows(metrics.TRAIN)],
                               hp, 0)
    direct_rmse = forest.rmse(direct.predict(X[split.rows(metrics.VAL)]),
                              y[split.rows(metrics.VAL)])
    exact = rows[0].rmse == direct_rmse
    announce(7, hits >= 27 and exact,
             f"planted signals kept at k=6 in {hits}/30 seeds; full-k fit exact")


# --- 8: tuner -------------------------------------------------------------------------------


def test_criterion_08_tuner(announce):
    space = {"x": ("float", 0.0, 10.0)}
    located = 0
    warmup_ok = True
    for seed in range(30):
        best, value, log = tune.tpe_optimize(space, lambda p: (p["x"] - 3) ** 2, 200,
                              seed=seed)
        located += 2.7 <= best["x"] <= 3.3
        warmup_ok &= value <= min(v for _, v in log[:tune.WARMUP_TRIALS])
    announce(8, located >= 28 and warmup_ok,
             f"optimum within +-0.3 in {located}/30 seeds; never worse than warm-up")


# --- 9: determinism ---------------------------------------------------------------------------


def test_criterion_09_determinism(announce, tmp_path):
    paths = {}
    for run in ("a", "b"):
        tdir = tmp_path / run
        tdir.mkdir()
        tab = tdir / "t.csv"
        assert cli.main(["collect", "sss", "-n", "6", "--seed", "13", "--out", str(tab),
                         "--timings-out", str(tdir / "tim.csv")]) == 0
        model = tdir / "m.json"
        assert cli.main(["train", str(tab), "--features", "all", "--seed", "13",
                         "--out", str(model)]) == 0
        report = tdir / "r.csv"
        assert cli.main(["eval", str(model), str(tab), "--mode", "stratified",
                         "--out", str(report)]) == 0
        paths[run] = (tab, model, report)
    identical = all(paths["a"][i].read_bytes() == paths["b"][i].read_bytes()
                    for i in range(3))
    announce(9, identical, "collect/train/eval outputs byte-identical across two runs")


# --- 10: fast-preset economy -------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_fast_preset_economy(announce):
    workers = os.cpu_count() or 1
    all_times = []
    for space, n in (("sss", 50), ("tss", 50)):
        _, times = _collect_space(space, n, seed=771, workers=workers)
        all_times.extend(times)
    registry = dsl.load_registry(dsl.default_registry_path())
    timing = cli.build_timing_model(registry, all_times)
    fast = timing.charge(table.PRESETS["fast"])
    full = timing.charge(table.PRESETS["greenfactory"])
    ratio = fast / full
    announce(10, ratio <= 0.25,
             f"fast {fast:.3f}s vs full {full:.3f}s per network: ratio {ratio:.3f} <= 0.25 "
             f"(measured over 100 networks x 3 datasets)")
