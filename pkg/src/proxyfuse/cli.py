"""Command-line pipeline: collect score tables, train, eliminate features,
tune hyperparameters, and evaluate.

Commands: collect, score, train, rfe, tune, eval, report. Global flags
--seed/--workers/--registry/--out plus an optional key=value --config file;
precedence is CLI flag > config file > built-in default. Every command is
deterministic given its seed flags: score tables, models and reports are
byte-identical across runs (the timing sidecar records wall-clock
measurements and is exempt). Exit codes: 0 success, 2 usage error, 3 data
error.
"""

import argparse
import json
import sys
import time
from multiprocessing import get_context

import numpy as np

from . import arch, dsl, forest, metrics, probes, proxies, table, tune
from .arch import DATASETS, NUM_CLASSES
from .forest import HyperParams, TimingModel
from .table import DataError, FEATURE_COLUMNS, PROXY_IDS, REPORT_PROXIES, ScoreTable

EXIT_USAGE = 2
EXIT_DATA = 3

# seed-stream tags for the collect pipeline
_TAG_SPEC, _TAG_INIT, _TAG_BATCH, _TAG_LABEL, _TAG_PROXY, _TAG_ACC = range(6)

GM_IDS = tuple(f"gm_{c}" for c in "abcdefghij")


class UsageError(Exception):
    pass


def _derive(*parts):
    return int(np.random.SeedSequence(list(int(p) for p in parts)).generate_state(1)[0])


def _limit_blas_threads():
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass


# --- scoring one network --------------------------------------------------------


def _require_formulas(registry):
    missing = [name for name in GM_IDS + ("eznas",) if name not in registry]
    if missing:
        raise DataError(f"registry lacks formula(s): {', '.join(missing)}")


def score_network(spec_text, dataset, run_seed, spec_index, registry,
                  noise_sigma, perturb_eps):
    """All 26 features plus surrogate accuracy for one (spec, dataset) row.

    The population-ranked column (aznas) is left at 0.0 here; collect fills
    it per dataset group once the whole population is scored.
    """
    spec = arch.parse_spec(spec_text, num_classes=NUM_CLASSES[dataset])
    ds_idx = DATASETS.index(dataset)
    init_seed = _derive(run_seed, _TAG_INIT, spec_index)
    batch_seed = _derive(run_seed, _TAG_BATCH, spec_index, ds_idx)
    label_seed = _derive(run_seed, _TAG_LABEL, spec_index, ds_idx)
    proxy_seed = _derive(run_seed, _TAG_PROXY, spec_index, ds_idx)

    times = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        value = fn()
        times[name] = times.get(name, 0.0) + time.perf_counter() - t0
        return value

    network = arch.instantiate(spec, init_seed)
    batch = np.random.default_rng(batch_seed).standard_normal(
        (arch.BATCH_SIZE,) + arch.INPUT_SHAPE)

    row = {"net_id": f"{spec.space}-{spec_index:05d}", "spec": spec_text,
           "search_space": spec.space}
    for d in DATASETS:
        row[d] = 1 if d == dataset else 0

    params = timed("counts", lambda: arch.count_params(network))
    flops = timed("counts", lambda: arch.count_flops(network))
    row["params"] = params
    row["flops"] = flops

    record = probes.run_probes(network, batch, noise_sigma=noise_sigma,
                               perturb_eps=perturb_eps, label_seed=label_seed)
    times.update(record.pass_seconds)

    row["synflow"] = timed("synflow", lambda: proxies.synflow(network))
    row["gradnorm"] = timed("gradnorm_marginal", lambda: proxies.gradnorm(record))
    row["naswot"] = timed("naswot", lambda: proxies.naswot(network, batch))
    row["tenas"] = timed("tenas", lambda: proxies.tenas(network, proxy_seed))
    row["zennas"] = timed("zennas", lambda: proxies.zen_score(network, proxy_seed))
    row["zico"] = timed("zico", lambda: proxies.zico(network, proxy_seed))
    row["eznas"] = timed("eznas_marginal", lambda: proxies.eznas(record, registry))
    az = timed("aznas", lambda: proxies.az_components(network, proxy_seed))
    row["az_expressivity"] = az["expressivity"]
    row["az_progressivity"] = az["progressivity"]
    row["az_trainability"] = az["trainability"]
    row["aznas"] = 0.0
    for name in GM_IDS:
        tree = registry[name]
        row[name] = timed(f"{name}_marginal",
                          lambda t=tree: _finite(dsl.eval_formula(t, record)))
    row["accuracy"] = arch.surrogate_accuracy(
        params, flops, arch.depth_effective(network), dataset,
        _derive(run_seed, _TAG_ACC, spec_index, ds_idx))
    return row, times


def _finite(value):
    return value if np.isfinite(value) else 0.0


def fill_rank_aggregate(rows):
    """Populate the aznas column per dataset group of a collected population."""
    for dataset in DATASETS:
        members = [r for r in rows if r[dataset] == 1]
        if len(members) < 2:
            for r in members:
                r["aznas"] = 0.0
            continue
        comp = [{"expressivity": r["az_expressivity"],
                 "progressivity": r["az_progressivity"],
                 "trainability": r["az_trainability"],
                 "flops": r["flops"]} for r in members]
        for r, value in zip(members, proxies.aznas_aggregate(comp)):
            r["aznas"] = value


def feature_group_map(registry):
    """feature -> timing groups it charges; formula features derive theirs
    from the statistics their programs reference."""
    groups = {d: set() for d in DATASETS}
    groups["params"] = {"counts"}
    groups["flops"] = {"counts"}
    for pid in ("synflow", "naswot", "tenas", "zennas", "zico"):
        groups[pid] = {pid}
    groups["gradnorm"] = {"pass_clean"}
    for pid in ("az_expressivity", "az_progressivity", "az_trainability"):
        groups[pid] = {"aznas"}
    groups["aznas"] = {"aznas", "counts"}
    for name in GM_IDS + ("eznas",):
        groups[name] = dsl.pass_groups_of(registry[name])
    return groups


def build_timing_model(registry, per_network_times):
    """Average the per-network measurements into a TimingModel."""
    group_names = ("pass_clean", "pass_noise", "pass_perturbation", "random_init",
                   "random_pass", "counts", "synflow", "naswot", "tenas", "zennas",
                   "zico", "aznas")
    sums = {}
    for times in per_network_times:
        for key, value in times.items():
            sums[key] = sums.get(key, 0.0) + value
    n = max(1, len(per_network_times))
    group_seconds = {g: sums.get(g, 0.0) / n for g in group_names}
    marginal = {}
    for name in GM_IDS + ("eznas", "gradnorm"):
        marginal[name] = sums.get(f"{name}_marginal", 0.0) / n
    return TimingModel(feature_groups=feature_group_map(registry),
                       group_seconds=group_seconds, feature_marginal=marginal)


# --- collect ----------------------------------------------------------------------


_WORKER = {}


def _init_worker(registry_path, noise_sigma, perturb_eps):
    _limit_blas_threads()
    registry = dsl.load_registry(registry_path)
    _require_formulas(registry)
    _WORKER.update(registry=registry, noise_sigma=noise_sigma, perturb_eps=perturb_eps)


def _collect_task(task):
    index, spec_text, dataset, run_seed, spec_index = task
    row, times = score_network(spec_text, dataset, run_seed, spec_index,
                               _WORKER["registry"], _WORKER["noise_sigma"],
                               _WORKER["perturb_eps"])
    return index, row, times


def _read_target_csv(path):
    import csv as _csv

    targets = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = _csv.DictReader(fh)
            needed = {"spec", "dataset", "accuracy"}
            if not needed <= set(reader.fieldnames or ()):
                raise DataError(f"{path}: target csv needs columns {sorted(needed)}")
            for rec in reader:
                targets[(rec["spec"], rec["dataset"])] = float(rec["accuracy"])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return targets


def cmd_collect(args):
    datasets = [d.strip() for d in args.datasets.split(",") if d.strip()]
    unknown = [d for d in datasets if d not in DATASETS]
    if unknown:
        raise UsageError(f"unknown dataset tag(s): {', '.join(unknown)}")
    if args.n < 1:
        raise UsageError("-n must be at least 1")
    out = args.out or f"{args.space}_table.csv"
    timings_out = args.timings_out or out.replace(".csv", "") + ".timings.csv"

    tasks = []
    for i in range(args.n):
        spec = arch.sample_spec(args.space, _derive(args.seed, _TAG_SPEC, i))
        for dataset in datasets:
            tasks.append((len(tasks), spec.canonical(), dataset, args.seed, i))

    if args.workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(args.workers, initializer=_init_worker,
                      initargs=(args.registry, args.noise_sigma, args.perturb_eps)) as pool:
            results = pool.map(_collect_task, tasks, chunksize=1)
    else:
        _init_worker(args.registry, args.noise_sigma, args.perturb_eps)
        results = [_collect_task(t) for t in tasks]

    results.sort(key=lambda r: r[0])
    rows = [row for _, row, _ in results]
    per_times = [times for _, _, times in results]
    fill_rank_aggregate(rows)

    if args.target_csv:
        targets = _read_target_csv(args.target_csv)
        for row in rows:
            dataset = next(d for d in DATASETS if row[d] == 1)
            key = (row["spec"], dataset)
            if key not in targets:
                raise DataError(f"target csv lacks accuracy for {key}")
            row["accuracy"] = targets[key]

    tbl = ScoreTable(rows).check()
    tbl.write_csv(out)
    registry = dsl.load_registry(args.registry)
    _require_formulas(registry)
    table.write_timings(timings_out, build_timing_model(registry, per_times))
    print(f"wrote {len(tbl)} rows to {out} (timings: {timings_out})")
    return 0


def cmd_score(args):
    registry = dsl.load_registry(args.registry)
    _require_formulas(registry)
    try:
        arch.parse_spec(args.spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    row, _ = score_network(args.spec, args.dataset, args.seed, 0, registry,
                           args.noise_sigma, args.perturb_eps)
    print("population-ranked column 'aznas' is 0.0 for a single network",
          file=sys.stderr)
    out = ScoreTable([row])
    sys.stdout.write(out.to_csv_text())
    return 0


# --- train / eval -------------------------------------------------------------------


def _load_hyperparams(path):
    if path is None:
        return HyperParams()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read hyperparameters from {path}: {exc}") from None
    params = blob.get("best", blob)
    try:
        return HyperParams(**params).validate()
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad hyperparameters in {path}: {exc}") from None


def _split_table(tbl, mode, seed):
    bins = 5 if mode == "stratified" else 1
    return metrics.stratified_split(tbl.target(), bins=bins, seed=seed)


def _print_table(headers, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    print("  ".join(str(h).ljust(w) for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


def _group_rmse(tbl, indices, predictions):
    groups = {}
    for pos, idx in enumerate(indices):
        row = tbl.rows[idx]
        key = (row["search_space"], tbl.dataset_of(row))
        groups.setdefault(key, []).append(pos)
    out = []
    for (space, dataset) in sorted(groups):
        pos = groups[(space, dataset)]
        y = np.array([tbl.rows[indices[p]]["accuracy"] for p in pos])
        out.append((space, dataset, forest.rmse(predictions[pos], y), len(pos)))
    return out


def cmd_train(args):
    tbl = ScoreTable.read_csv(args.table)
    try:
        features = table.resolve_features(args.features)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    hp = _load_hyperparams(args.hp)
    X = tbl.feature_matrix(features)
    y = tbl.target()
    split = _split_table(tbl, args.split, args.split_seed)
    train_rows = split.rows(metrics.TRAIN)
    model = forest.fit_forest(X[train_rows], y[train_rows], hp, seed=args.seed,
                              feature_names=features)
    out = args.out or "model.json"
    table.atomic_write(out, model.to_json() + "\n")

    test_rows = split.rows(metrics.TEST)
    preds = model.predict(X[test_rows])
    grouped = _group_rmse(tbl, test_rows, preds)
    print(f"trained {hp.n_estimators} trees on {train_rows.size} rows "
          f"({len(features)} features) -> {out}")
    _print_table(("space", "dataset", "test_rmse", "n"),
                 [(s, d, f"{r:.4f}", n) for s, d, r, n in grouped])
    overall = forest.rmse(preds, y[test_rows])
    print(f"overall test rmse: {overall:.4f}")
    return 0


def _eval_one_mode(tbl, model, mode, split_seed):
    split = _split_table(tbl, mode, split_seed)
    test_rows = split.rows(metrics.TEST)
    X = tbl.feature_matrix(model.feature_names)
    preds = model.predict(X[test_rows])
    report_rows = tbl.report_rows(test_rows)
    for row, pred in zip(report_rows, preds):
        row["ensemble"] = float(pred)
    report = metrics.correlation_report(report_rows, list(REPORT_PROXIES) + ["ensemble"])
    rmse_rows = _group_rmse(tbl, test_rows, preds)
    return report, rmse_rows


def _report_csv_text(report):
    lines = ["proxy_id,search_space,dataset,kendall_abs,spearman_abs,n"]
    for e in report:
        lines.append(f"{e['proxy_id']},{e['search_space']},{e['dataset']},"
                     f"{e['kendall_abs']!r},{e['spearman_abs']!r},{e['n']}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    tbl = ScoreTable.read_csv(args.table)
    try:
        with open(args.model, "r", encoding="utf-8") as fh:
            model = forest.ForestModel.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load model {args.model}: {exc}") from None
    modes = ("random", "stratified") if args.mode == "both" else (args.mode,)
    out = args.out or "eval_report.csv"
    for mode in modes:
        report, rmse_rows = _eval_one_mode(tbl, model, mode, args.split_seed)
        path = out if len(modes) == 1 else out.replace(".csv", "") + f".{mode}.csv"
        table.atomic_write(path, _report_csv_text(report))
        print(f"[{mode}] ensemble test RMSE per group:")
        _print_table(("space", "dataset", "rmse", "n"),
                     [(s, d, f"{r:.4f}", n) for s, d, r, n in rmse_rows])
        ens = [e for e in report if e["proxy_id"] == "ensemble"]
        _print_table(("space", "dataset", "|tau|", "|rho|"),
                     [(e["search_space"], e["dataset"], f"{e['kendall_abs']:.4f}",
                       f"{e['spearman_abs']:.4f}") for e in ens])
        print(f"[{mode}] report written to {path}")
    return 0


def cmd_report(args):
    tbl = ScoreTable.read_csv(args.table)
    report = metrics.correlation_report(tbl.report_rows(), list(REPORT_PROXIES))
    out = args.out or "proxy_report.csv"
    table.atomic_write(out, _report_csv_text(report))
    best = {}
    for e in report:
        key = (e["search_space"], e["dataset"])
        if np.isnan(e["kendall_abs"]):
            continue
        if key not in best or e["kendall_abs"] > best[key][1]:
            best[key] = (e["proxy_id"], e["kendall_abs"])
    _print_table(("space", "dataset", "best_proxy", "|tau|"),
                 [(s, d, pid, f"{tau:.4f}") for (s, d), (pid, tau) in sorted(best.items())])
    print(f"report written to {out}")
    return 0


# --- rfe / tune ----------------------------------------------------------------------


def cmd_rfe(args):
    tbl = ScoreTable.read_csv(args.table)
    timing = table.read_timings(args.timings)
    table.check_timing_covers(timing, FEATURE_COLUMNS)
    hp = _load_hyperparams(args.hp)
    X = tbl.feature_matrix(list(FEATURE_COLUMNS))
    rows, steps = forest.rfe(X, tbl.target(), list(FEATURE_COLUMNS), hp,
                             args.seed, timing)
    out = args.out or "rfe_tradeoff.csv"
    lines = ["k,rmse,time_seconds,score"]
    for r in rows:
        lines.append(f"{r.k},{r.rmse!r},{r.time_seconds!r},{r.score!r}")
    table.atomic_write(out, "\n".join(lines) + "\n")
    steps_out = args.steps_out or out.replace(".csv", "") + ".steps.csv"
    lines = ["k," + ",".join(FEATURE_COLUMNS)]
    for r, selected in zip(rows, steps):
        chosen = set(selected)
        lines.append(f"{r.k}," + ",".join("1" if f in chosen else "0"
                                          for f in FEATURE_COLUMNS))
    table.atomic_write(steps_out, "\n".join(lines) + "\n")
    best = min(rows, key=lambda r: r.score)
    print(f"wrote {out} and {steps_out}; best trade-off at k={best.k} "
          f"(rmse {best.rmse:.3f}, time {best.time_seconds:.3f}s, score {best.score:.3f})")
    return 0


def cmd_tune(args):
    if args.trials < tune.WARMUP_TRIALS:
        raise UsageError(f"--trials must be at least {tune.WARMUP_TRIALS}")
    tbl = ScoreTable.read_csv(args.table)
    try:
        features = table.resolve_features(args.features)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    X = tbl.feature_matrix(features)
    y = tbl.target()
    split = _split_table(tbl, "stratified", args.split_seed)
    train_rows, val_rows = split.rows(metrics.TRAIN), split.rows(metrics.VAL)

    def objective(params):
        hp = tune.params_to_hyperparams(params)
        model = forest.fit_forest(X[train_rows], y[train_rows], hp, seed=args.seed)
        return forest.rmse(model.predict(X[val_rows]), y[val_rows])

    best, value, log = tune.tpe_optimize(tune.hp_space(), objective, args.trials,
                                         seed=args.seed, sampler=args.sampler)
    out = args.out or "tuned.json"
    table.atomic_write(out, json.dumps(
        {"best": best, "objective": value, "trials": args.trials,
         "seed": args.seed, "sampler": args.sampler}, indent=2) + "\n")
    log_path = args.log or out.replace(".json", "") + ".trials.csv"
    names = list(tune.hp_space())
    lines = ["trial," + ",".join(names) + ",objective"]
    for i, (params, obj) in enumerate(log):
        lines.append(f"{i}," + ",".join(str(params[n]) for n in names) + f",{obj!r}")
    table.atomic_write(log_path, "\n".join(lines) + "\n")
    print(f"best validation rmse {value:.4f} with {best} -> {out}")
    return 0


# --- argument plumbing -----------------------------------------------------------------


_CONFIG_KEYS = ("seed", "workers", "registry", "noise_sigma", "perturb_eps")
_BUILTIN_DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "registry": None,  # packaged registry resolved lazily
    "noise_sigma": probes.DEFAULT_NOISE_SIGMA,
    "perturb_eps": probes.DEFAULT_PERTURB_EPS,
}


def _apply_config(args):
    config = {}
    if getattr(args, "config", None):
        try:
            config = dsl.read_kv_file(args.config)
        except (OSError, dsl.FormulaError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
    for key in _CONFIG_KEYS:
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            if key in config:
                raw = config[key]
                cast = type(_BUILTIN_DEFAULTS[key]) if _BUILTIN_DEFAULTS[key] is not None else str
                setattr(args, key, cast(raw))
            else:
                setattr(args, key, _BUILTIN_DEFAULTS[key])
    if getattr(args, "registry", None) is None:
        args.registry = dsl.default_registry_path()


def _add_common(p, out_help="output path"):
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--workers", type=int, default=None, help="parallel workers")
    p.add_argument("--registry", default=None, help="formula registry file")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", default=None, help=out_help)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="proxyfuse",
        description="training-free network scoring and accuracy regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="sample networks, score all proxies, write a table")
    p.add_argument("space", choices=("sss", "tss"))
    p.add_argument("-n", type=int, required=True, help="number of sampled networks")
    p.add_argument("--datasets", default=",".join(DATASETS),
                   help="comma-separated dataset tags (one row per network per tag)")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--perturb-eps", dest="perturb_eps", type=float, default=None)
    p.add_argument("--timings-out", dest="timings_out", default=None)
    p.add_argument("--target-csv", dest="target_csv", default=None,
                   help="externally supplied (spec, dataset, accuracy) rows")
    _add_common(p, "score table path")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("score", help="print one score-table row for a spec string")
    p.add_argument("spec", help="e.g. 'sss|8,16,24,32,64' or 'tss|skip,conv3x3,...'")
    p.add_argument("--dataset", choices=DATASETS, default="cifar10")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--perturb-eps", dest="perturb_eps", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="fit the accuracy regressor on a table")
    p.add_argument("table")
    p.add_argument("--features", default="all",
                   help="all | greenfactory | fast | comma-separated list")
    p.add_argument("--hp", default=None, help="hyperparameter json (or tuned.json)")
    p.add_argument("--split", choices=("stratified", "random"), default="stratified")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    _add_common(p, "model output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rfe", help="recursive feature elimination with time trade-off")
    p.add_argument("table")
    p.add_argument("timings", help="timing sidecar from collect")
    p.add_argument("--hp", default=None)
    p.add_argument("--steps-out", dest="steps_out", default=None)
    _add_common(p, "trade-off table path")
    p.set_defaults(func=cmd_rfe)

    p = sub.add_parser("tune", help="hyperparameter search on the validation slice")
    p.add_argument("table")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--features", default="all")
    p.add_argument("--sampler", choices=("tpe", "random"), default="tpe")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    p.add_argument("--log", default=None, help="trial log csv")
    _add_common(p, "tuned parameter json path")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="correlations and RMSE of a trained model")
    p.add_argument("model")
    p.add_argument("table")
    p.add_argument("--mode", choices=("random", "stratified", "both"), default="both")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    _add_common(p, "report csv path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="per-proxy correlation table, no model")
    p.add_argument("table")
    _add_common(p, "report csv path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args) or 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, dsl.FormulaError, dsl.EvalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
