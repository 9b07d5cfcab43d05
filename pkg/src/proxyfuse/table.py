"""Score-table schema and CSV I/O.

One row per (network, dataset tag): three metadata columns, 26 feature
columns (3 dataset indicators + params + flops + 21 proxy scores) and the
target accuracy. The header is fixed; feature values are finite by
construction (proxies sanitize upstream). search_space is metadata and is
never fed to the regressor.

Files are written atomically (temp + rename) with round-trip-exact float
formatting, so equal tables produce byte-identical files.
"""

import csv
import os
import tempfile

import numpy as np

from .arch import DATASETS
from .forest import TimingModel

META_COLUMNS = ("net_id", "spec", "search_space")
PROXY_IDS = (
    "synflow", "gradnorm", "naswot", "tenas", "zennas", "zico", "eznas",
    "aznas", "az_expressivity", "az_progressivity", "az_trainability",
    "gm_a", "gm_b", "gm_c", "gm_d", "gm_e", "gm_f", "gm_g", "gm_h", "gm_i", "gm_j",
)
FEATURE_COLUMNS = DATASETS + ("params", "flops") + PROXY_IDS
COLUMNS = META_COLUMNS + FEATURE_COLUMNS + ("accuracy",)
# proxy-style columns reported in correlation tables
REPORT_PROXIES = ("params", "flops") + PROXY_IDS

_INT_COLUMNS = set(DATASETS) | {"params", "flops"}

PRESETS = {
    "all": list(FEATURE_COLUMNS),
    # everything except the one data-free pruning proxy
    "greenfactory": [c for c in FEATURE_COLUMNS if c != "synflow"],
    # the six-feature efficiency preset
    "fast": ["gm_e", "gm_f", "gm_j", "gradnorm", "eznas", "cifar10"],
}


class DataError(Exception):
    """Malformed or inconsistent table/timing/model data."""


def resolve_features(arg):
    """Preset name or explicit comma-separated list -> validated column list."""
    if arg in PRESETS:
        return list(PRESETS[arg])
    names = [n.strip() for n in arg.split(",") if n.strip()]
    missing = [n for n in names if n not in FEATURE_COLUMNS]
    if missing:
        raise ValueError(f"unknown feature name(s): {', '.join(missing)}")
    if not names:
        raise ValueError("empty feature list")
    return names


def _format(column, value):
    if column in META_COLUMNS:
        return str(value)
    if column in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ScoreTable:
    def __init__(self, rows=None):
        self.rows = list(rows) if rows else []

    def __len__(self):
        return len(self.rows)

    def check(self):
        for i, row in enumerate(self.rows):
            missing = [c for c in COLUMNS if c not in row]
            if missing:
                raise DataError(f"row {i} missing column(s): {', '.join(missing)}")
            for c in FEATURE_COLUMNS + ("accuracy",):
                if not np.isfinite(row[c]):
                    raise DataError(f"row {i} has non-finite {c}")
        return self

    def dataset_of(self, row):
        for d in DATASETS:
            if row[d] == 1:
                return d
        raise DataError(f"row {row.get('net_id')} has no dataset indicator set")

    def feature_matrix(self, features):
        missing = [f for f in features if f not in FEATURE_COLUMNS]
        if missing:
            raise DataError(f"unknown feature column(s): {', '.join(missing)}")
        return np.array([[float(r[f]) for f in features] for r in self.rows])

    def target(self):
        return np.array([float(r["accuracy"]) for r in self.rows])

    def report_rows(self, indices=None):
        """Rows as plain dicts with a derived 'dataset' key, for reports."""
        picked = self.rows if indices is None else [self.rows[i] for i in indices]
        out = []
        for r in picked:
            d = dict(r)
            d["dataset"] = self.dataset_of(r)
            out.append(d)
        return out

    def to_csv_text(self):
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow([_format(c, row[c]) for c in COLUMNS])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write(path, self.to_csv_text())

    @classmethod
    def read_csv(cls, path):
        try:
            with open(path, "r", encoding="utf-8", newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or tuple(reader.fieldnames) != COLUMNS:
                    raise DataError(f"{path}: header does not match the score-table schema")
                rows = []
                for rec in reader:
                    row = {}
                    for c in COLUMNS:
                        if c in META_COLUMNS:
                            row[c] = rec[c]
                        elif c in _INT_COLUMNS:
                            row[c] = int(rec[c])
                        else:
                            row[c] = float(rec[c])
                    rows.append(row)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
        return cls(rows).check()


# --- timing sidecar -------------------------------------------------------------


def write_timings(path, timing):
    lines = ["kind,name,groups,seconds"]
    for name in sorted(timing.group_seconds):
        lines.append(f"group,{name},,{timing.group_seconds[name]!r}")
    for name in sorted(timing.feature_groups):
        groups = ";".join(sorted(timing.feature_groups[name]))
        seconds = timing.feature_marginal.get(name, 0.0)
        lines.append(f"feature,{name},{groups},{seconds!r}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_timings(path):
    feature_groups, group_seconds, marginal = {}, {}, {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            expected = ["kind", "name", "groups", "seconds"]
            if reader.fieldnames != expected:
                raise DataError(f"{path}: expected columns {expected}")
            for rec in reader:
                if rec["kind"] == "group":
                    group_seconds[rec["name"]] = float(rec["seconds"])
                elif rec["kind"] == "feature":
                    groups = set(g for g in rec["groups"].split(";") if g)
                    feature_groups[rec["name"]] = groups
                    marginal[rec["name"]] = float(rec["seconds"])
                else:
                    raise DataError(f"{path}: unknown record kind {rec['kind']!r}")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return TimingModel(feature_groups=feature_groups, group_seconds=group_seconds,
                       feature_marginal=marginal)


def check_timing_covers(timing, features):
    missing = [f for f in features
               if f not in timing.feature_groups and f not in DATASETS]
    if missing:
        raise DataError(f"timing file lacks feature group(s): {', '.join(missing)}")
