"""Textual proxy-formula DSL: parser, printer and evaluator.

Grammar::

    expr := IDENT
          | OP '(' expr ')'
          | OP '(' expr ',' expr ')'
          | '(' expr ')'

Identifiers are the 20 per-layer statistics captured by the probe harness;
operators come from the fixed vocabulary below. Redundant outer parentheses
and arbitrary whitespace/newlines are accepted, since registered formulas
commonly contain both.

Evaluation runs per layer over a probe record: the expression is evaluated
against that layer's statistics, the result is scalarized (mean of its
elements) and the per-layer scalars are summed. A non-finite final score
sanitizes to 0.0 — formula scores feed a regressor, where 0 is a neutral
imputation.

Shape rule: a binary operation on operands of different shapes flattens
both and truncates to the shorter length, so evaluation never aborts on
shape grounds. Two refinements keep distribution-style operators
meaningful: mat_mul truncates the inner dimensions of the 2-D flattenings,
and kl_div softmaxes each operand in full before truncating (truncating
first would collapse any scalar-vs-tensor divergence to exactly zero).
cosine_similarity of a zero vector is 0. Division-style guards use 1e-12
epsilons.
"""

from dataclasses import dataclass

import numpy as np

from .probes import STAT_NAMES, stat_pass_groups

_EPS = 1e-12

UNARY_OPS = (
    "abs", "log", "relu", "sigmoid", "heaviside", "less_than_zero", "power",
    "element_wise_invert", "normalize", "softmax", "ones_like", "gaussian_init",
    "numel", "l1_norm", "frobenius_norm", "normalized_sum", "determinant",
    "transpose",
)
BINARY_OPS = (
    "subtract", "element_wise_product", "min", "max", "greater_than",
    "less_than", "equal", "cosine_similarity", "kl_div", "mat_mul",
)
# `sum` totals one operand or adds two elementwise
VARIADIC_OPS = ("sum",)
ALL_OPS = UNARY_OPS + BINARY_OPS + VARIADIC_OPS


class FormulaError(ValueError):
    """Parse or registry problem, carrying the source offset when known."""

    def __init__(self, message, pos=None):
        self.pos = pos
        super().__init__(message if pos is None else f"{message} (offset {pos})")


class EvalError(RuntimeError):
    """A formula referenced a statistic the record does not carry."""


@dataclass(frozen=True)
class Stat:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self):
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expect(self, char):
        if self._peek() != char:
            raise FormulaError(f"expected {char!r}", self.pos)
        self.pos += 1

    def _ident(self):
        self._skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum()
                                             or self.text[self.pos] == "_"):
            self.pos += 1
        if self.pos == start:
            raise FormulaError("expected an identifier", start)
        return self.text[start:self.pos], start

    def expr(self):
        if self._peek() == "(":
            self.pos += 1
            inner = self.expr()
            self._expect(")")
            return inner
        name, start = self._ident()
        if self._peek() != "(":
            if name not in STAT_NAMES:
                raise FormulaError(f"unknown identifier {name!r}", start)
            return Stat(name)
        if name not in ALL_OPS:
            raise FormulaError(f"unknown operator {name!r}", start)
        self.pos += 1
        first = self.expr()
        if self._peek() == ",":
            self.pos += 1
            second = self.expr()
            self._expect(")")
            if name in UNARY_OPS:
                raise FormulaError(f"operator {name!r} takes one argument", start)
            return Binary(name, first, second)
        self._expect(")")
        if name in BINARY_OPS:
            raise FormulaError(f"operator {name!r} takes two arguments", start)
        return Unary(name, first)


def parse(text):
    if not text or not text.strip():
        raise FormulaError("empty formula", 0)
    p = _Parser(text)
    tree = p.expr()
    p._skip_ws()
    if p.pos != len(text):
        raise FormulaError("trailing input after formula", p.pos)
    return tree


def pretty_print(expr):
    """Canonical text; parse(pretty_print(e)) == e."""
    if isinstance(expr, Stat):
        return expr.name
    if isinstance(expr, Unary):
        return f"{expr.op}({pretty_print(expr.child)})"
    return f"{expr.op}({pretty_print(expr.left)}, {pretty_print(expr.right)})"


def stat_names_of(expr):
    """All statistic identifiers referenced by a formula."""
    if isinstance(expr, Stat):
        return {expr.name}
    if isinstance(expr, Unary):
        return stat_names_of(expr.child)
    return stat_names_of(expr.left) | stat_names_of(expr.right)


def pass_groups_of(expr):
    """Timing groups a formula charges (union over its statistics)."""
    groups = set()
    for name in stat_names_of(expr):
        groups |= stat_pass_groups(name)
    return groups


# --- operator semantics -------------------------------------------------------


def _flat2d(a):
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim == 2:
        return a
    return a.reshape(a.shape[0], -1)


def _align(a, b):
    if a.shape == b.shape:
        return a, b
    fa, fb = a.ravel(), b.ravel()
    n = min(fa.size, fb.size)
    return fa[:n], fb[:n]


def _softmax_flat(a):
    v = a.ravel()
    e = np.exp(v - v.max())
    return e / e.sum()


def _unary_value(op, x, rng_for_node):
    if op == "abs":
        return np.abs(x)
    if op == "log":
        return np.log(np.abs(x) + _EPS)
    if op == "relu":
        return np.maximum(x, 0.0)
    if op == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if op == "heaviside":
        return (x > 0).astype(np.float64)
    if op == "less_than_zero":
        return (x < 0).astype(np.float64)
    if op == "power":
        return x * x
    if op == "element_wise_invert":
        sign = np.where(x >= 0, 1.0, -1.0)
        return 1.0 / (x + _EPS * sign)
    if op == "normalize":
        return (x - x.mean()) / (x.std() + _EPS)
    if op == "softmax":
        return _softmax_flat(x)
    if op == "ones_like":
        return np.ones_like(x)
    if op == "gaussian_init":
        return rng_for_node().standard_normal(x.shape)
    if op == "numel":
        return np.float64(x.size)
    if op == "l1_norm":
        return np.abs(x).sum()
    if op == "frobenius_norm":
        return np.sqrt((x * x).sum())
    if op == "normalized_sum":
        return x.sum() / x.size
    if op == "determinant":
        m = _flat2d(x)
        sign, logdet = np.linalg.slogdet(m @ m.T)
        return logdet if sign != 0 else np.float64(-np.inf)
    if op == "transpose":
        return _flat2d(x).T
    raise AssertionError(op)


def _binary_value(op, a, b):
    if op == "mat_mul":
        ma, mb = _flat2d(a), _flat2d(b)
        k = min(ma.shape[1], mb.shape[0])
        return ma[:, :k] @ mb[:k, :]
    if op == "cosine_similarity":
        fa, fb = _align(a, b)
        fa, fb = fa.ravel(), fb.ravel()
        denom = np.linalg.norm(fa) * np.linalg.norm(fb)
        return np.dot(fa, fb) / denom if denom > 0 else np.float64(0.0)
    if op == "kl_div":
        p, q = _align(_softmax_flat(a), _softmax_flat(b))
        p = np.maximum(p, _EPS)
        q = np.maximum(q, _EPS)
        return (p * np.log(p / q)).sum()
    a, b = _align(a, b)
    if op == "subtract":
        return a - b
    if op == "element_wise_product":
        return a * b
    if op == "min":
        return np.minimum(a, b)
    if op == "max":
        return np.maximum(a, b)
    if op == "greater_than":
        return (a > b).astype(np.float64)
    if op == "less_than":
        return (a < b).astype(np.float64)
    if op == "equal":
        return (a == b).astype(np.float64)
    if op == "sum":
        return a + b
    raise AssertionError(op)


def _eval_node(expr, stats, record_seed, counter, layer_label):
    index = counter[0]
    counter[0] += 1
    if isinstance(expr, Stat):
        if expr.name not in stats:
            raise EvalError(f"statistic {expr.name!r} missing at layer {layer_label}")
        return np.asarray(stats[expr.name], dtype=np.float64)
    if isinstance(expr, Unary):
        child = _eval_node(expr.child, stats, record_seed, counter, layer_label)
        if expr.op == "sum":
            return np.asarray(child.sum())

        def rng_for_node():
            return np.random.default_rng(np.random.SeedSequence([int(record_seed), index]))

        return np.asarray(_unary_value(expr.op, child, rng_for_node))
    left = _eval_node(expr.left, stats, record_seed, counter, layer_label)
    right = _eval_node(expr.right, stats, record_seed, counter, layer_label)
    return np.asarray(_binary_value(expr.op, left, right))


def eval_layer(expr, stats, record_seed, layer_label=0):
    """Evaluate one formula against one layer's statistics (unsanitized)."""
    with np.errstate(all="ignore"):
        value = _eval_node(expr, stats, record_seed, [0], layer_label)
    return float(np.mean(value))


def eval_formula(expr, record):
    """Per-layer evaluation, mean-scalarized and summed; non-finite -> 0.0."""
    total = 0.0
    for i, stats in enumerate(record.layers):
        total += eval_layer(expr, stats, record.seed, i)
    return total if np.isfinite(total) else 0.0


# --- registry ------------------------------------------------------------------


def read_kv_file(path):
    """Line-oriented `key = value` file with `#` comments.

    A line that does not start a new `key =` entry continues the previous
    value (registered formulas span multiple lines).
    """
    entries = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            head, eq, tail = line.partition("=")
            key = head.strip()
            if eq and key and all(c.isalnum() or c == "_" for c in key):
                entries[key] = tail.strip()
                current = key
            elif current is not None:
                entries[current] += " " + stripped
            else:
                raise FormulaError(f"stray line in registry: {stripped[:40]!r}")
    return entries


def load_registry(path):
    """Parse every formula in a registry file; returns {id: FormulaExpr}."""
    parsed = {}
    for key, text in read_kv_file(path).items():
        try:
            parsed[key] = parse(text)
        except FormulaError as exc:
            raise FormulaError(f"registry entry {key!r}: {exc}") from None
    return parsed


def default_registry_path():
    import importlib.resources

    return str(importlib.resources.files("proxyfuse").joinpath("data/formulas.txt"))
