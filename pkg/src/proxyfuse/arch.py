"""Desk-scale search spaces, network instantiation, and cost counting.

Two spaces are supported:

* ``tss`` — a topology space: a 4-node cell DAG with one of 5 operations on
  each of its 6 edges (5^6 = 15,625 cells), stacked ``num_cells`` times
  behind a conv stem at constant width.
* ``sss`` — a size space: a fixed chain of 5 conv-relu stages whose widths
  are drawn from 8 values (8^5 = 32,768 configurations), with 2x2 mean
  pooling after stages 2 and 4.

Networks are instantiated with Kaiming-style Gaussian init
(std = sqrt(2 / fan_in), zero biases) and are a pure function of
(spec, seed). Inputs are 3x16x16 images by default; networks are probed,
never trained.

Because the synthetic benchmark ships no trained accuracies, a surrogate
target is published here: a clamped, noisy function of parameter count,
effective depth, and FLOPs, with per-dataset constants. It is openly
synthetic; its only job is to give the regression pipeline a target whose
structure no single feature explains.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autograd as ag

EDGE_OPS = ("none", "skip", "conv1x1", "conv3x3", "avgpool3x3")
WIDTH_CHOICES = (8, 16, 24, 32, 40, 48, 56, 64)
# DAG edges of the 4-node cell, lexicographic
CELL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

INPUT_SHAPE = (3, 16, 16)
BATCH_SIZE = 16


@dataclass(frozen=True)
class CellSpec:
    edge_ops: tuple
    stem_channels: int = 16
    num_cells: int = 3
    num_classes: int = 10

    def __post_init__(self):
        if len(self.edge_ops) != len(CELL_EDGES):
            raise ValueError(f"expected {len(CELL_EDGES)} edge ops, got {len(self.edge_ops)}")
        for op in self.edge_ops:
            if op not in EDGE_OPS:
                raise ValueError(f"unknown edge op {op!r}")
        if self.stem_channels < 1 or self.num_cells < 1 or self.num_classes < 1:
            raise ValueError("stem_channels, num_cells and num_classes must be positive")

    @property
    def space(self):
        return "tss"

    def canonical(self):
        return "tss|" + ",".join(self.edge_ops)


@dataclass(frozen=True)
class SizeSpec:
    stage_widths: tuple
    num_classes: int = 10

    def __post_init__(self):
        if len(self.stage_widths) != 5:
            raise ValueError(f"expected 5 stage widths, got {len(self.stage_widths)}")
        for w in self.stage_widths:
            if w not in WIDTH_CHOICES:
                raise ValueError(f"width {w} not in {WIDTH_CHOICES}")

    @property
    def space(self):
        return "sss"

    def canonical(self):
        return "sss|" + ",".join(str(w) for w in self.stage_widths)


def parse_spec(text, num_classes=10):
    """Inverse of .canonical(); round-trips bit-exactly."""
    try:
        space, _, body = text.partition("|")
        if space == "tss":
            return CellSpec(tuple(body.split(",")), num_classes=num_classes)
        if space == "sss":
            return SizeSpec(tuple(int(w) for w in body.split(",")), num_classes=num_classes)
    except ValueError as exc:
        raise ValueError(f"bad spec string {text!r}: {exc}") from None
    raise ValueError(f"bad spec string {text!r}: unknown space {space!r}")


def with_classes(spec, num_classes):
    return dataclasses.replace(spec, num_classes=num_classes)


def sample_spec(space, rng_seed, num_classes=10):
    """Uniform draw from a space; deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    if space == "tss":
        ops = tuple(EDGE_OPS[i] for i in rng.integers(0, len(EDGE_OPS), len(CELL_EDGES)))
        return CellSpec(ops, num_classes=num_classes)
    if space == "sss":
        widths = tuple(WIDTH_CHOICES[i] for i in rng.integers(0, len(WIDTH_CHOICES), 5))
        return SizeSpec(widths, num_classes=num_classes)
    raise ValueError(f"unknown search space {space!r}")


# --- layers and blocks -------------------------------------------------------


class ConvLayer:
    def __init__(self, name, c_in, c_out, k, rng):
        fan_in = c_in * k * k
        std = np.sqrt(2.0 / fan_in)
        self.name = name
        self.kind = "conv"
        self.weight = ag.Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)), requires_grad=True)
        self.bias = ag.Tensor(np.zeros(c_out), requires_grad=True)

    def apply(self, x, trace):
        out = ag.add_chan(ag.conv2d(x, self.weight), self.bias)
        if trace is not None:
            trace.layer_inputs.append(x)
            trace.layer_outputs.append(out)
        return out


class LinearLayer:
    def __init__(self, name, d_in, d_out, rng):
        std = np.sqrt(2.0 / d_in)
        self.name = name
        self.kind = "linear"
        self.weight = ag.Tensor(rng.normal(0.0, std, (d_in, d_out)), requires_grad=True)
        self.bias = ag.Tensor(np.zeros(d_out), requires_grad=True)

    def apply(self, x, trace):
        out = ag.add_rowvec(ag.matmul(x, self.weight), self.bias)
        if trace is not None:
            trace.layer_inputs.append(x)
            trace.layer_outputs.append(out)
        return out


class Trace:
    """Per-forward capture: layer I/O, relu pre-activations, block outputs."""

    def __init__(self):
        self.layer_inputs = []
        self.layer_outputs = []
        self.relu_pre = []
        self.block_outputs = []


def _relu(x, trace):
    if trace is not None:
        trace.relu_pre.append(x)
    return ag.relu(x)


class _StemBlock:
    def __init__(self, conv):
        self.conv = conv

    def forward(self, x, trace):
        return _relu(self.conv.apply(x, trace), trace)


class _CellBlock:
    """4-node DAG; node j sums its incoming edge results, node 3 is the output."""

    def __init__(self, edge_layers):
        self.edge_layers = edge_layers  # (op, ConvLayer or None) per CELL_EDGES slot

    def forward(self, x, trace):
        nodes = [x, None, None, None]
        for j in range(1, 4):
            acc = None
            for e, (i, jj) in enumerate(CELL_EDGES):
                if jj != j:
                    continue
                op, layer = self.edge_layers[e]
                if op == "none":
                    continue
                src = nodes[i]
                if op == "skip":
                    t = src
                elif op == "avgpool3x3":
                    t = ag.avgpool2d(src, 3)
                else:
                    t = _relu(layer.apply(src, trace), trace)
                acc = t if acc is None else ag.add(acc, t)
            nodes[j] = acc if acc is not None else ag.Tensor(np.zeros(x.data.shape))
        return nodes[3]


class _StageBlock:
    def __init__(self, conv, pool_after):
        self.conv = conv
        self.pool_after = pool_after

    def forward(self, x, trace):
        out = _relu(self.conv.apply(x, trace), trace)
        if self.pool_after:
            out = ag.avgpool_halve(out)
        return out


class Network:
    """Instantiated network: ordered blocks, a pool+linear head, seeded weights."""

    def __init__(self, spec, init_seed, blocks, head, layers):
        self.spec = spec
        self.init_seed = init_seed
        self.blocks = blocks
        self.head = head
        self.layers = layers  # parameterized layers in forward order (head last)

    def forward(self, x, trace=None):
        for block in self.blocks:
            x = block.forward(x, trace)
            if trace is not None:
                trace.block_outputs.append(x)
        pooled = ag.tmean(x, axis=(2, 3))
        return self.head.apply(pooled, trace)

    def weights(self):
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


def instantiate(spec, init_seed):
    """Build a network from a spec; bit-identical weights for equal (spec, seed)."""
    rng = np.random.default_rng(init_seed)
    layers = []
    blocks = []
    if spec.space == "tss":
        c = spec.stem_channels
        stem = ConvLayer("stem", INPUT_SHAPE[0], c, 3, rng)
        layers.append(stem)
        blocks.append(_StemBlock(stem))
        for cell_idx in range(spec.num_cells):
            edge_layers = []
            for e, op in enumerate(spec.edge_ops):
                if op in ("conv1x1", "conv3x3"):
                    k = 1 if op == "conv1x1" else 3
                    layer = ConvLayer(f"cell{cell_idx}.edge{e}", c, c, k, rng)
                    layers.append(layer)
                    edge_layers.append((op, layer))
                else:
                    edge_layers.append((op, None))
            blocks.append(_CellBlock(edge_layers))
        feat = c
    else:
        c = INPUT_SHAPE[0]
        for i, w in enumerate(spec.stage_widths):
            conv = ConvLayer(f"stage{i}", c, w, 3, rng)
            layers.append(conv)
            blocks.append(_StageBlock(conv, pool_after=i in (1, 3)))
            c = w
        feat = c
    head = LinearLayer("head", feat, spec.num_classes, rng)
    layers.append(head)
    return Network(spec, init_seed, blocks, head, layers)


def count_params(network):
    """Exact number of weight and bias scalars."""
    return int(sum(t.data.size for t in network.weights()))


def conv_flops(c_in, c_out, k, h, w):
    """Multiply-accumulates of a same-padded conv, counted as 2 FLOPs each (no bias)."""
    return 2 * (c_in * k * k * c_out) * h * w


def matmul_flops(m, k, n):
    return 2 * m * k * n


def pool_flops(c, h, w, k):
    # k*k adds plus one scale per output element
    return (k * k + 1) * c * h * w


def count_flops(network, input_shape=INPUT_SHAPE):
    """Forward FLOPs for a single sample.

    Convention: conv/linear multiply-accumulates count as 2 FLOPs, pooling
    counts its adds plus the final scale, and bias adds, relu, skip and
    elementwise sums count as 0. none/skip edges therefore cost nothing.
    """
    c_in, h, w = input_shape
    spec = network.spec
    total = 0
    if spec.space == "tss":
        if c_in != INPUT_SHAPE[0]:
            raise ag.ShapeError(f"count_flops: stem expects {INPUT_SHAPE[0]} channels, got {c_in}")
        c = spec.stem_channels
        total += conv_flops(c_in, c, 3, h, w)
        per_cell = 0
        for op in spec.edge_ops:
            if op == "conv1x1":
                per_cell += conv_flops(c, c, 1, h, w)
            elif op == "conv3x3":
                per_cell += conv_flops(c, c, 3, h, w)
            elif op == "avgpool3x3":
                per_cell += pool_flops(c, h, w, 3)
        total += per_cell * spec.num_cells
        feat = c
    else:
        c = c_in
        for i, width in enumerate(spec.stage_widths):
            total += conv_flops(c, width, 3, h, w)
            c = width
            if i in (1, 3):
                h, w = h // 2, w // 2
                total += pool_flops(c, h, w, 2)
        feat = c
    total += (h * w + 1) * feat            # global average pool
    total += matmul_flops(1, feat, spec.num_classes)
    return int(total)


def depth_effective(network):
    """Number of parameterized layers, head included."""
    return len(network.layers)


# --- synthetic surrogate target ----------------------------------------------

# per-dataset (offset, log-params gain, flops-penalty weight); the class
# counts follow the usual image benchmarks so heads differ per dataset.
# Calibrated so that within every (space, dataset) slice the target peaks at
# intermediate size: no single feature column explains it, which is what
# makes ensemble-vs-single-proxy comparisons meaningful.
SURROGATE_COEFFS = {
    "cifar10": (7.8, 8.0, 0.40),
    "cifar100": (-15.6, 8.0, 0.44),
    "imagenet16": (-33.8, 8.0, 0.40),
}
SURROGATE_DEPTH_GAIN = 0.5
SURROGATE_NOISE_VAR = 2.0
DATASETS = ("cifar10", "cifar100", "imagenet16")
NUM_CLASSES = {"cifar10": 10, "cifar100": 100, "imagenet16": 120}


def surrogate_accuracy(params, flops, depth, dataset, noise_seed):
    """Synthetic stand-in for a trained test accuracy, clamped to [0, 100].

    acc = offset + a*log(params) + g*depth - c*(flops/1e6)^1.5 + eps, with
    eps drawn N(0, 2) (variance 2) from noise_seed. Openly synthetic; real
    targets can be ingested via the collect command's --target-csv flag.
    """
    if dataset not in SURROGATE_COEFFS:
        raise ValueError(f"unknown dataset tag {dataset!r}")
    offset, a, c = SURROGATE_COEFFS[dataset]
    eps = np.random.default_rng(noise_seed).normal(0.0, np.sqrt(SURROGATE_NOISE_VAR))
    raw = (offset + a * np.log(params) + SURROGATE_DEPTH_GAIN * depth
           - c * (flops / 1e6) ** 1.5 + eps)
    return float(np.clip(raw, 0.0, 100.0))
