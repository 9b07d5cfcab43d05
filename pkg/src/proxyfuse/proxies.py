"""The literature zero-cost proxies: each maps an untrained network (plus a
batch or a probe record) to one scalar score.

All proxies are deterministic given weights, batch and seeds, and every
raw non-finite result sanitizes to the -1e9 sentinel so that downstream
ranking and regression stay total; the sentinel ranks strictly below any
genuine score. synflow temporarily rewrites the weights and restores them
bit-exactly, so one network must not be scored by synflow concurrently
with anything else; all other proxies are read-only and parallel-safe
across networks.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import arch
from . import autograd as ag
from . import dsl
from .metrics import rankdata

SENTINEL = -1e9


@dataclass
class ProxyScore:
    proxy_id: str
    value: float
    cost_seconds: float = 0.0


def _sanitize(value):
    value = float(value)
    return value if np.isfinite(value) else SENTINEL


def _gaussian_batch(seed, n, tag=0):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(tag)]))
    return rng.standard_normal((n,) + arch.INPUT_SHAPE)


def _relu_codes(network, batch):
    """Per-sample binary activation codes, concatenated across relu layers."""
    trace = arch.Trace()
    network.forward(ag.Tensor(np.asarray(batch, dtype=np.float64)), trace)
    n = batch.shape[0]
    if not trace.relu_pre:
        return np.zeros((n, 0), dtype=np.float64)
    bits = [(t.data > 0).reshape(n, -1) for t in trace.relu_pre]
    return np.concatenate(bits, axis=1).astype(np.float64)


def naswot_kernel(codes):
    """K[i, j] = number of agreeing bits between code i and code j."""
    codes = np.asarray(codes, dtype=np.float64)
    anti = 1.0 - codes
    return codes @ codes.T + anti @ anti.T


def naswot(network, batch):
    """log |det K| of the activation-agreement kernel on one mini-batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 2:
        raise ValueError("naswot needs a batch of at least 2 samples")
    sign, logdet = np.linalg.slogdet(naswot_kernel(_relu_codes(network, batch)))
    return _sanitize(logdet if sign != 0 else -np.inf)


def synflow(network):
    """Data-free saliency: sum of |theta * dR/dtheta| on all-ones input.

    Weights are replaced by their absolute values for the pass and restored
    bit-identically afterwards.
    """
    params = network.weights()
    saved = [p.data.copy() for p in params]
    try:
        for p in params:
            p.data = np.abs(p.data)
        x = ag.Tensor(np.ones((1,) + arch.INPUT_SHAPE))
        out = network.forward(x)
        ag.backward(ag.tsum(out))
        score = 0.0
        for p in params:
            if p.grad is not None:
                score += np.abs(p.data * p.grad).sum()
    finally:
        for p, data in zip(params, saved):
            p.data = data
    return _sanitize(score)


def gradnorm(record):
    """Sum over layers of the Euclidean norm of the weight gradient."""
    total = 0.0
    for stats in record.layers:
        g = stats["pass_grad"]
        total += np.sqrt((g * g).sum())
    return _sanitize(total)


def zen_score(network, seed, eps=0.01, repeats=8):
    """log of the mean feature-map distortion under eps-scaled input noise.

    Each of the `repeats` draws runs one Gaussian batch and its perturbed
    twin through the network; features are the last pre-head map.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    norms = []
    for _ in range(repeats):
        x = rng.standard_normal((arch.BATCH_SIZE,) + arch.INPUT_SHAPE)
        delta = rng.standard_normal(x.shape)
        t1, t2 = arch.Trace(), arch.Trace()
        network.forward(ag.Tensor(x), t1)
        network.forward(ag.Tensor(x + eps * delta), t2)
        diff = t1.block_outputs[-1].data - t2.block_outputs[-1].data
        norms.append(np.sqrt((diff * diff).sum()))
    mean = float(np.mean(norms))
    return _sanitize(np.log(mean) if mean > 0 else -np.inf)


def zico(network, seed, batches=2):
    """Gradient signal-to-noise: per layer, log sum of |mean| / (std + 1e-12)
    of each weight gradient across fresh batches; summed over layers."""
    if batches < 2:
        raise ValueError("zico needs at least 2 batches (std is undefined for 1)")
    num_classes = network.head.bias.data.size
    grads = [[] for _ in network.layers]
    for b in range(batches):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 202, b]))
        x = rng.standard_normal((arch.BATCH_SIZE,) + arch.INPUT_SHAPE)
        labels = rng.integers(0, num_classes, arch.BATCH_SIZE)
        trace = arch.Trace()
        logits = network.forward(ag.Tensor(x, requires_grad=True), trace)
        ag.backward(ag.cross_entropy(logits, labels))
        for i, layer in enumerate(network.layers):
            g = layer.weight.grad
            grads[i].append(g.copy() if g is not None else np.zeros_like(layer.weight.data))
    score = 0.0
    for stack in grads:
        g = np.stack(stack)
        snr = (np.abs(g.mean(axis=0)) / (g.std(axis=0) + 1e-12)).sum()
        if snr > 0:
            score += np.log(snr)
    return _sanitize(score)


# --- neural-tangent-kernel proxy ---------------------------------------------


def _flat_param_grads(network):
    out = []
    for t in network.weights():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        out.append(g.ravel().copy())
    return np.concatenate(out)


def ntk_condition(network, batch):
    """Condition number of the parameter-gradient Gram matrix.

    One row per sample: the gradient of the summed logits. Non-positive or
    non-finite smallest eigenvalue yields inf.
    """
    batch = np.asarray(batch, dtype=np.float64)
    rows = []
    for i in range(batch.shape[0]):
        logits = network.forward(ag.Tensor(batch[i:i + 1], requires_grad=True))
        ag.backward(ag.tsum(logits))
        rows.append(_flat_param_grads(network))
    gram = np.stack(rows)
    k = gram @ gram.T
    if not np.all(np.isfinite(k)):
        return float("inf")
    eig = np.linalg.eigvalsh(k)
    if eig[0] <= 0 or not np.isfinite(eig[-1]):
        return float("inf")
    return float(eig[-1] / eig[0])


def count_linear_regions(network, inputs):
    """Distinct relu activation patterns over the given inputs."""
    codes = _relu_codes(network, np.asarray(inputs, dtype=np.float64))
    return int(np.unique(codes, axis=0).shape[0])


def tenas(network, seed, ntk_samples=8, region_samples=32):
    """Standalone scalarization: regions - log(condition number).

    Within a scored population the two ingredients are better combined by
    rank (see tenas_rank_combination); the standalone form keeps the proxy
    usable row by row.
    """
    kappa = ntk_condition(network, _gaussian_batch(seed, ntk_samples, tag=301))
    regions = count_linear_regions(network, _gaussian_batch(seed, region_samples, tag=302))
    if not np.isfinite(kappa) or kappa <= 0:
        return float(SENTINEL)
    return _sanitize(regions - np.log(kappa))


def tenas_rank_combination(kappas, regions):
    """rank(-kappa) + rank(regions), higher is better; ties average."""
    kappas = np.asarray(kappas, dtype=np.float64)
    regions = np.asarray(regions, dtype=np.float64)
    return rankdata(-kappas) + rankdata(regions)


# --- the four-component proxy --------------------------------------------------


def eigen_entropy(cov):
    """Entropy of the normalized eigenvalue distribution of a covariance."""
    eig = np.clip(np.linalg.eigvalsh(np.asarray(cov, dtype=np.float64)), 0.0, None)
    total = eig.sum()
    if total <= 0:
        return 0.0
    p = eig / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def spectral_norm(mat, steps=20, seed=0, block=8):
    """Largest singular value by block power iteration on the smaller Gram side.

    A single power vector stalls on near-degenerate top singular values; a
    small orthonormal block converges through them while still costing a
    handful of matmuls per step.
    """
    m = np.asarray(mat, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"spectral_norm expects a matrix, got shape {m.shape}")
    gram = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    n = gram.shape[0]
    block = min(block, n)
    rng = np.random.default_rng(seed)
    v = np.linalg.qr(rng.standard_normal((n, block)))[0]
    for _ in range(steps):
        w = gram @ v
        norms = np.linalg.norm(w, axis=0)
        if not norms.max() > 0:
            return 0.0
        v = np.linalg.qr(w)[0]
    lam = np.linalg.eigvalsh(v.T @ gram @ v).max()
    return float(np.sqrt(max(lam, 0.0)))


def _feature_rows(block_output):
    data = block_output.data
    if data.ndim == 4:
        return data.transpose(0, 2, 3, 1).reshape(-1, data.shape[1])
    return data


def _block_entropies(network, x):
    trace = arch.Trace()
    network.forward(ag.Tensor(x), trace)
    entropies = []
    for out in trace.block_outputs:
        rows = _feature_rows(out)
        centered = rows - rows.mean(axis=0, keepdims=True)
        cov = centered.T @ centered / rows.shape[0]
        entropies.append(eigen_entropy(cov))
    return entropies, trace


def rademacher(rng, shape):
    return rng.integers(0, 2, shape).astype(np.float64) * 2.0 - 1.0


def az_components(network, seed, input_shape=arch.INPUT_SHAPE, power_steps=20):
    """Expressivity, progressivity, trainability and FLOPs.

    Expressivity: per-block entropy of the channel-covariance eigenvalue
    distribution (feature-space isotropy), summed over blocks.
    Progressivity: the smallest expressivity gain between consecutive
    blocks. Trainability: per block, -|log sigma| where sigma is the
    spectral norm of the input-gradient matrix obtained by feeding a
    Rademacher vector into the block's backward pass.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 404]))
    x = rng.standard_normal((arch.BATCH_SIZE,) + input_shape)
    entropies, trace = _block_entropies(network, x)
    expressivity = float(sum(entropies))
    if len(entropies) < 2:
        warnings.warn("progressivity undefined for a single-block network; reporting 0")
        progressivity = 0.0
    else:
        progressivity = float(min(b - a for a, b in zip(entropies, entropies[1:])))

    trainability = 0.0
    block_inputs = [x] + [out.data for out in trace.block_outputs[:-1]]
    for block, inp in zip(network.blocks, block_inputs):
        leaf = ag.Tensor(inp, requires_grad=True)
        out = block.forward(leaf, None)
        v = rademacher(rng, out.data.shape)
        ag.backward(ag.tsum(ag.multiply(out, ag.Tensor(v))))
        jac = (leaf.grad if leaf.grad is not None else np.zeros_like(inp)).reshape(
            inp.shape[0], -1)
        sigma = spectral_norm(jac, steps=power_steps, seed=seed)
        trainability += -abs(np.log(max(sigma, 1e-12)))

    return {
        "expressivity": _sanitize(expressivity),
        "progressivity": _sanitize(progressivity),
        "trainability": _sanitize(trainability),
        "flops": float(arch.count_flops(network, input_shape)),
    }


def aznas_aggregate(component_rows):
    """Non-linear rank aggregation: sum over components of ln(rank / n).

    component_rows: one mapping per network with the four component scores.
    The best attainable aggregate is 0 (top rank on every component).
    """
    n = len(component_rows)
    if n < 2:
        raise ValueError("rank aggregation needs a population of at least 2 networks")
    keys = ("expressivity", "progressivity", "trainability", "flops")
    total = np.zeros(n)
    for key in keys:
        ranks = rankdata([row[key] for row in component_rows])
        total += np.log(ranks / n)
    return [float(v) for v in total]


def eznas(record, registry):
    """Score the discovered-formula slot of a registry against a record."""
    if "eznas" not in registry:
        raise dsl.FormulaError("no formula registered under id 'eznas'")
    return _sanitize(dsl.eval_formula(registry["eznas"], record))
