"""Four probe passes over one mini-batch, capturing per-layer statistics.

A record holds, for every parameterized layer (conv, linear), up to 20
statistics: forward input/output, backward input/output, weight gradient
and weights for the clean pass (``pass_*``), for a noisy input
(``pass_noise_*``, x + sigma*N(0,1)), for a sign-perturbed input
(``pass_perturbation_*``, x + eps*sign(N(0,1))), plus the weight gradient
and weights of a freshly re-initialized sibling network scored on the
clean batch (``random_grad``, ``random_wt``).

Every backward uses cross-entropy against seeded uniform-random labels —
the statistics need a loss signal, not a meaningful one. Per-pass
randomness is seeded independently of which passes actually run, so a
record built for a subset of statistics is bit-identical to the
corresponding slice of a full record. Records for different networks can
be built fully in parallel; one record is built by a single evaluator.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import arch
from . import autograd as ag

_PASS_PREFIXES = ("pass", "pass_noise", "pass_perturbation")
_SUFFIXES = ("fwd_input", "fwd_output", "bwd_input", "bwd_output", "grad", "wt")

STAT_NAMES = tuple(
    f"{prefix}_{suffix}" for prefix in _PASS_PREFIXES for suffix in _SUFFIXES
) + ("random_grad", "random_wt")

# seed-stream tags
_LABELS, _NOISE, _PERTURB, _SIBLING = 0, 1, 2, 3

DEFAULT_NOISE_SIGMA = 1.0
DEFAULT_PERTURB_EPS = 0.01


@dataclass
class ProbeRecord:
    layers: list
    seed: int
    noise_sigma: float
    perturb_eps: float
    pass_seconds: dict = field(default_factory=dict)  # wall time of each executed pass


@dataclass
class CostStat:
    mean_seconds: float
    rel_std: float


def _stream(label_seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(label_seed), tag]))


def _forward_backward(network, x_np, labels):
    x = ag.Tensor(x_np, requires_grad=True)
    trace = arch.Trace()
    logits = network.forward(x, trace)
    ag.backward(ag.cross_entropy(logits, labels))
    return trace


def _grad_or_zeros(tensor):
    # layers on a path that never reaches the output get a zero gradient
    return tensor.grad.copy() if tensor.grad is not None else np.zeros_like(tensor.data)


def _capture_pass(network, trace, prefix, layers_out):
    for i, layer in enumerate(network.layers):
        stats = layers_out[i]
        inp, out = trace.layer_inputs[i], trace.layer_outputs[i]
        stats[f"{prefix}_fwd_input"] = inp.data.copy()
        stats[f"{prefix}_fwd_output"] = out.data.copy()
        stats[f"{prefix}_bwd_input"] = _grad_or_zeros(inp)
        stats[f"{prefix}_bwd_output"] = _grad_or_zeros(out)
        stats[f"{prefix}_grad"] = _grad_or_zeros(layer.weight)
        stats[f"{prefix}_wt"] = layer.weight.data.copy()


def _passes_needed(need):
    if need is None:
        return {"clean", "noise", "perturbation", "random_pass"}
    need = set(need)
    unknown = need - set(STAT_NAMES)
    if unknown:
        raise ValueError(f"unknown statistics requested: {sorted(unknown)}")
    passes = set()
    for name in need:
        if name == "random_grad":
            passes.add("random_pass")
        elif name == "random_wt":
            passes.add("random_init")
        elif name.startswith("pass_noise_"):
            passes.add("noise")
        elif name.startswith("pass_perturbation_"):
            passes.add("perturbation")
        else:
            passes.add("clean")
    if "random_pass" in passes:
        passes.discard("random_init")
    return passes


def _noisy_batch(x, noise_sigma, label_seed):
    if noise_sigma == 0.0:
        return x
    return x + noise_sigma * _stream(label_seed, _NOISE).standard_normal(x.shape)


def _perturbed_batch(x, perturb_eps, label_seed):
    if perturb_eps == 0.0:
        return x
    signs = np.sign(_stream(label_seed, _PERTURB).standard_normal(x.shape))
    return x + perturb_eps * signs


def _sibling(network, label_seed):
    seed = int(np.random.SeedSequence(
        [int(label_seed), _SIBLING, int(network.init_seed)]).generate_state(1)[0])
    return arch.instantiate(network.spec, seed)


def run_probes(network, batch, noise_sigma=DEFAULT_NOISE_SIGMA,
               perturb_eps=DEFAULT_PERTURB_EPS, label_seed=0, need=None):
    """Build a ProbeRecord for one network and one batch.

    `need` restricts capture to the passes feeding the given statistic
    names; omitted statistics are simply absent from the record. Two calls
    with identical seeds produce bit-identical records regardless of which
    other passes were requested.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != tuple(arch.INPUT_SHAPE):
        raise ag.ShapeError(f"run_probes: batch shape {x.shape} does not match "
                            f"(N, {', '.join(map(str, arch.INPUT_SHAPE))})")
    if noise_sigma < 0 or perturb_eps < 0:
        raise ValueError("noise_sigma and perturb_eps must be non-negative")
    num_classes = network.head.bias.data.size
    labels = _stream(label_seed, _LABELS).integers(0, num_classes, x.shape[0])
    passes = _passes_needed(need)
    layers = [dict() for _ in network.layers]
    seconds = {}

    if "clean" in passes:
        t0 = time.perf_counter()
        _capture_pass(network, _forward_backward(network, x, labels), "pass", layers)
        seconds["pass_clean"] = time.perf_counter() - t0
    if "noise" in passes:
        t0 = time.perf_counter()
        xn = _noisy_batch(x, noise_sigma, label_seed)
        _capture_pass(network, _forward_backward(network, xn, labels), "pass_noise", layers)
        seconds["pass_noise"] = time.perf_counter() - t0
    if "perturbation" in passes:
        t0 = time.perf_counter()
        xp = _perturbed_batch(x, perturb_eps, label_seed)
        _capture_pass(network, _forward_backward(network, xp, labels),
                      "pass_perturbation", layers)
        seconds["pass_perturbation"] = time.perf_counter() - t0
    if "random_pass" in passes or "random_init" in passes:
        t0 = time.perf_counter()
        sib = _sibling(network, label_seed)
        seconds["random_init"] = time.perf_counter() - t0
        if "random_pass" in passes:
            _forward_backward(sib, x, labels)
        for i, layer in enumerate(sib.layers):
            layers[i]["random_wt"] = layer.weight.data.copy()
            if "random_pass" in passes:
                layers[i]["random_grad"] = _grad_or_zeros(layer.weight)
        if "random_pass" in passes:
            # init cost included: the pass cannot run without the sibling
            seconds["random_pass"] = time.perf_counter() - t0

    if need is not None:
        keep = set(need)
        layers = [{k: v for k, v in stats.items() if k in keep} for stats in layers]
    return ProbeRecord(layers=layers, seed=int(label_seed),
                       noise_sigma=float(noise_sigma), perturb_eps=float(perturb_eps),
                       pass_seconds=seconds)


def capture_cost(network, batch, noise_sigma=DEFAULT_NOISE_SIGMA,
                 perturb_eps=DEFAULT_PERTURB_EPS, label_seed=0, reps=3):
    """Mean wall-clock seconds per probe group, with relative std over reps.

    Groups: the three input passes, sibling re-initialization alone
    (random_init) and the full sibling pass (random_pass, init included).
    Feeds the feature-time accounting used by feature elimination.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    x = np.asarray(batch, dtype=np.float64)
    num_classes = network.head.bias.data.size
    labels = _stream(label_seed, _LABELS).integers(0, num_classes, x.shape[0])

    def clean():
        _forward_backward(network, x, labels)

    def noise():
        _forward_backward(network, _noisy_batch(x, noise_sigma, label_seed), labels)

    def perturbation():
        _forward_backward(network, _perturbed_batch(x, perturb_eps, label_seed), labels)

    def random_init():
        _sibling(network, label_seed)

    def random_pass():
        _forward_backward(_sibling(network, label_seed), x, labels)

    out = {}
    for name, fn in (("pass_clean", clean), ("pass_noise", noise),
                     ("pass_perturbation", perturbation),
                     ("random_init", random_init), ("random_pass", random_pass)):
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        times = np.asarray(times)
        mean = float(times.mean())
        out[name] = CostStat(mean, float(times.std() / mean) if mean > 0 else 0.0)
    return out


def stat_pass_groups(name):
    """Map one statistic identifier to the timing group(s) it charges."""
    if name == "random_grad":
        return {"random_pass"}
    if name == "random_wt":
        return {"random_init"}
    if name.startswith("pass_noise_"):
        return {"pass_noise"}
    if name.startswith("pass_perturbation_"):
        return {"pass_perturbation"}
    if name in STAT_NAMES:
        return {"pass_clean"}
    raise ValueError(f"unknown statistic {name!r}")
