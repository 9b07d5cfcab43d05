"""Dense float64 tensors with reverse-mode differentiation.

Deliberately small: just enough primitives for probe-scale convolutional
and linear networks and for the statistics the proxy formulas consume.
Everything is 64-bit; there is no broadcasting in this core (elementwise
operations demand exact shape equality — shape adaptation is the formula
evaluator's business, not the tensor engine's). relu'(0) = 0 throughout,
and finite-difference tests rely on that convention.

A tensor created by an operation keeps references to its parents and a
vector-Jacobian callback. Creation order is monotone (every tensor gets an
increasing id), so the recorded graph is topologically ordered by
construction; ``tape_of`` linearizes it and ``backward`` sweeps it exactly
once in reverse. Two sweeps over the same graph produce bit-identical
gradients.

Concurrency: one recorded graph must be driven by a single evaluator, but
distinct graphs/tensors are fully independent.
"""

import itertools

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes violate a primitive's contract."""


class ContractError(RuntimeError):
    """An operation was used outside its contract (e.g. backward on a non-scalar)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tid", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._tid = next(_ids)
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def backward(self):
        backward(self)


def _make(op, data, parents, vjp):
    if any(p.requires_grad for p in parents):
        return Tensor(data, _parents=tuple(parents), _vjp=vjp, _op=op)
    return Tensor(data, _op=op)


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


def tape_of(output):
    """The recorded nodes feeding `output`, in creation (topological) order.

    Only nodes that require grad appear; every node is listed exactly once
    and every node's parents precede it.
    """
    seen = set()
    nodes = []
    stack = [output]
    while stack:
        node = stack.pop()
        if node._tid in seen or not node.requires_grad:
            continue
        seen.add(node._tid)
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda t: t._tid)
    return nodes


def backward(output):
    """Populate .grad on every grad-requiring tensor feeding the scalar `output`."""
    if output.data.size != 1:
        raise ContractError(f"backward requires a scalar output, got shape {output.data.shape}")
    tape = tape_of(output)
    grads = {output._tid: np.ones_like(output.data)}
    for node in reversed(tape):
        g = grads.pop(node._tid, None)
        if g is None:
            continue
        node.grad = g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent._tid)
            grads[parent._tid] = pg if acc is None else acc + pg


# --- elementwise -----------------------------------------------------------


def add(a, b):
    _check_same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def subtract(a, b):
    _check_same_shape("subtract", a, b)
    return _make("subtract", a.data - b.data, (a, b), lambda g: (g, -g))


def multiply(a, b):
    _check_same_shape("multiply", a, b)
    return _make("multiply", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def invert(x):
    """Elementwise 1/x. Divides as-is; poles produce non-finite values."""
    with np.errstate(divide="ignore"):
        y = 1.0 / x.data
    return _make("invert", y, (x,), lambda g: (-g * y * y,))


def absolute(x):
    return _make("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def log(x):
    """Natural log; non-positive inputs yield non-finite values by contract."""
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    return _make("log", y, (x,), lambda g: (g / x.data,))


def square(x):
    return _make("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def minimum(a, b):
    _check_same_shape("minimum", a, b)
    mask = a.data <= b.data  # ties route to the left operand
    return _make("minimum", np.where(mask, a.data, b.data), (a, b),
                 lambda g: (g * mask, g * ~mask))


def maximum(a, b):
    _check_same_shape("maximum", a, b)
    mask = a.data >= b.data
    return _make("maximum", np.where(mask, a.data, b.data), (a, b),
                 lambda g: (g * mask, g * ~mask))


def relu(x):
    mask = x.data > 0.0
    return _make("relu", x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x):
    """Softmax along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        gy = g * y
        return (gy - y * gy.sum(axis=-1, keepdims=True),)

    return _make("softmax", y, (x,), vjp)


# --- reductions / reshaping -------------------------------------------------


def _unreduce(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def tsum(x, axis=None):
    return _make("sum", x.data.sum(axis=axis), (x,),
                 lambda g: (_unreduce(g, x.data.shape, axis),))


def tmean(x, axis=None):
    y = x.data.mean(axis=axis)
    scale = x.data.size / y.size

    def vjp(g):
        return (_unreduce(g, x.data.shape, axis) / scale,)

    return _make("mean", y, (x,), vjp)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D tensor, got shape {x.data.shape}")
    return _make("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x, shape):
    old = x.data.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def l1_norm(x):
    return _make("l1_norm", np.abs(x.data).sum(), (x,), lambda g: (g * np.sign(x.data),))


def frobenius_norm(x):
    n = np.sqrt((x.data * x.data).sum())

    def vjp(g):
        if n == 0.0:  # subgradient at the origin
            return (np.zeros_like(x.data),)
        return (g * x.data / n,)

    return _make("frobenius_norm", n, (x,), vjp)


# --- linear algebra / convolution -------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.data.shape} vs {b.data.shape}")
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def add_rowvec(x, v):
    """Add a length-K vector to every row of an (N, K) matrix (bias add)."""
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_rowvec: got {x.data.shape} and {v.data.shape}")
    return _make("add_rowvec", x.data + v.data, (x, v), lambda g: (g, g.sum(axis=0)))


def add_chan(x, v):
    """Add a per-channel vector to an (N, C, H, W) tensor (conv bias add)."""
    if x.data.ndim != 4 or v.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_chan: got {x.data.shape} and {v.data.shape}")
    return _make("add_chan", x.data + v.data[None, :, None, None], (x, v),
                 lambda g: (g, g.sum(axis=(0, 2, 3))))


def _im2col(x, kh, kw):
    """(N, C, H, W) -> (N*H*W, C*kh*kw) patches under same zero padding, stride 1."""
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    N, C, Hp, Wp = xp.shape
    H, W = Hp - kh + 1, Wp - kw + 1
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (N, H, W, C, kh, kw), (s0, s2, s3, s1, s2, s3))
    return view.reshape(N * H * W, C * kh * kw), (N, H, W)


def _col2im(cols, x_shape, kh, kw):
    """Adjoint of _im2col: scatter-add patches back onto the padded image."""
    N, C, H, W = x_shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    gxp = np.zeros((N, C, H + 2 * ph, W + 2 * pw))
    cols = cols.reshape(N, H, W, C, kh, kw)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + H, j:j + W] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, ph:ph + H, pw:pw + W]


def conv2d(x, w):
    """2-D convolution, stride 1, zero padding preserving spatial size.

    x: (N, C, H, W); w: (F, C, kh, kw) with odd kh, kw. Implemented as
    im2col + matmul; correctness over speed at this scale.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: got input {x.data.shape} and kernel {w.data.shape}")
    N, C, H, W = x.data.shape
    F, Cw, kh, kw = w.data.shape
    if Cw != C:
        raise ShapeError(f"conv2d: channel mismatch, input {C} vs kernel {Cw}")
    if kh % 2 == 0 or kw % 2 == 0 or kh > H + kh - 1 or kw > W + kw - 1:
        raise ShapeError(f"conv2d: unsupported kernel {kh}x{kw} for input {H}x{W}")
    cols, (n, h, ww) = _im2col(x.data, kh, kw)
    wmat = w.data.reshape(F, C * kh * kw)
    out = (cols @ wmat.T).reshape(n, h, ww, F).transpose(0, 3, 1, 2)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(N * H * W, F)
        gw = (gmat.T @ cols).reshape(F, C, kh, kw)
        gx = _col2im(gmat @ wmat, x.data.shape, kh, kw)
        return gx, gw

    return _make("conv2d", out, (x, w), vjp)


def avgpool2d(x, k=3):
    """k x k mean pooling, stride 1, same zero padding (padded zeros count)."""
    if x.data.ndim != 4:
        raise ShapeError(f"avgpool2d: expected (N, C, H, W), got {x.data.shape}")
    N, C, H, W = x.data.shape
    p = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + H, j:j + W]
    out /= k * k

    def vjp(g):
        gp = np.zeros((N, C, H + 2 * p, W + 2 * p))
        gs = g / (k * k)
        for i in range(k):
            for j in range(k):
                gp[:, :, i:i + H, j:j + W] += gs
        return (gp[:, :, p:p + H, p:p + W],)

    return _make("avgpool2d", out, (x,), vjp)


def avgpool_halve(x):
    """2x2 mean pooling with stride 2; spatial dims must be even."""
    N, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avgpool_halve: odd spatial dims {H}x{W}")
    y = x.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return _make("avgpool_halve", y, (x,), vjp)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (N, K) logits, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels "
            f"for {logits.data.shape[0]} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = labels.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _make("cross_entropy", loss, (logits,), vjp)


# name -> (function, arity) catalog of differentiable primitives; the
# finite-difference suite iterates this
PRIMITIVES = {
    "add": (add, 2),
    "subtract": (subtract, 2),
    "multiply": (multiply, 2),
    "invert": (invert, 1),
    "abs": (absolute, 1),
    "log": (log, 1),
    "square": (square, 1),
    "minimum": (minimum, 2),
    "maximum": (maximum, 2),
    "relu": (relu, 1),
    "sigmoid": (sigmoid, 1),
    "softmax": (softmax, 1),
    "sum": (tsum, 1),
    "mean": (tmean, 1),
    "transpose": (transpose, 1),
    "l1_norm": (l1_norm, 1),
    "frobenius_norm": (frobenius_norm, 1),
    "matmul": (matmul, 2),
    "conv2d": (conv2d, 2),
    "avgpool2d": (avgpool2d, 1),
    "avgpool_halve": (avgpool_halve, 1),
    "add_rowvec": (add_rowvec, 2),
    "add_chan": (add_chan, 2),
    "cross_entropy": (cross_entropy, None),  # labels are not differentiated
}


def gradient_check(f, point, h=1e-5):
    """Max relative error of analytic gradients against central differences.

    `f` maps a list of Tensors to a scalar Tensor; `point` is one array or a
    sequence of arrays. Error is |analytic - numeric| / max(1, |numeric|),
    maximized over all coordinates of all inputs.
    """
    if h <= 0:
        raise ContractError("gradient_check: h must be positive")
    arrays = [np.asarray(p, dtype=np.float64) for p in
              (point if isinstance(point, (list, tuple)) else [point])]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(tensors)
    if out.data.size != 1:
        raise ContractError("gradient_check: f must be scalar-valued")
    backward(out)
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = tensors[k].grad
        if analytic is None:
            analytic = np.zeros_like(a)
        flat = a.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f([Tensor(x) for x in arrays]).data)
            flat[i] = orig - h
            lo = float(f([Tensor(x) for x in arrays]).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * h)
            err = abs(analytic.ravel()[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
