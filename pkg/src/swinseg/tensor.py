"""Dense tensor with a reverse-mode autodiff tape.

Layout is row-major throughout; the logical meaning of each axis is
documented per operation. Default precision is float32; pass float64
arrays (or ``dtype=np.float64`` at parameter creation) to run numerical
verification with more headroom.

Gradients are recorded on an explicit :class:`Tape`. Ops executed while a
tape is active append one node each; ``Tape.backward`` replays the node
list in exact reverse recording order. With no active tape, ops run
forward-only (inference mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Category per op name, used by the graph audit: a forward pass is
# convolution-free iff every recorded node falls in this registry.
OP_CATEGORIES = {
    "linear": "linear",
    "matmul": "attention",
    "softmax": "attention",
    "gather": "attention",
    "layer_norm": "norm",
    "batch_norm": "norm",
    "gelu": "activation",
    "relu": "activation",
    "bilinear_resize": "resize",
    "reshape": "reshape",
    "transpose": "reshape",
    "concat": "reshape",
    "pad2d": "reshape",
    "crop2d": "reshape",
    "roll2d": "reshape",
    "add": "add",
    "scale": "add",
    "sum": "add",
    "mean": "add",
    "cross_entropy": "loss",
}

ALLOWED_CATEGORIES = frozenset(
    {"linear", "norm", "activation", "attention", "resize", "reshape", "add", "loss"}
)


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required."""


class Tensor:
    """N-d value plus an optional same-shape gradient slot.

    Invariants: ``data`` is a contiguous ndarray, ``grad`` is either None
    or an ndarray of identical shape, and forward ops keep all scalars
    finite on finite input.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"


@dataclass
class Node:
    """One recorded op: inputs, output, and the backward rule."""

    op: str
    inputs: tuple
    output: Tensor
    backward: callable


@dataclass
class Tape:
    """Ordered op recording for one forward/backward pass.

    Single-writer: one training step owns the tape exclusively. Backward
    visits nodes in exact reverse recording order.
    """

    rng_seed: int = 0
    nodes: list = field(default_factory=list)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def record(self, op, inputs, output, backward):
        self.nodes.append(Node(op, tuple(inputs), output, backward))

    def backward(self, loss):
        """Seed d(loss)/d(loss)=1 and propagate through all nodes in reverse."""
        if loss.data.size != 1:
            raise ValueError("backward() expects a scalar loss tensor")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.output.grad is None:
                continue
            node.backward(node.output.grad)

    def op_names(self):
        return sorted({n.op for n in self.nodes})

    def count(self, op):
        return sum(1 for n in self.nodes if n.op == op)

    def audit_convolution_free(self):
        """Check every node against the allowed op registry.

        Returns the set of categories seen. Raises ValueError on an op
        that is unregistered or outside the allowed categories (any
        convolution would be both).
        """
        seen = set()
        for node in self.nodes:
            if "conv" in node.op:
                raise ValueError(f"convolution node on tape: {node.op}")
            cat = OP_CATEGORIES.get(node.op)
            if cat is None:
                raise ValueError(f"unregistered op on tape: {node.op}")
            if cat not in ALLOWED_CATEGORIES:
                raise ValueError(f"op {node.op} in disallowed category {cat}")
            seen.add(cat)
        return seen


_TAPE_STACK: list[Tape] = []


def current_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(op, inputs, out_data, backward):
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(op, inputs, out, backward(out))
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. Shapes must match except for documented bias/mask
    broadcasts (trailing-axis or leading-1 expansion)."""
    out_data = a.data + b.data

    def backward(out):
        def run(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.shape))

        return run

    return _record("add", (a, b), out_data, backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    factor = float(factor)
    out_data = x.data * np.asarray(factor, dtype=x.dtype)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(g * factor)

        return run

    return _record("scale", (x,), out_data, backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = x.data.reshape(shape)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(g.reshape(x.shape))

        return run

    return _record("reshape", (x,), out_data, backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out_data = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(g.transpose(inv))

        return run

    return _record("transpose", (x,), out_data, backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(out):
        def run(g):
            pieces = np.split(g, splits, axis=axis)
            for t, piece in zip(tensors, pieces):
                if t.requires_grad:
                    t.accumulate_grad(piece)

        return run

    return _record("concat", tensors, out_data, backward)


def pad2d(x: Tensor, bottom: int, right: int, mode: str = "zero") -> Tensor:
    """Pad axes 0/1 of an [H, W, C] tensor at the bottom/right edge.

    mode 'zero' pads with zeros, 'edge' replicates the border row/col.
    """
    if bottom == 0 and right == 0:
        return x
    np_mode = {"zero": "constant", "edge": "edge"}[mode]
    out_data = np.pad(x.data, ((0, bottom), (0, right), (0, 0)), mode=np_mode)
    h, w = x.shape[0], x.shape[1]

    def backward(out):
        def run(g):
            if not x.requires_grad:
                return
            if mode == "zero":
                x.accumulate_grad(g[:h, :w])
            else:
                gx = g[:h, :w].copy()
                if bottom:
                    gx[h - 1] += g[h:, :w].sum(axis=0)
                if right:
                    gx[:, w - 1] += g[:h, w:].sum(axis=1)
                if bottom and right:
                    gx[h - 1, w - 1] += g[h:, w:].sum(axis=(0, 1))
                x.accumulate_grad(gx)

        return run

    return _record("pad2d", (x,), out_data, backward)


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h-by-w patch of an [H, W, C] tensor."""
    if h == x.shape[0] and w == x.shape[1]:
        return x
    out_data = np.ascontiguousarray(x.data[:h, :w])

    def backward(out):
        def run(g):
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                gx[:h, :w] = g
                x.accumulate_grad(gx)

        return run

    return _record("crop2d", (x,), out_data, backward)


def roll2d(x: Tensor, dy: int, dx: int) -> Tensor:
    """Torus roll of an [H, W, C] tensor by (dy, dx)."""
    out_data = np.roll(x.data, (dy, dx), axis=(0, 1))

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(np.roll(g, (-dy, -dx), axis=(0, 1)))

        return run

    return _record("roll2d", (x,), out_data, backward)


def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` for a [N, C] table and integer index array.

    Output shape is index.shape + (C,). Backward scatter-adds into the table.
    """
    index = np.asarray(index)
    out_data = table.data[index]

    def backward(out):
        def run(g):
            if table.requires_grad:
                gt = np.zeros_like(table.data)
                np.add.at(gt, index.reshape(-1), g.reshape(-1, table.shape[-1]))
                table.accumulate_grad(gt)

        return run

    return _record("gather", (table,), out_data, backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product a[..., n, k] @ b[..., k, m].

    Leading axes must match (or one operand may be 2-d and is shared
    across the other's batch).
    """
    out_data = a.data @ b.data

    def backward(out):
        def run(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a.accumulate_grad(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b.accumulate_grad(_unbroadcast(gb, b.shape))

        return run

    return _record("matmul", (a, b), out_data, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis: y[..., j] = sum_i x[..., i] W[i, j] + b[j]."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"linear: trailing axis {x.shape[-1]} != weight rows {weight.shape[0]}"
        )
    out_data = x.data @ weight.data
    if bias is not None:
        out_data += bias.data

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(g @ weight.data.T)
            if weight.requires_grad:
                g2 = g.reshape(-1, g.shape[-1])
                x2 = x.data.reshape(-1, x.shape[-1])
                weight.accumulate_grad(x2.T @ g2)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

        return run

    return _record("linear", inputs, out_data, backward)


# ---------------------------------------------------------------------------
# normalization and activations


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`; each slice sums to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(out):
        def run(g):
            if x.requires_grad:
                y = out.data
                inner = (g * y).sum(axis=axis, keepdims=True)
                x.accumulate_grad(y * (g - inner))

        return run

    return _record("softmax", (x,), out_data, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data

    def backward(out):
        def run(g):
            d = x.shape[-1]
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                gh = g * gamma.data
                term = gh - gh.mean(axis=-1, keepdims=True)
                term -= xhat * (gh * xhat).mean(axis=-1, keepdims=True)
                x.accumulate_grad(term * inv)

        return run

    return _record("layer_norm", (x, gamma, beta), out_data, backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization over all leading (position) axes.

    Training mode uses batch statistics and updates the running buffers in
    place; eval mode uses the frozen running statistics.
    """
    c = x.shape[-1]
    flat = x.data.reshape(-1, c)
    if training:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        n = flat.shape[0]
        unbiased = var * (n / max(1, n - 1))
        running_mean.data += momentum * (mu - running_mean.data)
        running_var.data += momentum * (unbiased - running_var.data)
    else:
        mu = running_mean.data
        var = running_var.data
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def backward(out):
        def run(g):
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).reshape(-1, c).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate_grad(g.reshape(-1, c).sum(axis=0))
            if x.requires_grad:
                if training:
                    n = flat.shape[0]
                    gh = (g * gamma.data).reshape(-1, c)
                    xh = xhat.reshape(-1, c)
                    term = gh - gh.mean(axis=0) - xh * (gh * xh).mean(axis=0)
                    x.accumulate_grad((term * inv).reshape(x.shape))
                else:
                    x.accumulate_grad(g * gamma.data * inv)

        return run

    return _record("batch_norm", (x, gamma, beta), out_data, backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)

    def backward(out):
        def run(g):
            if x.requires_grad:
                du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
                dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
                x.accumulate_grad(g * dx)

        return run

    return _record("gelu", (x,), out_data, backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(g * (x.data > 0))

        return run

    return _record("relu", (x,), out_data, backward)


# ---------------------------------------------------------------------------
# resize

_RESIZE_CACHE: dict = {}


def _resize_weights(src: int, dst: int, dtype):
    """Half-pixel-center source indices/weights for 1-d linear resize."""
    key = (src, dst, np.dtype(dtype).name)
    hit = _RESIZE_CACHE.get(key)
    if hit is not None:
        return hit
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = (coords - lo).astype(dtype)
    out = (lo, hi, frac)
    _RESIZE_CACHE[key] = out
    return out


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of an [H, W, C] tensor with half-pixel centers.

    Source coordinate for output i is (i+0.5)*H/out_h - 0.5, clamped to
    [0, H-1]; an identity-size resize is an exact copy.
    """
    h, w = x.shape[0], x.shape[1]
    y0, y1, fy = _resize_weights(h, out_h, x.dtype)
    x0, x1, fx = _resize_weights(w, out_w, x.dtype)
    fy_col = fy[:, None, None]
    fx_row = fx[None, :, None]

    top = x.data[y0][:, x0] * (1 - fx_row) + x.data[y0][:, x1] * fx_row
    bot = x.data[y1][:, x0] * (1 - fx_row) + x.data[y1][:, x1] * fx_row
    out_data = top * (1 - fy_col) + bot * fy_col

    def backward(out):
        def run(g):
            if not x.requires_grad:
                return
            gx = np.zeros_like(x.data)
            g_top = g * (1 - fy_col)
            g_bot = g * fy_col
            for rows, gpart in ((y0, g_top), (y1, g_bot)):
                left = gpart * (1 - fx_row)
                right = gpart * fx_row
                np.add.at(gx, (rows[:, None], x0[None, :]), left)
                np.add.at(gx, (rows[:, None], x1[None, :]), right)
            x.accumulate_grad(gx)

        return run

    return _record("bilinear_resize", (x,), out_data, backward)


# ---------------------------------------------------------------------------
# reductions and loss

IGNORE_LABEL = 255


def tensor_sum(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(np.broadcast_to(g, x.shape).copy())

        return run

    return _record("sum", (x,), out_data, backward)


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out_data = np.asarray(x.data.mean(), dtype=x.dtype)

    def backward(out):
        def run(g):
            if x.requires_grad:
                x.accumulate_grad(np.broadcast_to(g / n, x.shape).copy())

        return run

    return _record("mean", (x,), out_data, backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    logits: [N, K]; labels: int array [N] with values in [0, K) or the
    ignore value 255. An all-ignored batch yields loss 0 with zero grad.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ValueError("cross_entropy: labels must match logits leading shape")
    keep = labels != IGNORE_LABEL
    k = logits.shape[-1]
    if keep.any() and (
        labels[keep].min() < 0 or labels[keep].max() >= k
    ):
        raise ValueError("cross_entropy: label out of range")
    count = int(keep.sum())

    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    logsum = np.log(ez.sum(axis=-1)) + zmax[..., 0]
    safe_labels = np.where(keep, labels, 0)
    picked = np.take_along_axis(z, safe_labels[..., None], axis=-1)[..., 0]
    nll = logsum - picked
    if count == 0:
        out_data = np.asarray(0.0, dtype=logits.dtype)
    else:
        out_data = np.asarray(nll[keep].mean(), dtype=logits.dtype)

    def backward(out):
        def run(g):
            if not logits.requires_grad or count == 0:
                return
            probs = ez / ez.sum(axis=-1, keepdims=True)
            onehot = np.zeros_like(probs)
            np.put_along_axis(onehot, safe_labels[..., None], 1.0, axis=-1)
            gl = (probs - onehot) * (keep[..., None] / count)
            logits.accumulate_grad(g * gl)

        return run

    return _record("cross_entropy", (logits,), out_data, backward)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    """Raise NumericError if any entry is NaN/Inf; returns x unchanged."""
    if not np.isfinite(x.data).all():
        raise NumericError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# parameter initialization


def trunc_normal(shape, std=0.02, rng=None, dtype=np.float32):
    """Normal(0, std) samples re-drawn until inside +-2 std."""
    rng = rng or np.random.default_rng()
    vals = rng.standard_normal(shape) * std
    bad = np.abs(vals) > 2 * std
    while bad.any():
        vals[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(vals) > 2 * std
    return Tensor(vals.astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float32, requires_grad=True):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=True):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def constant(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr, requires_grad=False)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    worst_index: tuple
    message: str = ""

    def __bool__(self):
        return self.passed


def grad_check(f, x: Tensor, tol: float = 1e-4) -> GradCheckReport:
    """Compare the tape gradient of scalar-valued f at x to central differences.

    Uses h = 1e-5 * max(1, |x_i|) per coordinate and the error metric
    |g_tape - g_num| / max(1, |g_tape|, |g_num|), so near-zero gradients
    are compared absolutely. Run in float64 for meaningful tolerances.
    """
    if x.dtype != np.float64:
        raise ValueError("grad_check requires a float64 input tensor")
    x.grad = None
    with Tape() as tape:
        y = f(x)
        if y.data.size != 1:
            raise ValueError("grad_check requires a scalar-valued function")
        if not np.isfinite(y.data).all():
            return GradCheckReport(False, math.inf, (), "non-finite forward value")
        tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = 1e-5 * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return GradCheckReport(False, math.inf, (i,), "non-finite probe value")
        nflat[i] = (fp - fm) / (2 * h)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    worst = int(rel.argmax())
    report = GradCheckReport(
        passed=bool(rel.max() <= tol),
        max_rel_err=float(rel.max()),
        worst_index=np.unravel_index(worst, x.shape),
    )
    if not report.passed:
        report.message = f"max rel err {report.max_rel_err:.3e} > tol {tol:g}"
    return report
