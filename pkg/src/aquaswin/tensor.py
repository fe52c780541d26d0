"""Dense float32 tensors with reverse-mode automatic differentiation.

The core is define-by-run: each differentiable operation appends a node to a
global tape, and ``Tensor.backward`` replays the tape in reverse append order,
accumulating gradients into every ``requires_grad`` tensor it reaches.  The
tape is cleared with :func:`reset_tape` at the start of every training step;
nothing is retained between forward passes.

The operator set is exactly what the enhancement models need.  Broadcasting
follows numpy rules and gradients are summed back to each input's shape.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

DTYPE = np.float32

# Floor applied inside log() so probabilities from a saturated sigmoid do not
# produce -inf losses.
LOG_FLOOR = 1e-12

_finite_checks = False


def set_finite_checks(enabled: bool) -> None:
    """Assert every op output is finite.  Slow; meant for tests."""
    global _finite_checks
    _finite_checks = enabled


class Node:
    """One recorded operation: output tensor, inputs, and a pullback."""

    __slots__ = ("out", "inputs", "backward", "name")

    def __init__(self, out, inputs, backward, name):
        self.out = out
        self.inputs = inputs
        self.backward = backward  # g_out -> tuple of input grads (None allowed)
        self.name = name


class Tape:
    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []


_tape = Tape()
_recording = True


def tape() -> Tape:
    return _tape


def reset_tape() -> None:
    """Drop all recorded nodes.  Call once per training step."""
    _tape.nodes.clear()


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _recording
        self._prev = _recording
        _recording = False
        return self

    def __exit__(self, *exc):
        global _recording
        _recording = self._prev
        return False


class Tensor:
    """A numpy array plus gradient bookkeeping.

    Treat ``data`` as immutable once the tensor has been consumed by an op;
    parameters are only updated through the optimizer, which runs after the
    backward pass that read them.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            # keep float arrays at the precision the caller chose; everything
            # else (ints, bools, python lists) becomes the working dtype
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.node_id = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def permute(self, axes):
        return permute(self, axes)

    def sum(self, axes=None, keepdims=False):
        return _reduce(self, axes, keepdims, kind="sum")

    def mean(self, axes=None, keepdims=False):
        return _reduce(self, axes, keepdims, kind="mean")

    def abs_mean(self, axes=None, keepdims=False):
        return _reduce(self, axes, keepdims, kind="abs_mean")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _record(out_data, inputs, backward_fn, name) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(out_data)):
        raise ContractError(f"{name}: non-finite values in output")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.node_id = None
    if _recording and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape.nodes.append(Node(out, inputs, backward_fn, name))
        out.node_id = len(_tape.nodes) - 1
    else:
        out.requires_grad = False
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor reaching loss.

    Repeated calls add into existing ``grad`` arrays; call ``zero_grad`` (or
    the optimizer, which clears grads it consumed) between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for node in reversed(_tape.nodes):
        g = grads.pop(node.out, None)
        if g is None:
            continue
        if node.out.requires_grad:
            _deposit(node.out, g)
        in_grads = node.backward(g)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            if t in grads:
                grads[t] = grads[t] + ig
            else:
                grads[t] = ig
    for t, g in grads.items():
        _deposit(t, g)


def _deposit(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast to reach the target shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def log(x: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log of max(x, floor); the floor keeps saturated inputs finite."""
    safe = np.maximum(x.data, floor)
    out = np.log(safe)

    def bw(g):
        return (g / safe,)

    return _record(out, (x,), bw, "log")


# ---------------------------------------------------------------------------
# matmul and convolution


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2D+ operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc
    out = a.data @ b.data

    def bw(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), bw, "matmul")


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    img = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    col = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = img[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def _col2im(col: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    col6 = col.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            # overlapping patches accumulate
            img[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += col6[:, :, i, j]
    if pad:
        img = img[:, :, pad : pad + h, pad : pad + w]
    return img


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, x [n,c,h,w] * weight [co,ci,kh,kw] + bias [co].

    Implemented as im2col followed by one matmul; the backward pass scatters
    the column gradient back with col2im.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d needs 4D x and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: x has {c}, weight expects {ci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({co},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    oh = _conv_out_size(h, kh, stride, padding)
    ow = _conv_out_size(w, kw, stride, padding)
    col = _im2col(x.data, kh, kw, stride, padding)  # [n*oh*ow, c*kh*kw]
    wmat = weight.data.reshape(co, -1)
    out = col @ wmat.T + bias.data
    out = out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (g2.T @ col).reshape(weight.shape)
        gb = g2.sum(axis=0)
        gcol = g2 @ wmat
        gx = _col2im(gcol, x.shape, kh, kw, stride, padding)
        return gx, gw, gb

    return _record(out, (x, weight, bias), bw, "conv2d")


# ---------------------------------------------------------------------------
# activations

_GELU_C = np.float64(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU; smooth, so finite differences check cleanly."""
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd * xd * xd)
    t = np.tanh(u.astype(xd.dtype))
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du).astype(xd.dtype),)

    return _record(out.astype(xd.dtype), (x,), bw, "gelu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def bw(g):
        return (np.where(pos, g, slope * g),)

    return _record(out.astype(x.data.dtype), (x,), bw, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _record(t, (x,), bw, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # two-branch form avoids overflow in exp for large |x|
    s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    s = s.astype(xd.dtype)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _record(s, (x,), bw, "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim, "softmax")
    m = x.data.max(axis=ax, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (x,), bw, "softmax")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for {ndim}D tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension with learnable scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm params must have shape ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)  # biased
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gb = g.reshape(-1, d).sum(axis=0)
        gg = (g * xhat).reshape(-1, d).sum(axis=0)
        dxh = g * gamma.data
        dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
        return dx.astype(x.data.dtype), gg.astype(gamma.data.dtype), gb.astype(beta.data.dtype)

    return _record(out.astype(x.data.dtype), (x, gamma, beta), bw, "layer_norm")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channelwise batch norm over [n,c,h,w].

    Train mode normalizes with biased batch statistics and updates the running
    buffers in place (unbiased variance, as is conventional); eval mode uses
    the running buffers and treats them as constants.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm needs [n,c,h,w], got {x.shape}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm {name} shape {t.shape} != ({c},)")
    axes = (0, 2, 3)
    shape4 = (1, c, 1, 1)
    g4 = gamma.data.reshape(shape4)
    if train:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ContractError(f"batch_norm: degenerate batch of {count} value(s) per channel")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = xhat * g4 + beta.data.reshape(shape4)
        unbiased = var.reshape(c) * (count / (count - 1))
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mu.reshape(c)
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * unbiased

        def bw(g):
            gb = g.sum(axis=axes)
            gg = (g * xhat).sum(axis=axes)
            dxh = g * g4
            dx = inv * (
                dxh
                - dxh.mean(axis=axes, keepdims=True)
                - xhat * (dxh * xhat).mean(axis=axes, keepdims=True)
            )
            return dx.astype(x.data.dtype), gg.astype(gamma.data.dtype), gb.astype(beta.data.dtype), None, None

    else:
        inv = 1.0 / np.sqrt(running_var.data.reshape(shape4) + eps)
        xhat = (x.data - running_mean.data.reshape(shape4)) * inv
        out = xhat * g4 + beta.data.reshape(shape4)

        def bw(g):
            gb = g.sum(axis=axes)
            gg = (g * xhat).sum(axis=axes)
            dx = g * g4 * inv
            return dx.astype(x.data.dtype), gg.astype(gamma.data.dtype), gb.astype(beta.data.dtype), None, None

    return _record(out.astype(x.data.dtype), (x, gamma, beta, running_mean, running_var), bw, "batch_norm")


# ---------------------------------------------------------------------------
# data movement


def roll(x: Tensor, shift_h: int, shift_w: int) -> Tensor:
    """Cyclic shift along the two spatial axes of an [n,h,w,c] tensor."""
    if x.ndim != 4:
        raise ShapeError(f"roll needs [n,h,w,c], got {x.shape}")
    out = np.roll(x.data, (shift_h, shift_w), axis=(1, 2))

    def bw(g):
        return (np.roll(g, (-shift_h, -shift_w), axis=(1, 2)),)

    return _record(out, (x,), bw, "roll")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc
    out = np.ascontiguousarray(out)

    def bw(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), bw, "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} are not a permutation of 0..{x.ndim - 1}")
    out = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _record(out, (x,), bw, "permute")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    ax = _norm_axis(axis, tensors[0].ndim, "concat")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=ax))

    return _record(out, tuple(tensors), bw, "concat")


def split(x: Tensor, sizes, axis: int = 0) -> list:
    """Slice x into consecutive pieces along one axis (inverse of concat)."""
    ax = _norm_axis(axis, x.ndim, "split")
    sizes = list(sizes)
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {sizes} do not sum to dimension {x.shape[ax]}")
    outs = []
    start = 0
    for size in sizes:
        outs.append(_slice_axis(x, ax, start, size))
        start += size
    return outs


def _slice_axis(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    idx = (slice(None),) * axis + (slice(start, start + size),)
    out = np.ascontiguousarray(x.data[idx])

    def bw(g):
        z = np.zeros(x.shape, dtype=g.dtype)
        z[idx] = g
        return (z,)

    return _record(out, (x,), bw, "slice")


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of a 2D table by an integer index array.

    The gradient scatters back additively, so rows referenced several times
    accumulate all their contributions.
    """
    if table.ndim != 2:
        raise ShapeError(f"take needs a 2D table, got {table.shape}")
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"take index out of range [0, {table.shape[0]})")
    out = np.ascontiguousarray(table.data[index])

    def bw(g):
        z = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(z, index, g)
        return (z,)

    return _record(out, (table,), bw, "take")


# ---------------------------------------------------------------------------
# reductions


def _reduce(x: Tensor, axes, keepdims: bool, kind: str) -> Tensor:
    if axes is None:
        ax = tuple(range(x.ndim))
    elif isinstance(axes, int):
        ax = (_norm_axis(axes, x.ndim, kind),)
    else:
        ax = tuple(_norm_axis(a, x.ndim, kind) for a in axes)
        if len(set(ax)) != len(ax):
            raise ShapeError(f"{kind}: repeated axes {axes}")
    count = 1
    for a in ax:
        count *= x.shape[a]
    src = np.abs(x.data) if kind == "abs_mean" else x.data
    out = src.sum(axis=ax, keepdims=keepdims) if ax else src.copy()
    if kind != "sum" and count > 0:
        out = out / count

    def expand(g):
        if not keepdims and ax:
            shape = list(x.shape)
            for a in ax:
                shape[a] = 1
            g = g.reshape(shape)
        return np.broadcast_to(g, x.shape)

    if kind == "sum":

        def bw(g):
            return (np.ascontiguousarray(expand(g)),)

    elif kind == "mean":

        def bw(g):
            return (np.ascontiguousarray(expand(g)) / count,)

    else:  # abs_mean: subgradient sign(x)/count, zero at zero

        def bw(g):
            return (expand(g) * np.sign(x.data) / count,)

    return _record(np.asarray(out, dtype=x.data.dtype), (x,), bw, kind)
