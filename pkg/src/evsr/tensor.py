"""A small dense-tensor autodiff engine on numpy.

Exactly the differentiable operations the super-resolution network needs:
elementwise arithmetic, activations, 2-D convolution with same padding,
batch norm, pooling, matrix product, channel concat, reshape/transpose and
the pixel-shuffle pair. Reverse-mode gradients are built micrograd-style:
each op closes over its inputs in a ``_backward`` function and records its
parents; ``backward()`` walks the recorded graph once in reverse
topological order, accumulating into ``.grad`` additively across fan-out.

Precision is whatever dtype the leaf tensors carry: float32 for training,
float64 for gradient checking. Ops never change dtype on their own.

Model tensors are [C, H, W] with an implicit batch of one; batching is a
loop over sequences at the training level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        self.prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self.prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _op="leaf"):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GradMode.enabled
        self._parents = tuple(_parents) if self.requires_grad or _parents else ()
        self._backward = None
        self._op = _op

    # -- basics ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, delta) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    # -- graph ----------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every requires-grad ancestor of this scalar."""
        if self.data.size != 1:
            raise ConfigError(
                f"backward() needs a scalar loss, got shape {self.data.shape}")
        order = build_graph(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)


def _as_tensor(v, dtype) -> Tensor:
    if isinstance(v, Tensor):
        return v
    return Tensor(np.full((), v, dtype=dtype))


def build_graph(root: Tensor) -> list:
    """Topological order of the DAG reachable from root (leaves first).

    Iterative so deep T-step recurrent graphs cannot hit the recursion
    limit. Each node appears exactly once even with shared subexpressions.
    """
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, parents, op, backward) -> Tensor:
    """Wrap an op result; record the backward closure only when needed."""
    req = _GradMode.enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req,
                 _parents=parents if req else (), _op=op)
    if req:
        out._backward = backward(out)
    return out


# -- elementwise ----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ConfigError(f"add shape mismatch {a.shape} vs {b.shape}")
    data = a.data + b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accum(out.grad if a.shape == out.shape else out.grad.sum())
            if b.requires_grad:
                b._accum(out.grad if b.shape == out.shape else out.grad.sum())
        return run

    return _make(data, (a, b), "add", bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ConfigError(f"mul shape mismatch {a.shape} vs {b.shape}")
    data = a.data * b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accum(out.grad * b.data)
            if b.requires_grad:
                b._accum(out.grad * a.data)
        return run

    return _make(data, (a, b), "mul", bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def bw(out):
        def run():
            a._accum(out.grad * s)
        return run

    return _make(data, (a,), "scale", bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bw(out):
        mask = a.data > 0

        def run():
            a._accum(out.grad * mask)
        return run

    return _make(data, (a,), "relu", bw)


def sigmoid(a: Tensor) -> Tensor:
    # numerically stable two-sided form
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(a.dtype, copy=False)

    def bw(out):
        def run():
            a._accum(out.grad * out.data * (1.0 - out.data))
        return run

    return _make(data, (a,), "sigmoid", bw)


def softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        def run():
            s = out.data
            inner = (out.grad * s).sum(axis=axis, keepdims=True)
            a._accum(s * (out.grad - inner))
        return run

    return _make(data, (a,), "softmax", bw)


# -- reductions -----------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()

    def bw(out):
        def run():
            a._accum(np.broadcast_to(out.grad, a.shape).copy()
                     if out.grad.shape != a.shape else out.grad)
        return run

    return _make(data, (a,), "sum", bw)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if a.shape != b.shape:
        raise ConfigError(f"mse shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return mean_all(mul(d, d))


# -- shape manipulation -----------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def bw(out):
        def run():
            a._accum(out.grad.reshape(a.shape))
        return run

    return _make(data, (a,), "reshape", bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ConfigError(f"transpose expects a matrix, got shape {a.shape}")
    data = a.data.T

    def bw(out):
        def run():
            a._accum(out.grad.T)
        return run

    return _make(data, (a,), "transpose", bw)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate [C_i, H, W] maps along the channel axis."""
    if len(tensors) < 2:
        raise ConfigError("concat_channels needs at least two tensors")
    hw = tensors[0].shape[1:]
    for t in tensors:
        if t.data.ndim != 3 or t.shape[1:] != hw:
            raise ConfigError(
                f"concat_channels spatial mismatch: {[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def bw(out):
        def run():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accum(out.grad[lo:hi])
        return run

    return _make(data, tensors, "concat", bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul shape mismatch {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accum(out.grad @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ out.grad)
        return run

    return _make(data, (a, b), "matmul", bw)


def pixel_shuffle(a: Tensor, r: int) -> Tensor:
    """[C*r*r, H, W] -> [C, r*H, r*W] with
    out[c, r*h+i, r*w+j] = in[c*r*r + i*r + j, h, w]."""
    r = int(r)
    cr2, h, w = a.shape
    if r < 1 or cr2 % (r * r) != 0:
        raise ConfigError(f"pixel_shuffle: {cr2} channels not divisible by r*r={r * r}")
    c = cr2 // (r * r)
    data = (a.data.reshape(c, r, r, h, w)
            .transpose(0, 3, 1, 4, 2)
            .reshape(c, h * r, w * r))

    def bw(out):
        def run():
            g = (out.grad.reshape(c, h, r, w, r)
                 .transpose(0, 2, 4, 1, 3)
                 .reshape(cr2, h, w))
            a._accum(g)
        return run

    return _make(data, (a,), "pixel_shuffle", bw)


def space_to_depth(a: Tensor, r: int) -> Tensor:
    """Exact inverse of pixel_shuffle: [C, r*H, r*W] -> [C*r*r, H, W]."""
    r = int(r)
    c, rh, rw = a.shape
    if r < 1 or rh % r != 0 or rw % r != 0:
        raise ConfigError(f"space_to_depth: spatial {rh}x{rw} not divisible by r={r}")
    h, w = rh // r, rw // r
    data = (a.data.reshape(c, h, r, w, r)
            .transpose(0, 2, 4, 1, 3)
            .reshape(c * r * r, h, w))

    def bw(out):
        def run():
            g = (out.grad.reshape(c, r, r, h, w)
                 .transpose(0, 3, 1, 4, 2)
                 .reshape(c, rh, rw))
            a._accum(g)
        return run

    return _make(data, (a,), "space_to_depth", bw)


# -- spatial ops ------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation, stride 1, zero same-padding, kernel 1x1 or 3x3.

    x: [C_in, H, W]; weight: [C_out, C_in, k, k]; bias: [C_out] or None.
    """
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ConfigError(
            f"conv2d expects x[C,H,W], w[O,C,k,k]; got {x.shape}, {weight.shape}")
    c_out, c_in, k, k2 = weight.shape
    if k != k2 or k not in (1, 3):
        raise ConfigError(f"conv2d kernel must be square 1x1 or 3x3, got {k}x{k2}")
    if x.shape[0] != c_in:
        raise ConfigError(
            f"conv2d channel mismatch: input has {x.shape[0]}, weight wants {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ConfigError(f"conv2d bias shape {bias.shape}, expected ({c_out},)")
    _, h, w = x.shape
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    out = np.zeros((c_out, h, w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            out += np.tensordot(weight.data[:, :, di, dj],
                                xp[:, di:di + h, dj:dj + w], axes=([1], [0]))
    if bias is not None:
        out += bias.data[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(outt):
        def run():
            gy = outt.grad
            if bias is not None and bias.requires_grad:
                bias._accum(gy.sum(axis=(1, 2)))
            if weight.requires_grad:
                gw = np.zeros_like(weight.data)
                for di in range(k):
                    for dj in range(k):
                        gw[:, :, di, dj] = np.tensordot(
                            gy, xp[:, di:di + h, dj:dj + w], axes=([1, 2], [1, 2]))
                weight._accum(gw)
            if x.requires_grad:
                gxp = np.zeros((c_in, h + 2 * p, w + 2 * p), dtype=x.dtype)
                for di in range(k):
                    for dj in range(k):
                        gxp[:, di:di + h, dj:dj + w] += np.tensordot(
                            weight.data[:, :, di, dj], gy, axes=([0], [0]))
                x._accum(gxp[:, p:p + h, p:p + w] if p else gxp)
        return run

    return _make(out, parents, "conv2d", bw)


@dataclass
class BNState:
    """Running statistics for one batch-norm layer (not learnable)."""

    running_mean: np.ndarray
    running_var: np.ndarray

    @staticmethod
    def create(channels: int, dtype=np.float32) -> "BNState":
        return BNState(np.zeros(channels, dtype=dtype),
                       np.ones(channels, dtype=dtype))

    def copy(self) -> "BNState":
        return BNState(self.running_mean.copy(), self.running_var.copy())


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
                training: bool = True, eps: float = 1e-5,
                momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over the spatial extent.

    Train mode uses batch statistics (biased variance) and updates the
    running buffers in place; eval mode normalizes by the running buffers.
    """
    if x.data.ndim != 3:
        raise ConfigError(f"batchnorm2d expects [C,H,W], got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigError(
            f"batchnorm2d gamma/beta must be [{c}], got {gamma.shape}/{beta.shape}")
    n = x.shape[1] * x.shape[2]
    if training:
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        state.running_mean += momentum * (mu - state.running_mean)
        state.running_var += momentum * (var - state.running_var)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * ivstd[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bw(outt):
        def run():
            gy = outt.grad
            if beta.requires_grad:
                beta._accum(gy.sum(axis=(1, 2)))
            if gamma.requires_grad:
                gamma._accum((gy * xhat).sum(axis=(1, 2)))
            if x.requires_grad:
                gxhat = gy * gamma.data[:, None, None]
                if training:
                    # batch stats depend on x, so the mean/var paths count
                    xm = x.data - mu[:, None, None]
                    gvar = (gxhat * xm).sum(axis=(1, 2)) * (-0.5) * ivstd ** 3
                    gmu = (-gxhat.sum(axis=(1, 2)) * ivstd
                           + gvar * (-2.0 / n) * xm.sum(axis=(1, 2)))
                    gx = (gxhat * ivstd[:, None, None]
                          + gvar[:, None, None] * 2.0 * xm / n
                          + gmu[:, None, None] / n)
                else:
                    gx = gxhat * ivstd[:, None, None]
                x._accum(gx.astype(x.dtype, copy=False))
        return run

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), "batchnorm", bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """[C, H, W] -> [C, 1, 1] per-channel mean."""
    if x.data.ndim != 3:
        raise ConfigError(f"global_avg_pool expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    data = x.data.mean(axis=(1, 2)).reshape(c, 1, 1)

    def bw(out):
        def run():
            x._accum(np.broadcast_to(out.grad / (h * w), x.shape).astype(x.dtype))
        return run

    return _make(data, (x,), "gap", bw)


def broadcast_add(a: Tensor, b: Tensor) -> Tensor:
    """[C, 1, 1] + [C, H, W] with the first argument tiled spatially."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] \
            or a.shape[1:] != (1, 1):
        raise ConfigError(f"broadcast_add expects [C,1,1] + [C,H,W], "
                          f"got {a.shape} + {b.shape}")
    data = a.data + b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accum(out.grad.sum(axis=(1, 2), keepdims=True))
            if b.requires_grad:
                b._accum(out.grad)
        return run

    return _make(data, (a, b), "broadcast_add", bw)


# -- initialization and checking ------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                    dtype=np.float32) -> np.ndarray:
    """He-style uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def grad_check(f, inputs, h: float | None = None, sample: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps the input tensors to a scalar Tensor. inputs is one Tensor or a
    list; all should be float64 with requires_grad set. The step defaults
    to 1e-5 * (1 + |x|) per element. With ``sample`` set, at most that many
    elements per tensor are probed (seeded through ``rng``).

    Relative error per element: |a - n| / max(|a|, |n|, 1e-8).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        t.zero_grad()
    loss = f(*inputs)
    loss.backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
             for t in inputs]

    worst = 0.0
    for t, g in zip(inputs, grads):
        flat = t.data.reshape(-1)
        idxs = range(flat.size)
        if sample is not None and flat.size > sample:
            r = rng if rng is not None else np.random.default_rng(0)
            idxs = r.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            step = h if h is not None else 1e-5 * (1.0 + abs(orig))
            with no_grad():
                flat[i] = orig + step
                hi = f(*inputs).item()
                flat[i] = orig - step
                lo = f(*inputs).item()
                flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            analytic = g.reshape(-1)[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
