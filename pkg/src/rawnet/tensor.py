"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Only the operations the raw-waveform verification graph needs are provided:
elementwise arithmetic, matmul, reductions, sigmoid/tanh/leaky-relu,
1-d convolution, non-overlapping max pooling, batch normalization and
softmax cross-entropy.  Everything is numpy-backed and CPU only.

Gradients are accumulated into ``Tensor.grad`` by :func:`backward`, which
walks the recorded graph once in reverse topological order.  Repeated
backward calls without clearing grads accumulate, mirroring the usual
reverse-mode convention.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "matmul",
    "concat",
    "conv1d",
    "maxpool1d",
    "batchnorm",
    "cross_entropy",
]

# When False, ops produce plain value tensors with no graph edges (eval paths).
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the context (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float64)


class Tensor:
    """An n-d float array participating in a reverse-mode graph.

    ``grad`` is lazily allocated by the backward pass and always has the
    same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        # During a backward traversal contributions are staged in a pass-local
        # dict and folded into .grad at the end, so repeated backward calls
        # accumulate without double-counting through intermediates.
        if _pass_grads is not None:
            entry = _pass_grads.get(id(self))
            if entry is None:
                _pass_grads[id(self)] = [self, np.array(g, copy=True)]
            else:
                entry[1] = entry[1] + g
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    """Assemble an op output, recording graph edges only when needed."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if requires:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def div(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), bwd)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / np.sqrt(a.data))

    return _make(out_data, (a,), bwd)


def maximum_const(a, c):
    """Elementwise max against a constant; gradient flows where a > c."""
    out_data = np.maximum(a.data, c)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > c))

    return _make(out_data, (a,), bwd)


# -- shape ops -------------------------------------------------------------


def reshape(a, shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(old_shape))

    return _make(out_data, (a,), bwd)


def transpose(a):
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    out_data = a.data.T

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.T)

    return _make(out_data, (a,), bwd)


def getitem(a, idx):
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate_grad(full)

    return _make(out_data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _make(out_data, tuple(tensors), bwd)


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- nonlinearities ----------------------------------------------------------


def sigmoid(a):
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def tanh(a):
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


def leaky_relu(a, slope=0.3):
    """x for x >= 0, slope * x otherwise."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    mask = a.data >= 0
    out_data = np.where(mask, a.data, slope * a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.where(mask, 1.0, slope))

    return _make(out_data, (a,), bwd)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """2-d @ 2-d matrix product with gradients for both sides."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d tensors, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _make(out_data, (a, b), bwd)


# -- 1-d convolution ---------------------------------------------------------


def conv1d(x, w, b=None, stride=1, padding="same"):
    """Cross-correlate ``x`` (N, T, C_in) with ``w`` (K, C_in, C_out).

    ``padding`` is "same" (stride must be 1, K odd, output length T) or
    "valid" (no padding; the strided front layer uses K == stride so the
    output length is exactly T / stride).
    """
    if x.ndim != 3:
        raise ValueError(f"conv1d input must be (N, T, C_in), got shape {x.shape}")
    K, c_in, c_out = w.shape
    if x.shape[2] != c_in:
        raise ValueError(
            f"conv1d channel mismatch: input has {x.shape[2]} channels, weight expects {c_in}"
        )
    N, T, _ = x.shape
    if padding == "same":
        if stride != 1:
            raise ValueError("'same' padding requires stride 1")
        if K % 2 == 0:
            raise ValueError("'same' padding requires odd filter length")
        pad = K // 2
        xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    elif padding == "valid":
        pad = 0
        xp = x.data
        if stride > 1 and T % stride != 0:
            raise ValueError(f"conv1d length {T} not divisible by stride {stride}")
        if (xp.shape[1] - K) % stride != 0:
            raise ValueError(
                f"conv1d valid length mismatch: (T={T}) - (K={K}) not divisible by stride {stride}"
            )
    else:
        raise ValueError(f"unknown padding {padding!r}")

    t_out = (xp.shape[1] - K) // stride + 1
    # (N, T', K, C_in) windows -> one big matmul
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)[:, ::stride]
    cols = win.transpose(0, 1, 3, 2).reshape(N * t_out, K * c_in)
    out = cols @ w.data.reshape(K * c_in, c_out)
    if b is not None:
        out = out + b.data
    out = out.reshape(N, t_out, c_out)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(N * t_out, c_out)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0))
        if w.requires_grad:
            w.accumulate_grad((cols.T @ g2).reshape(K, c_in, c_out))
        if x.requires_grad:
            gcols = (g2 @ w.data.reshape(K * c_in, c_out).T).reshape(N, t_out, K, c_in)
            gxp = np.zeros_like(xp)
            starts = np.arange(t_out) * stride
            for k in range(K):
                np.add.at(gxp, (slice(None), starts + k), gcols[:, :, k, :])
            if pad:
                gxp = gxp[:, pad:-pad]
            x.accumulate_grad(gxp)

    return _make(out, parents, bwd)


def maxpool1d(x, size):
    """Non-overlapping max over time windows; ties go to the first index."""
    if x.ndim != 3:
        raise ValueError(f"maxpool1d input must be (N, T, C), got shape {x.shape}")
    N, T, C = x.shape
    if T % size != 0:
        raise ValueError(f"maxpool1d length {T} not divisible by window {size}")
    t_out = T // size
    windows = x.data.reshape(N, t_out, size, C)
    arg = windows.argmax(axis=2)  # first max on ties
    out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def bwd(g):
        if x.requires_grad:
            gw = np.zeros_like(windows)
            np.put_along_axis(gw, arg[:, :, None, :], g[:, :, None, :], axis=2)
            x.accumulate_grad(gw.reshape(N, T, C))

    return _make(out, (x,), bwd)


# -- batch normalization -----------------------------------------------------


def batchnorm(x, gamma, beta, mean, var, eps=1e-5, frozen_stats=False):
    """Normalize ``x`` (..., C) per channel with affine (gamma, beta).

    With ``frozen_stats`` the supplied mean/var arrays are treated as
    constants (eval mode); otherwise they must be the batch statistics of
    ``x`` over all leading axes, and the backward pass accounts for their
    dependence on ``x``.
    """
    axes = tuple(range(x.ndim - 1))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data
    m = int(np.prod(x.data.shape[:-1]))

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            if frozen_stats:
                x.accumulate_grad(g * gamma.data * inv_std)
            else:
                gsum = g.sum(axis=axes) / m
                gx_sum = (g * xhat).sum(axis=axes) / m
                x.accumulate_grad(gamma.data * inv_std * (g - gsum - xhat * gx_sum))

    return _make(out, (x, gamma, beta), bwd)


# -- losses ------------------------------------------------------------------


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy of (N, M) logits at integer labels."""
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects (N, M) logits, got shape {logits.shape}")
    labels = np.asarray(labels)
    N, M = logits.shape
    if labels.shape != (N,):
        raise ValueError(f"labels must have shape ({N},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= M:
        raise ValueError(f"labels must lie in [0, {M}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(N), labels].mean()

    def bwd(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(N), labels] -= 1.0
            logits.accumulate_grad(g * grad / N)

    return _make(np.asarray(loss), (logits,), bwd)


# -- backward traversal --------------------------------------------------------


def _topo_order(root):
    """Iterative DFS post-order over the recorded graph."""
    order = []
    seen = set()
    stack = [(root, False)]
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


_pass_grads = None  # id(tensor) -> [tensor, grad], live only inside backward()


def backward(loss):
    """Populate ``grad`` on every gradient-enabled ancestor of ``loss``.

    ``loss`` must be a scalar.  Grads accumulate across calls until cleared.
    """
    global _pass_grads
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    _pass_grads = {id(loss): [loss, np.ones_like(loss.data)]}
    try:
        for node in reversed(order):
            entry = _pass_grads.get(id(node))
            if entry is None:
                continue
            if node._backward is not None:
                node._backward(entry[1])
    finally:
        staged, _pass_grads = _pass_grads, None
    for t, g in staged.values():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g
