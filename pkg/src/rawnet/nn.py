"""Layer abstractions on top of the autodiff engine.

Modules own named parameters and buffers; ``parameters()`` walks the module
tree and yields a flat ``path -> Parameter`` mapping whose paths double as
checkpoint keys (e.g. ``blocks/2/conv1/weight``).
"""

from __future__ import annotations

import warnings

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter:
    """A gradient-enabled tensor with a checkpoint name and decay flag."""

    def __init__(self, data, weight_decay=True, dtype=None):
        self.tensor = Tensor(data, requires_grad=True, dtype=dtype)
        self.name = None  # assigned on the first parameters() walk
        self.weight_decay_enabled = weight_decay

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.tensor.shape})"


# -- initializers ------------------------------------------------------------


def he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng, shape, dtype):
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # make the decomposition unique
    return q[: shape[0], : shape[1]].astype(dtype)


class Module:
    """Base class with explicit child/parameter/buffer registries."""

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}
        self.training = True

    def register_param(self, name, param):
        self._params[name] = param
        return param

    def register_buffer(self, name, array):
        self._buffers[name] = array
        return array

    def register_child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self, prefix=""):
        out = {}
        for name, p in self._params.items():
            path = f"{prefix}{name}"
            p.name = path
            out[path] = p
        for name, child in self._children.items():
            out.update(child.parameters(prefix=f"{prefix}{name}/"))
        return out

    def buffers(self, prefix=""):
        out = {f"{prefix}{name}": arr for name, arr in self._buffers.items()}
        for name, child in self._children.items():
            out.update(child.buffers(prefix=f"{prefix}{name}/"))
        return out

    def set_buffer(self, path, value):
        head, _, rest = path.partition("/")
        if rest:
            self._children[head].set_buffer(rest, value)
        else:
            if head not in self._buffers:
                raise KeyError(f"unknown buffer {path!r}")
            self._buffers[head][...] = value

    def train(self):
        self.training = True
        for c in self._children.values():
            c.train()
        return self

    def eval(self):
        self.training = False
        for c in self._children.values():
            c.eval()
        return self

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    """1-d convolution over (N, T, C_in) with 'same' or 'valid' padding."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding="same",
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        fan_in = kernel * in_channels
        self.weight = self.register_param(
            "weight", Parameter(he_uniform(rng, (kernel, in_channels, out_channels), fan_in, dtype)))
        self.bias = self.register_param(
            "bias", Parameter(np.zeros(out_channels, dtype=dtype), weight_decay=False))

    def forward(self, x):
        return T.conv1d(x, self.weight.tensor, self.bias.tensor,
                        stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    """Per-channel batch normalization over all leading axes of (..., C)."""

    def __init__(self, channels, eps=1e-5, momentum=0.99, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.register_param(
            "gamma", Parameter(np.ones(channels, dtype=dtype), weight_decay=False))
        self.beta = self.register_param(
            "beta", Parameter(np.zeros(channels, dtype=dtype), weight_decay=False))
        self.running_mean = self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.num_batches = self.register_buffer("num_batches", np.zeros(1, dtype=np.int64))

    def forward(self, x):
        axes = tuple(range(x.ndim - 1))
        if self.training:
            m = int(np.prod(x.data.shape[:-1]))
            if m < 2:
                raise ValueError(f"batchnorm train mode needs >= 2 samples per channel, got {m}")
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            out = T.batchnorm(x, self.gamma.tensor, self.beta.tensor, mean, var, eps=self.eps)
            mom = self.momentum
            self.running_mean[...] = mom * self.running_mean + (1 - mom) * mean
            self.running_var[...] = mom * self.running_var + (1 - mom) * var
            self.num_batches += 1
            return out
        if int(self.num_batches[0]) == 0:
            warnings.warn("batchnorm eval before any train step: using (mean 0, var 1)")
        return T.batchnorm(x, self.gamma.tensor, self.beta.tensor,
                           self.running_mean, self.running_var,
                           eps=self.eps, frozen_stats=True)


class Linear(Module):
    """Affine map; weight is stored (D_in, D_out) so columns are class bases."""

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = self.register_param(
            "weight", Parameter(he_uniform(rng, (in_dim, out_dim), in_dim, dtype)))
        self.bias = self.register_param(
            "bias", Parameter(np.zeros(out_dim, dtype=dtype), weight_decay=False))

    def forward(self, x):
        if x.ndim != 2:
            raise ValueError(f"linear expects (N, D_in), got shape {x.shape}")
        if x.shape[1] != self.weight.data.shape[0]:
            raise ValueError(
                f"linear dim mismatch: input {x.shape[1]} vs weight {self.weight.data.shape[0]}")
        return T.matmul(x, self.weight.tensor) + self.bias.tensor


class GRU(Module):
    """Single-direction GRU returning the final hidden state.

    Recurrence (per time step t, update gate z, reset gate r):

        z_t = sigmoid(x_t Wz + h~ Uz + bz)
        r_t = sigmoid(x_t Wr + h~ Ur + br)
        c_t = tanh(x_t Wh + (r_t * h~) Uh + bh)
        h_t = (1 - z_t) * h_{t-1} + z_t * c_t

    where h~ is h_{t-1} with one recurrent dropout mask, sampled once per
    sequence and reused at every step (train mode only, inverted scaling).
    """

    def __init__(self, in_dim, hidden, recurrent_dropout=0.0, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        self.recurrent_dropout = recurrent_dropout
        self._dtype = dtype
        for gate in ("z", "r", "h"):
            self.register_param(f"w{gate}", Parameter(he_uniform(rng, (in_dim, hidden), in_dim, dtype)))
            self.register_param(f"u{gate}", Parameter(orthogonal(rng, (hidden, hidden), dtype)))
            self.register_param(f"b{gate}", Parameter(np.zeros(hidden, dtype=dtype), weight_decay=False))

    def forward(self, x, rng=None):
        """Aggregate (N, T, C) into (N, hidden) via the final time step."""
        if x.ndim != 3:
            raise ValueError(f"GRU expects (N, T, C), got shape {x.shape}")
        N, steps, _ = x.shape
        if steps == 0:
            raise ValueError("GRU input has zero time steps, nothing to aggregate")
        p = self._params
        wz, wr, wh = p["wz"].tensor, p["wr"].tensor, p["wh"].tensor
        uz, ur, uh = p["uz"].tensor, p["ur"].tensor, p["uh"].tensor
        bz, br, bh = p["bz"].tensor, p["br"].tensor, p["bh"].tensor

        mask = None
        if self.training and self.recurrent_dropout > 0.0:
            if rng is None:
                raise ValueError("train-mode GRU with recurrent dropout needs an rng")
            keep = 1.0 - self.recurrent_dropout
            mask = Tensor((rng.random((N, self.hidden)) < keep).astype(self._dtype) / keep)

        h = Tensor(np.zeros((N, self.hidden), dtype=x.dtype))
        for t in range(steps):
            xt = x[:, t, :]
            hd = h * mask if mask is not None else h
            z = T.sigmoid(T.matmul(xt, wz) + T.matmul(hd, uz) + bz)
            r = T.sigmoid(T.matmul(xt, wr) + T.matmul(hd, ur) + br)
            c = T.tanh(T.matmul(xt, wh) + T.matmul(r * hd, uh) + bh)
            h = (1.0 - z) * h + z * c
        return h
