"""AMSGrad optimizer with inverse-time learning-rate decay and L2 weight decay."""

from __future__ import annotations

import warnings

import numpy as np


class AMSGrad:
    """AMSGrad update (no bias correction, running elementwise max of v).

    Per step t (1-based), with gradient g (plus ``weight_decay * value`` for
    decay-enabled parameters):

        m      = beta1 * m + (1 - beta1) * g
        v      = beta2 * v + (1 - beta2) * g^2
        v_max  = max(v_max, v)
        lr_t   = lr0 / (1 + decay * t)
        value -= lr_t * m / (sqrt(v_max) + eps)
    """

    def __init__(self, params, lr=1e-3, decay=1e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=1e-4):
        # params: dict name -> Parameter (as produced by Module.parameters()).
        self.params = dict(params)
        self.lr0 = lr
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._vmax = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    @property
    def lr_t(self):
        """Effective learning rate of the most recent step."""
        return self.lr0 / (1.0 + self.decay * max(self.t, 1))

    def step(self):
        if all(p.grad is None for p in self.params.values()):
            warnings.warn("optimizer step before backward: no gradients, skipping")
            return
        self.t += 1
        lr = self.lr0 / (1.0 + self.decay * self.t)
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and p.weight_decay_enabled:
                g = g + self.weight_decay * p.data
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(self._vmax[name], v, out=self._vmax[name])
            p.data = p.data - lr * m / (np.sqrt(self._vmax[name]) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        """Flatten optimizer state into name -> array for checkpointing."""
        out = {"t": np.array([self.t], dtype=np.int64),
               "lr0": np.array([self.lr0]),
               "decay": np.array([self.decay])}
        for name in self.params:
            out[f"{name}.m"] = self._m[name]
            out[f"{name}.v"] = self._v[name]
            out[f"{name}.vmax"] = self._vmax[name]
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        self.lr0 = float(arrays["lr0"][0])
        self.decay = float(arrays["decay"][0])
        for name in self.params:
            self._m[name] = arrays[f"{name}.m"].copy()
            self._v[name] = arrays[f"{name}.v"].copy()
            self._vmax[name] = arrays[f"{name}.vmax"].copy()
