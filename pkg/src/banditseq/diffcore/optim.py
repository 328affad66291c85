"""Adam with bias correction, acting on a ParamStore."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .params import ParamStore


class Adam:
    """Standard Adam. `alpha` is mutable so schedules can decay it."""

    def __init__(self, store: ParamStore, alpha: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(store[n]) for n in store.names()}
        self._v = {n: np.zeros_like(store[n]) for n in store.names()}

    def step(self, grad_scale: float = 1.0, clip_norm: float | None = None) -> None:
        """One update from the accumulated gradients, which are then zeroed.

        `grad_scale` is applied to the raw accumulators first (pass 1/batch
        to average a summed mini-batch). `clip_norm` rescales by global
        L2 norm when set.
        """
        store = self.store
        if clip_norm is not None:
            sq = 0.0
            for name in store.names():
                g = store.grad(name)
                sq += float(np.dot(g.ravel(), g.ravel()))
            norm = grad_scale * np.sqrt(sq)
            if norm > clip_norm:
                grad_scale *= clip_norm / norm
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in store.names():
            g = store.grad(name) * grad_scale
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for '{name}' at step {self.t}")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p = store[name]
            p -= self.alpha * (m / c1) / (np.sqrt(v / c2) + self.eps)
        store.zero_grads()
