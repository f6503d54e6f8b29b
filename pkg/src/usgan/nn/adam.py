"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr=0.0002, beta1=0.5, beta2=0.999, eps=1e-8):
        if lr <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1):
            raise ValueError("invalid Adam hyperparameters")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One in-place update of every parameter from its gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p, dtype=np.float64))
            v = self.v.setdefault(name, np.zeros_like(p, dtype=np.float64))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g.astype(np.float64) ** 2)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= update.astype(p.dtype)
