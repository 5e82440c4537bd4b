"""Minimal first-order optimizer used by the training loops."""

from __future__ import annotations

import numpy as np


class Adam:
    """Per-parameter adaptive step sizes (momentum plus RMS scaling)."""

    def __init__(self, n_params: int, step_size: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = float(step_size)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = np.zeros(n_params)
        self._v = np.zeros(n_params)
        self._t = 0

    def step(self, params: np.ndarray, grad: np.ndarray,
             step_size=None) -> np.ndarray:
        # step_size may be a scalar or a per-parameter array
        lr = self.step_size if step_size is None else step_size
        self._t += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        mhat = self._m / (1.0 - self.beta1 ** self._t)
        vhat = self._v / (1.0 - self.beta2 ** self._t)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)
