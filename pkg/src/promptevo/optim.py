"""Adam moment updates shared by the regressor trainer and prompt evolution."""
from __future__ import annotations

import numpy as np


def adam_direction(m, v, g, t: int, beta1: float, beta2: float, eps: float):
    """Return the new moments and the bias-corrected direction ``m_hat / (sqrt(v_hat) + eps)``."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return m, v, m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Minimizing Adam over a list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i], self.v[i], d = adam_direction(self.m[i], self.v[i], g, self.t, self.beta1, self.beta2, self.eps)
            p -= self.lr * d
