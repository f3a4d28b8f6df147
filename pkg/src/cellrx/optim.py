"""Minimal optimizers over flat name -> array parameter dicts."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


class Sgd:
    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {learning_rate}")
        self.learning_rate = learning_rate

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            params[name] -= self.learning_rate * g


class Adam:
    """Standard Adam with bias correction; state keyed by parameter name."""

    def __init__(
        self,
        learning_rate: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, learning_rate: float, betas=(0.9, 0.999), eps=1e-8):
    if kind == "adam":
        return Adam(learning_rate, betas, eps)
    if kind == "sgd":
        return Sgd(learning_rate)
    raise ParameterError(f"optimizer must be 'adam' or 'sgd', got {kind!r}")
