"""Adagrad and AdamW parameter updates."""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def _grads(self):
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient in optimizer step")
            yield p, g

    def step(self):
        raise NotImplementedError


class Adagrad(Optimizer):
    """Accumulated-squared-gradient scaling; weight decay enters the gradient."""

    def __init__(self, params, lr, weight_decay=0.0, eps=1e-10):
        super().__init__(params, lr, weight_decay)
        self.eps = eps
        self.accum = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        for (p, g), acc in zip(self._grads(), self.accum):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            acc += g**2
            p.data -= self.lr * g / (np.sqrt(acc) + self.eps)


class AdamW(Optimizer):
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr, weight_decay)
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        t = self.step_count
        for i, (p, g) in enumerate(self._grads()):
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g**2
            m_hat = self.m[i] / (1 - b1**t)
            v_hat = self.v[i] / (1 - b2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, params, lr: float, weight_decay: float) -> Optimizer:
    kind = kind.lower()
    if kind == "adagrad":
        return Adagrad(params, lr, weight_decay)
    if kind == "adamw":
        return AdamW(params, lr, weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
