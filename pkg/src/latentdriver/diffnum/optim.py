"""Adam and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """Cosine decay from ``lr0`` at step 0 to 0 at ``total``; clamps past the end."""
    if total <= 0:
        raise ValueError("total must be positive")
    if step >= total:
        return 0.0
    step = max(step, 0)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total))


@dataclass
class AdamState:
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, betas=betas, eps=eps)

    def step(self, lr: float | None = None) -> None:
        """One Adam update; gradients are left in place for the caller to zero."""
        s = self.state
        lr = s.lr if lr is None else lr
        s.step += 1
        b1, b2 = s.betas
        c1 = 1.0 - b1 ** s.step
        c2 = 1.0 - b2 ** s.step
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            m = s.m.get(i)
            if m is None:
                m = s.m[i] = np.zeros_like(p.data)
                s.v[i] = np.zeros_like(p.data)
            v = s.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + s.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
