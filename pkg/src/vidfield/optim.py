"""Parameter blocks, the AdamW update, and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import precision

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ParamBlock:
    """One trainable tensor together with its gradient and Adam state."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(repr=False, default=None)
    adam_m: np.ndarray = field(repr=False, default=None)
    adam_v: np.ndarray = field(repr=False, default=None)
    step_count: int = 0

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)
        shapes = {self.value.shape, self.grad.shape, self.adam_m.shape, self.adam_v.shape}
        if len(shapes) != 1:
            raise ValueError(f"param {self.name!r}: value/grad/adam state shapes differ")

    @classmethod
    def zeros(cls, name: str, shape) -> "ParamBlock":
        return cls(name, precision.zeros(shape))

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0


def adamw_step(
    p: ParamBlock,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> ParamBlock:
    """One AdamW update with decoupled weight decay, in place.

    m and v are bias-corrected; the decay term lr * wd * value is applied
    directly to the parameter, never through the moments. The caller is
    responsible for zeroing p.grad afterwards.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient in parameter block {p.name!r}")
    p.step_count += 1
    t = p.step_count
    p.adam_m *= beta1
    p.adam_m += (1 - beta1) * g
    p.adam_v *= beta2
    p.adam_v += (1 - beta2) * np.square(g)
    m_hat = p.adam_m / (1 - beta1**t)
    v_hat = p.adam_v / (1 - beta2**t)
    p.value -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.value)
    return p


def cosine_lr(t: int, total: int, eta: float, eta_min: float) -> float:
    """Cosine-annealed rate: eta_min + (eta - eta_min) * (1 + cos(pi * t / total)) / 2."""
    if not 0 <= t <= total:
        raise ValueError(f"iteration {t} outside [0, {total}]")
    if eta < eta_min:
        raise ValueError(f"eta {eta} below eta_min {eta_min}")
    return eta_min + 0.5 * (eta - eta_min) * (1.0 + math.cos(math.pi * t / total))
