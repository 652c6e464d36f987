"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def lr_at(step: float, config, steps_per_epoch: int = 1) -> float:
    """Linear warmup from warmup_lr to base_lr, then half-cosine decay to 0.

    ``step`` counts optimizer updates from 0; the schedule ends at
    ``total_epochs * steps_per_epoch``.
    """
    total = config.total_epochs * steps_per_epoch
    warm = config.warmup_epochs * steps_per_epoch
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside schedule [0, {total}]")
    if step < warm:
        return config.warmup_lr + (config.base_lr - config.warmup_lr) * step / warm
    if total == warm:
        return config.base_lr
    progress = (step - warm) / (total - warm)
    return 0.5 * config.base_lr * (1.0 + math.cos(math.pi * progress))


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.95),
    weight_decay: float = 0.05,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One AdamW update; returns new parameter arrays and the advanced state."""
    b1, b2 = betas
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} for parameter {name!r} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        m = m.astype(p.dtype, copy=False)
        v = v.astype(p.dtype, copy=False)
        decayed = p * (1 - lr * weight_decay)
        step = (m / c1) / (np.sqrt(v / c2) + eps)
        new_params[name] = (decayed - lr * step).astype(p.dtype, copy=False)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)
