"""SGD with classic momentum and L2 weight decay, plus the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Parameters
from .tensor import ConfigError


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.0025
    momentum: float = 0.9
    weight_decay: float = 1e-5
    milestones: tuple[int, ...] = (10, 15, 20)
    decay: float = 10.0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.decay <= 0:
            raise ConfigError("weight decay must be >= 0 and decay factor > 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")


def lr_at(epoch: int, cfg: OptimConfig) -> float:
    """Base rate divided by ``cfg.decay`` once per milestone already reached."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    passed = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.lr / cfg.decay**passed


def sgd_step(params: Parameters, cfg: OptimConfig, lr: float | None = None) -> None:
    """In-place update: ``v = mu*v + g + wd*p; p -= lr*v`` for every tensor.

    With ``cfg.clip_norm`` the raw gradients are first rescaled so their
    global 2-norm does not exceed it.
    """
    lr = cfg.lr if lr is None else lr
    missing = [n for n, t in params.items() if t.grad is None]
    if missing:
        raise ValueError(f"no gradient for parameter {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    factor = 1.0
    if cfg.clip_norm is not None:
        norm = float(np.sqrt(sum(float(np.vdot(t.grad, t.grad)) for t in params.tensors.values())))
        if norm > cfg.clip_norm:
            factor = cfg.clip_norm / norm
    for name, t in params.items():
        g = t.grad if factor == 1.0 else t.grad * t.grad.dtype.type(factor)
        if cfg.weight_decay:
            g = g + t.data.dtype.type(cfg.weight_decay) * t.data
        v = params.momentum.get(name)
        if v is None:
            v = np.zeros_like(t.data)
        v = t.data.dtype.type(cfg.momentum) * v + g
        params.momentum[name] = v
        t.data = t.data - t.data.dtype.type(lr) * v
