"""Classification and depth-regression losses and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ConfigError, Tensor


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    local: float = 1.0
    global_: float = 0.01

    def __post_init__(self):
        if min(self.cls, self.local, self.global_) < 0:
            raise ConfigError(f"loss weights must be >= 0, got {self}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ConfigError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ConfigError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    picked = ops.mul(ops.log_softmax(logits, axis=1), Tensor(onehot))
    return ops.scale(ops.sum_all(picked), -1.0 / n)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.data.dtype))
    if pred.shape != target.shape:
        raise ConfigError(f"prediction shape {pred.shape} does not match target {target.shape}")
    diff = ops.sub(pred, target)
    return ops.mean(ops.mul(diff, diff))


def mse_local(pred: Tensor, target) -> Tensor:
    if pred.ndim != 4 or pred.shape[1] != 1:
        raise ConfigError(f"local mask must be (M, 1, S, S), got {pred.shape}")
    return mse(pred, target)


def mse_global(pred: Tensor, target) -> Tensor:
    if pred.ndim != 4 or pred.shape[1] != 1:
        raise ConfigError(f"global mask must be (M, 1, S/4, S/4), got {pred.shape}")
    return mse(pred, target)


def total_loss(l_cls, l_local, l_global, w: LossWeights):
    """``w.cls * l_cls + w.local * l_local + w.global_ * l_global``.

    Works on floats or tensors; zero-weighted tensor terms are dropped from the
    graph so no gradient reaches their branch.
    """
    if not isinstance(l_cls, Tensor):
        return w.cls * l_cls + w.local * l_local + w.global_ * l_global
    out = ops.scale(l_cls, w.cls)
    for weight, term in ((w.local, l_local), (w.global_, l_global)):
        if term is not None and weight != 0.0:
            out = ops.add(out, ops.scale(term, weight))
    return out
