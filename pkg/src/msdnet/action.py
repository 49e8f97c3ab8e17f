"""ACTION block: temporal shift followed by three excitation paths.

Every path produces a sigmoid map ``M`` and applies it residually as
``x + x * M``; the three results are summed. Tensors here are 5D
``(N, T, C, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import ops
from .tensor import ConfigError, Tensor

Params = Mapping[str, Tensor]


@dataclass(frozen=True)
class ActionConfig:
    channels: int
    segments: int
    reduce_ratio: int = 16
    shift_fraction: float = 1 / 8

    def __post_init__(self):
        if self.reduce_ratio < 1:
            raise ConfigError(f"reduce ratio must be >= 1, got {self.reduce_ratio}")
        if self.channels % self.reduce_ratio:
            raise ConfigError(f"channels {self.channels} not divisible by reduce ratio {self.reduce_ratio}")
        if self.shift_fraction < 0 or 2 * int(self.channels * self.shift_fraction) > self.channels:
            raise ConfigError(f"invalid shift fraction {self.shift_fraction} for {self.channels} channels")

    @property
    def reduced(self) -> int:
        return self.channels // self.reduce_ratio


@dataclass
class ExcitationOutputs:
    ste: Tensor  # (N, T, 1, H, W)
    ce: Tensor  # (N, T, C, 1, 1)
    me: Tensor  # (N, T, C, 1, 1)


def param_shapes(cfg: ActionConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of the learnable tensors of one block, in creation order."""
    c, cr = cfg.channels, cfg.reduced
    return {
        "ste.w": (1, 1, 3, 3, 3),
        "ste.b": (1,),
        "ce.squeeze.w": (cr, c, 1, 1),
        "ce.squeeze.b": (cr,),
        "ce.temporal.w": (cr, cr, 3),
        "ce.temporal.b": (cr,),
        "ce.expand.w": (c, cr, 1, 1),
        "ce.expand.b": (c,),
        "me.squeeze.w": (cr, c, 1, 1),
        "me.squeeze.b": (cr,),
        "me.k.w": (cr, cr, 3, 3),
        "me.expand.w": (c, cr, 1, 1),
        "me.expand.b": (c,),
    }


def init_params(cfg: ActionConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    out = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            out[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(3.0 / fan_in)
            out[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return out


def _flat(x: Tensor) -> Tensor:
    n, t = x.shape[:2]
    return ops.reshape(x, (n * t,) + x.shape[2:])


def _unflat(x: Tensor, n: int, t: int) -> Tensor:
    return ops.reshape(x, (n, t) + x.shape[1:])


def ste_forward(x: Tensor, p: Params) -> Tensor:
    """Spatio-temporal map (N, T, 1, H, W) from the channel-averaged feature."""
    n, t, _, h, w = x.shape
    pooled = ops.avg_pool_channel(x)  # (N, T, 1, H, W)
    vol = ops.reshape(pooled, (n, 1, t, h, w))  # singleton channel: a pure reshape
    y = ops.conv3d(vol, p["ste.w"], p["ste.b"])
    return ops.sigmoid(ops.reshape(y, (n, t, 1, h, w)))


def ce_forward(x: Tensor, p: Params) -> Tensor:
    """Channel map (N, T, C, 1, 1) with a temporal convolution in the bottleneck."""
    n, t, c = x.shape[:3]
    cr = p["ce.squeeze.w"].shape[0]
    if c % cr or p["ce.squeeze.w"].shape[1] != c:
        raise ConfigError(f"channel excitation weights do not match {c} channels")
    pooled = ops.avg_pool_spatial(_flat(x))  # (NT, C, 1, 1)
    squeezed = ops.conv2d(pooled, p["ce.squeeze.w"], p["ce.squeeze.b"])  # (NT, C/r, 1, 1)
    seq = ops.permute(ops.reshape(squeezed, (n, t, cr)), (0, 2, 1))  # (N, C/r, T)
    seq = ops.conv1d_temporal(seq, p["ce.temporal.w"], p["ce.temporal.b"])
    back = ops.reshape(ops.permute(seq, (0, 2, 1)), (n * t, cr, 1, 1))
    expanded = ops.conv2d(back, p["ce.expand.w"], p["ce.expand.b"])  # (NT, C, 1, 1)
    return ops.sigmoid(_unflat(expanded, n, t))


def motion_diff(f: Tensor, k: Tensor) -> Tensor:
    """``K * f[:, t+1] - f[:, t]`` for t < T-1, with a zero slice appended at T-1."""
    n, t, cr, h, w = f.shape
    zeros = Tensor(np.zeros((n, 1, cr, h, w), dtype=f.data.dtype))
    if t == 1:
        return ops.mul(f, Tensor(np.zeros((1,), dtype=f.data.dtype)))
    nxt = ops.reshape(ops.getitem(f, (slice(None), slice(1, None))), (n * (t - 1), cr, h, w))
    cur = ops.getitem(f, (slice(None), slice(0, t - 1)))
    moved = ops.reshape(ops.conv2d(nxt, k, None, 1, k.shape[-1] // 2), (n, t - 1, cr, h, w))
    return ops.concat([ops.sub(moved, cur), zeros], axis=1)


def me_forward(x: Tensor, p: Params) -> Tensor:
    """Motion map (N, T, C, 1, 1) from convolved adjacent-frame differences."""
    n, t, c, h, w = x.shape
    if p["me.squeeze.w"].shape[1] != c:
        raise ConfigError(f"motion excitation weights do not match {c} channels")
    squeezed = _unflat(ops.conv2d(_flat(x), p["me.squeeze.w"], p["me.squeeze.b"]), n, t)
    motion = motion_diff(squeezed, p["me.k.w"])
    pooled = ops.avg_pool_spatial(_flat(motion))
    expanded = ops.conv2d(pooled, p["me.expand.w"], p["me.expand.b"])
    return ops.sigmoid(_unflat(expanded, n, t))


def excitation_maps(x: Tensor, p: Params) -> ExcitationOutputs:
    return ExcitationOutputs(ste=ste_forward(x, p), ce=ce_forward(x, p), me=me_forward(x, p))


def action_forward(
    x: Tensor,
    p: Params,
    cfg: ActionConfig,
    force_maps: Optional[float] = None,
) -> Tensor:
    """Shift, excite along three paths and sum the residual outputs.

    ``force_maps`` replaces every map by a constant; it exists for testing the
    fusion rule.
    """
    if x.ndim != 5 or x.shape[2] != cfg.channels:
        raise ConfigError(f"ACTION block for {cfg.channels} channels got input {x.shape}")
    xs = ops.temporal_shift(x, cfg.shift_fraction)
    if force_maps is not None:
        c = Tensor(np.full((1,), force_maps, dtype=x.data.dtype))
        maps = (c, c, c)
    else:
        m = excitation_maps(xs, p)
        maps = (m.ste, m.ce, m.me)
    out = None
    for m in maps:
        branch = ops.add(xs, ops.mul(xs, m))
        out = branch if out is None else ops.add(out, branch)
    return out
