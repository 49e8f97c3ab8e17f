"""Differentiable operations over :class:`~msdnet.tensor.Tensor`.

Only the operations the network needs are provided. Each one computes its
forward value with numpy and registers a closure returning the gradient of
every parent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .tensor import ConfigError, Tensor, get_dtype

Scalar = Union[int, float]

logger = logging.getLogger(__name__)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise ConfigError(f"expected {n} values, got {v}")
    return v


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def scale(x: Tensor, c: Scalar) -> Tensor:
    c = float(c)
    return Tensor._make(x.data * x.data.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),), "scale")


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable in both tails
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return Tensor._make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(y, (x,), backward, "log_softmax")


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ConfigError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    y = x.data.reshape(tuple(shape))
    return Tensor._make(y, (x,), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "permute")


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g
        return (out,)

    return Tensor._make(x.data[idx], (x,), backward, "getitem")


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(np.concatenate([x.data for x in xs], axis=axis), xs, backward, "concat")


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        axes = tuple(range(x.ndim))
    else:
        axes = tuple(_check_axis(x, a) for a in (axis if isinstance(axis, (tuple, list)) else (axis,)))
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    y = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / g.dtype.type(count), shape).copy(),)

    return Tensor._make(np.asarray(y, dtype=x.data.dtype), (x,), backward, "mean")


def avg_pool_spatial(x: Tensor) -> Tensor:
    """Mean over the last two axes, keeping them as singletons."""
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ConfigError(f"spatial pooling needs (..., H, W) with H, W >= 1, got {x.shape}")
    return mean(x, axis=(-2, -1), keepdims=True)


def avg_pool_channel(x: Tensor) -> Tensor:
    """Mean over the channel axis of an ``(N, T, C, H, W)`` tensor."""
    if x.ndim != 5:
        raise ConfigError(f"channel pooling expects (N, T, C, H, W), got {x.shape}")
    return mean(x, axis=2, keepdims=True)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""
    M, C, H, W = x.shape
    ho, wo = H // size, W // size
    if ho < 1 or wo < 1:
        raise ConfigError(f"max_pool2d window {size} larger than input {H}x{W}")
    crop = x.data[:, :, : ho * size, : wo * size]
    blocks = crop.reshape(M, C, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(M, C, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(M, C, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(M, C, ho * size, wo * size)
        out = np.zeros((M, C, H, W), dtype=g.dtype)
        out[:, :, : ho * size, : wo * size] = gb
        return (out,)

    return Tensor._make(y, (x,), backward, "max_pool2d")


# ---------------------------------------------------------------------------
# convolutions


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer."""

    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: tuple[int, ...]
    in_channels: int
    out_channels: int
    transpose: bool = False

    def __post_init__(self):
        n = len(self.kernel)
        if len(self.stride) != n or len(self.padding) != n:
            raise ConfigError("kernel, stride and padding must have the same number of axes")
        if any(s < 1 for s in self.stride):
            raise ConfigError(f"strides must be >= 1, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if any(k < 1 for k in self.kernel):
            raise ConfigError(f"kernel extents must be >= 1, got {self.kernel}")

    def output_extents(self, extents: Sequence[int]) -> tuple[int, ...]:
        if len(extents) != len(self.kernel):
            raise ConfigError(f"expected {len(self.kernel)} spatial axes, got {tuple(extents)}")
        out = []
        for axis, (n, k, s, p) in enumerate(zip(extents, self.kernel, self.stride, self.padding)):
            if self.transpose:
                o = kernels.transpose_out_extent(n, k, s, p)
            else:
                o = kernels.out_extent(n, k, s, p)
            if o < 1:
                raise ConfigError(f"spatial axis {axis}: extent {n} gives non-positive output {o}")
            out.append(o)
        return tuple(out)


def _check_conv(x: Tensor, w: Tensor, b: Optional[Tensor], nd: int, transpose: bool) -> None:
    if x.ndim != nd + 2:
        raise ConfigError(f"expected input with {nd + 2} axes, got shape {x.shape}")
    if w.ndim != nd + 2:
        raise ConfigError(f"expected weight with {nd + 2} axes, got shape {w.shape}")
    if x.shape[1] != w.shape[0 if transpose else 1]:
        raise ConfigError(
            f"channel axis mismatch: input has {x.shape[1]} channels, weight expects {w.shape[0 if transpose else 1]}"
        )
    out_ch = w.shape[1] if transpose else w.shape[0]
    if b is not None and b.shape != (out_ch,):
        raise ConfigError(f"bias axis mismatch: expected ({out_ch},), got {b.shape}")


def conv_nd(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation over the trailing axes of ``x`` (M, C, *spatial)."""
    nd = w.ndim - 2
    _check_conv(x, w, b, nd, transpose=False)
    spec = ConvSpec(w.shape[2:], _tuple(stride, nd), _tuple(padding, nd), w.shape[1], w.shape[0])
    spec.output_extents(x.shape[2:])
    xd, wd = x.data, w.data
    y = kernels.conv_forward(xd, wd, spec.stride, spec.padding)
    bshape = (1, -1) + (1,) * nd
    if b is not None:
        y += b.data.reshape(bshape)

    def backward(g):
        dx = kernels.conv_input_grad(g, wd, xd.shape, spec.stride, spec.padding) if x.requires_grad else None
        dw = kernels.conv_weight_grad(xd, g, spec.kernel, spec.stride, spec.padding) if w.requires_grad else None
        db = g.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b is not None else None
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(y, parents, backward, f"conv{nd}d")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """2D cross-correlation: x (M, C, H, W), w (O, C, kh, kw) -> (M, O, H', W')."""
    if x.ndim != 4:
        raise ConfigError(f"conv2d expects (M, C, H, W), got {x.shape}")
    return conv_nd(x, w, b, stride, padding)


def conv1d_temporal(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Length-preserving temporal convolution: x (N, C, T), w (O, C, 3), zero padding 1."""
    if x.ndim != 3:
        raise ConfigError(f"conv1d_temporal expects (N, C, T), got {x.shape}")
    if x.shape[2] < 1:
        raise ConfigError("temporal extent must be >= 1")
    k = w.shape[-1]
    if k % 2 != 1:
        raise ConfigError(f"temporal kernel must be odd to preserve length, got {k}")
    return conv_nd(x, w, b, 1, k // 2)


def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Shape-preserving 3D convolution: x (N, C, T, H, W), w (O, C, 3, 3, 3), zero padding 1."""
    if x.ndim != 5:
        raise ConfigError(f"conv3d expects (N, C, T, H, W), got {x.shape}")
    return conv_nd(x, w, b, 1, tuple(k // 2 for k in w.shape[2:]))


def conv_transpose2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=2, padding=1) -> Tensor:
    """Transposed 2D convolution: x (M, C, H, W), w (C, O, kh, kw)."""
    if x.ndim != 4:
        raise ConfigError(f"conv_transpose2d expects (M, C, H, W), got {x.shape}")
    _check_conv(x, w, b, 2, transpose=True)
    spec = ConvSpec(w.shape[2:], _tuple(stride, 2), _tuple(padding, 2), w.shape[0], w.shape[1], transpose=True)
    out_sp = spec.output_extents(x.shape[2:])
    # the adjoint must land exactly back on the input grid
    for axis, (n, o) in enumerate(zip(x.shape[2:], out_sp)):
        if kernels.out_extent(o, spec.kernel[axis], spec.stride[axis], spec.padding[axis]) != n:
            raise ConfigError(f"spatial axis {axis}: transpose geometry does not invert to extent {n}")
    xd, wd = x.data, w.data
    y = kernels.conv_transpose_forward(xd, wd, spec.stride, spec.padding)
    if b is not None:
        y += b.data.reshape(1, -1, 1, 1)

    def backward(g):
        dx = kernels.conv_forward(g, wd, spec.stride, spec.padding) if x.requires_grad else None
        # weight gradient of a transposed conv is the conv weight gradient with roles of input/output swapped
        dw = kernels.conv_weight_grad(g, xd, spec.kernel, spec.stride, spec.padding) if w.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(y, parents, backward, "conv_transpose2d")


def fully_connected(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x (M, D) @ w.T (D, K) + b (K)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ConfigError(f"fully_connected shape mismatch: x {x.shape}, w {w.shape}")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is not None:
        y = y + b.data

    def backward(g):
        return g @ wd, g.T @ xd, (g.sum(axis=0) if b is not None else None)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(y, parents, backward, "fully_connected")


# ---------------------------------------------------------------------------
# resampling


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes with half-pixel centres."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"target extent must be >= 1, got {out_h}x{out_w}")
    if x.ndim < 2:
        raise ConfigError(f"bilinear_resize needs (..., H, W), got {x.shape}")
    ah = kernels.bilinear_matrix(x.shape[-2], out_h, x.data.dtype)
    aw = kernels.bilinear_matrix(x.shape[-1], out_w, x.data.dtype)
    y = np.matmul(np.matmul(ah, x.data), aw.T)
    return Tensor._make(y, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),), "bilinear_resize")


def temporal_shift(x: Tensor, fraction: float = 0.125) -> Tensor:
    """Shift ``floor(C*fraction)`` channels forward in time and as many backward, zero-filling.

    Channels ``[0, f)`` move t -> t+1, channels ``[f, 2f)`` move t -> t-1.
    """
    if x.ndim != 5:
        raise ConfigError(f"temporal_shift expects (N, T, C, H, W), got {x.shape}")
    C, T = x.shape[2], x.shape[1]
    fold = int(np.floor(C * fraction))
    if 2 * fold > C:
        raise ConfigError(f"shift fraction {fraction} moves more than all {C} channels")
    if T < 2:
        logger.warning("temporal_shift with T=%d is the identity", T)
    if fold == 0 or T < 2:
        return Tensor._make(x.data.copy(), (x,), lambda g: (g,), "temporal_shift")

    def shift(a, forward):
        out = np.zeros_like(a)
        if forward:
            out[:, 1:, :fold] = a[:, :-1, :fold]
            out[:, :-1, fold : 2 * fold] = a[:, 1:, fold : 2 * fold]
        else:
            out[:, :-1, :fold] = a[:, 1:, :fold]
            out[:, 1:, fold : 2 * fold] = a[:, :-1, fold : 2 * fold]
        out[:, :, 2 * fold :] = a[:, :, 2 * fold :]
        return out

    return Tensor._make(shift(x.data, True), (x,), lambda g: (shift(g, False),), "temporal_shift")
