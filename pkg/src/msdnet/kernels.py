"""Raw numpy convolution kernels shared by the forward and backward passes.

Layout is channels-first: ``x`` is ``(M, C, *spatial)`` and a convolution
weight is ``(O, C, *kernel)``. All functions are cross-correlations (no kernel
flip) and work for any number of spatial axes.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x: np.ndarray, padding: tuple[int, ...]) -> np.ndarray:
    if not any(padding):
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])


def out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, ksize: tuple[int, ...], stride: tuple[int, ...]) -> np.ndarray:
    nd = len(ksize)
    view = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + nd)))
    return view[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]


def conv_forward(x: np.ndarray, w: np.ndarray, stride: tuple[int, ...], padding: tuple[int, ...]) -> np.ndarray:
    nd = w.ndim - 2
    ksize = w.shape[2:]
    if all(k == 1 for k in ksize) and not any(padding):
        xs = x[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
        out = np.tensordot(w.reshape(w.shape[:2]), xs, axes=([1], [1]))  # (O, M, *out)
        return np.ascontiguousarray(np.moveaxis(out, 0, 1))
    win = _windows(_pad(x, padding), ksize, stride)  # (M, C, *out, *k)
    kaxes = list(range(2 + nd, 2 + 2 * nd))
    out = np.tensordot(win, w, axes=([1] + kaxes, [1] + list(range(2, 2 + nd))))  # (M, *out, O)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def conv_weight_grad(
    x: np.ndarray, g: np.ndarray, ksize: tuple[int, ...], stride: tuple[int, ...], padding: tuple[int, ...]
) -> np.ndarray:
    """d(loss)/d(weight) given input ``x`` and output gradient ``g``; returns ``(O, C, *k)``."""
    nd = len(ksize)
    spatial = list(range(2, 2 + nd))
    if all(k == 1 for k in ksize) and not any(padding):
        xs = x[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
        dw = np.tensordot(g, xs, axes=([0] + spatial, [0] + spatial))
        return dw.reshape(dw.shape + (1,) * nd)
    win = _windows(_pad(x, padding), ksize, stride)
    # windows may overrun the output extent when the last stride step is partial
    win = win[(slice(None), slice(None)) + tuple(slice(0, n) for n in g.shape[2:])]
    return np.tensordot(g, win, axes=([0] + spatial, [0] + spatial))


def conv_input_grad(
    g: np.ndarray, w: np.ndarray, in_shape: tuple[int, ...], stride: tuple[int, ...], padding: tuple[int, ...]
) -> np.ndarray:
    """Adjoint of :func:`conv_forward` with respect to its input; returns ``in_shape``."""
    ksize = w.shape[2:]
    M, C = in_shape[:2]
    out_sp = g.shape[2:]
    if all(k == 1 for k in ksize) and not any(padding):
        dxs = np.tensordot(w.reshape(w.shape[:2]), g, axes=([0], [1]))  # (C, M, *out)
        dx = np.zeros((C, M) + tuple(in_shape[2:]), dtype=g.dtype)
        dx[(slice(None), slice(None)) + tuple(slice(0, n * s, s) for n, s in zip(out_sp, stride))] = dxs
        return np.ascontiguousarray(np.moveaxis(dx, 0, 1))
    padded = tuple(n + 2 * p for n, p in zip(in_shape[2:], padding))
    wg = np.tensordot(w, g, axes=([0], [1]))  # (C, *k, M, *out)
    acc = np.zeros((C, M) + padded, dtype=g.dtype)
    for off in itertools.product(*(range(k) for k in ksize)):
        sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, stride, out_sp))
        acc[(slice(None), slice(None)) + sl] += wg[(slice(None),) + off]
    crop = tuple(slice(p, p + n) for p, n in zip(padding, in_shape[2:]))
    return np.ascontiguousarray(np.moveaxis(acc[(slice(None), slice(None)) + crop], 0, 1))


def transpose_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def conv_transpose_forward(
    x: np.ndarray, w: np.ndarray, stride: tuple[int, ...], padding: tuple[int, ...]
) -> np.ndarray:
    """Transposed convolution; ``w`` is ``(C_in, O, *k)``."""
    ksize = w.shape[2:]
    out_shape = (x.shape[0], w.shape[1]) + tuple(
        transpose_out_extent(n, k, s, p) for n, k, s, p in zip(x.shape[2:], ksize, stride, padding)
    )
    return conv_input_grad(x, w, out_shape, stride, padding)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``(n_out, n_in)`` interpolation matrix, half-pixel centres (align_corners=False)."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, None)
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes of a plain array."""
    ah = bilinear_matrix(x.shape[-2], out_h, x.dtype)
    aw = bilinear_matrix(x.shape[-1], out_w, x.dtype)
    return np.matmul(np.matmul(ah, x), aw.T)
