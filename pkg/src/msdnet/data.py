"""Synthetic RGB-D gesture clips, segment sampling, augmentation and storage.

A synthetic clip shows a striped foreground blob (the "hand") moving along a
class-specific trajectory, plus a flat distractor blob of the same colour and
mean brightness moving along an unrelated trajectory, over a cluttered static
background. The depth channel is non-zero only on the foreground blob.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .kernels import resize_bilinear
from .serialize import FormatError
from .tensor import ConfigError

PATTERNS = ("right", "down", "circle", "zigzag", "left", "up", "diag_down_right", "diag_up_left")


@dataclass
class VideoClip:
    frames: np.ndarray  # (L, 3, H, W) in [0, 1]
    depth: np.ndarray  # (L, 1, H, W) in [0, 1]
    label: int

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ConfigError(f"frames must be (L, 3, H, W), got {self.frames.shape}")
        if self.depth.shape != (self.frames.shape[0], 1) + self.frames.shape[2:]:
            raise ConfigError(f"depth {self.depth.shape} does not align with frames {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VideoClip)
            and self.label == other.label
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.depth, other.depth)
        )


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "uniform"
    t: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.mode not in ("uniform", "dense"):
            raise ConfigError(f"sampler mode must be 'uniform' or 'dense', got {self.mode!r}")
        if self.t < 1 or self.stride < 1:
            raise ConfigError("sampler needs t >= 1 and stride >= 1")


@dataclass(frozen=True)
class AugmentConfig:
    scales: tuple[float, ...] = (1.0, 7 / 8, 3 / 4, 2 / 3)
    jitter_prob: float = 0.4
    brightness: float = 0.8
    contrast: float = 0.8
    saturation: float = 0.8
    hue: float = 0.2
    positions: tuple[str, ...] = ("center", "top_left", "top_right", "bottom_left", "bottom_right")

    def __post_init__(self):
        if not 0.0 <= self.jitter_prob <= 1.0:
            raise ConfigError(f"jitter probability must be in [0, 1], got {self.jitter_prob}")
        if any(not 0 < s <= 1 for s in self.scales):
            raise ConfigError(f"crop scales must be in (0, 1], got {self.scales}")


# ---------------------------------------------------------------------------
# synthetic generation


def trajectory(pattern: int, tau: np.ndarray, amp: float) -> np.ndarray:
    """Offsets (len(tau), 2) as (dy, dx) for normalised time ``tau`` in [0, 1]."""
    s = 2 * tau - 1
    z = np.zeros_like(tau)
    name = PATTERNS[pattern]
    if name == "right":
        dy, dx = z, s
    elif name == "left":
        dy, dx = z, -s
    elif name == "down":
        dy, dx = s, z
    elif name == "up":
        dy, dx = -s, z
    elif name == "diag_down_right":
        dy, dx = s * 0.75, s * 0.75
    elif name == "diag_up_left":
        dy, dx = -s * 0.75, -s * 0.75
    elif name == "circle":
        dy, dx = np.sin(2 * np.pi * tau), np.cos(2 * np.pi * tau)
    else:  # zigzag
        tri = 2 * np.abs(2 * ((3 * tau) % 1.0) - 1) - 1
        dy, dx = 0.5 * tri, s
    return amp * np.stack([dy, dx], axis=1)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = np.empty((3, h, w))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi / np.array([h, w])
            acc += np.cos(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
        bg[c] = 0.3 + 0.08 * acc + rng.uniform(-0.05, 0.05)
    for _ in range(4):
        rh, rw = rng.integers(h // 8, h // 3), rng.integers(w // 8, w // 3)
        y0, x0 = rng.integers(0, h - rh), rng.integers(0, w - rw)
        bg[:, y0 : y0 + rh, x0 : x0 + rw] = rng.uniform(0.05, 0.6, size=(3, 1, 1))
    return bg


def _disk(h: int, w: int, cy: float, cx: float, radius: float) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    soft = np.clip(radius - d + 0.5, 0.0, 1.0)
    return soft, d


def gen_synthetic(
    num_clips: int,
    num_classes: int,
    length: int = 16,
    height: int = 64,
    width: int = 80,
    seed: int = 0,
    background_seed: Optional[int] = None,
    distractors: int = 1,
    radius: float = 0.14,
    amplitude: float = 0.22,
    stripe_contrast: float = 0.5,
) -> list[VideoClip]:
    """Deterministic synthetic RGB-D clip set; labels cycle through the classes.

    Foreground trajectories depend only on ``seed``; backgrounds, distractors
    and pixel noise on ``background_seed`` (defaults to ``seed``).
    """
    if num_classes > len(PATTERNS):
        raise ConfigError(f"only {len(PATTERNS)} motion patterns exist, asked for {num_classes} classes")
    if num_classes < 1 or num_clips < 0 or length < 1:
        raise ConfigError("need num_classes >= 1, num_clips >= 0 and length >= 1")
    fg_rng = np.random.default_rng([seed, 0])
    bg_rng = np.random.default_rng([seed if background_seed is None else background_seed, 1])
    radius = radius * height
    amp = amplitude * height
    tau = np.linspace(0.0, 1.0, length)
    yy, xx = np.mgrid[0:height, 0:width]
    # the stripes average to the flat 0.75 level of the distractors
    stripes = np.where(((yy + xx) // 2) % 2 == 0, 0.75 + stripe_contrast / 2, 0.75 - stripe_contrast / 2)
    clips = []
    for i in range(num_clips):
        label = i % num_classes
        centre = np.array([height / 2, width / 2]) + fg_rng.uniform(-0.1, 0.1, size=2) * height
        path = centre + trajectory(label, tau, amp * fg_rng.uniform(0.85, 1.15))

        bg = _background(bg_rng, height, width)
        colour = bg_rng.uniform(0.75, 1.0, size=(3, 1, 1))
        d_paths = []
        for _ in range(distractors):
            d_pattern = int(bg_rng.integers(0, num_classes))
            d_centre = np.array([height / 2, width / 2]) + bg_rng.uniform(-0.25, 0.25, size=2) * np.array([height, width])
            d_paths.append(d_centre + trajectory(d_pattern, tau, amp * bg_rng.uniform(0.85, 1.15)))

        frames = np.empty((length, 3, height, width))
        depth = np.zeros((length, 1, height, width))
        for t in range(length):
            img = bg.copy()
            for d_path in d_paths:
                dmask, _ = _disk(height, width, d_path[t, 0], d_path[t, 1], radius)
                img = img * (1 - dmask) + colour * 0.75 * dmask
            fmask, dist = _disk(height, width, path[t, 0], path[t, 1], radius)
            img = img * (1 - fmask) + colour * stripes * fmask
            img += bg_rng.normal(0.0, 0.02, size=img.shape)
            frames[t] = np.clip(img, 0.0, 1.0)
            depth[t, 0] = fmask * (1.0 - 0.5 * np.clip(dist / radius, 0.0, 1.0))
        clips.append(VideoClip(frames.astype(np.float32), depth.astype(np.float32), label))
    return clips


# ---------------------------------------------------------------------------
# sampling


def sample_segments(length: int, cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """Frame indices for one clip of ``cfg.t`` frames."""
    t = cfg.t
    if cfg.mode == "uniform":
        if length < t:
            raise ConfigError(f"uniform sampling needs at least {t} frames, clip has {length}")
        bounds = (np.arange(t + 1) * length) // t
        return rng.integers(bounds[:-1], bounds[1:])
    span = (t - 1) * cfg.stride + 1
    start = int(rng.integers(0, max(length - span, 0) + 1))
    return np.minimum(start + cfg.stride * np.arange(t), length - 1)


def center_segments(length: int, cfg: SamplerConfig) -> np.ndarray:
    """Deterministic variant: middle frame of each segment (or a centred dense window)."""
    t = cfg.t
    if cfg.mode == "uniform":
        if length < t:
            raise ConfigError(f"uniform sampling needs at least {t} frames, clip has {length}")
        bounds = (np.arange(t + 1) * length) // t
        return (bounds[:-1] + bounds[1:] - 1) // 2
    span = (t - 1) * cfg.stride + 1
    start = max(length - span, 0) // 2
    return np.minimum(start + cfg.stride * np.arange(t), length - 1)


# ---------------------------------------------------------------------------
# augmentation


def resize_short_side(x: np.ndarray, size: int) -> np.ndarray:
    h, w = x.shape[-2:]
    if min(h, w) == size:
        return x
    if h <= w:
        return resize_bilinear(x, size, max(1, round(w * size / h)))
    return resize_bilinear(x, max(1, round(h * size / w)), size)


def crop_box(h: int, w: int, crop: int, position: str) -> tuple[int, int]:
    """Top-left corner of a ``crop`` x ``crop`` window at a named position."""
    if crop > min(h, w):
        raise ConfigError(f"crop {crop} larger than frame {h}x{w}")
    if position == "center":
        return (h - crop) // 2, (w - crop) // 2
    if position == "top_left":
        return 0, 0
    if position == "top_right":
        return 0, w - crop
    if position == "bottom_left":
        return h - crop, 0
    if position == "bottom_right":
        return h - crop, w - crop
    if position == "left":
        return (h - crop) // 2, 0
    if position == "right":
        return (h - crop) // 2, w - crop
    if position == "top":
        return 0, (w - crop) // 2
    if position == "bottom":
        return h - crop, (w - crop) // 2
    raise ConfigError(f"unknown crop position {position!r}")


def apply_crop(x: np.ndarray, size: int, scale: float, position: str, base: Optional[int] = None) -> np.ndarray:
    """Fix the short side to ``base``, cut a ``scale*base`` square at ``position``, resize to ``size``.

    ``base`` defaults to ``size``.  With ``base = size * 8/7`` the 7/8 scale
    reproduces an evaluation crop exactly, while scale 1 sees a wider field.
    """
    base = size if base is None else base
    x = resize_short_side(x, base)
    crop = max(1, int(round(base * scale)))
    y0, x0 = crop_box(x.shape[-2], x.shape[-1], crop, position)
    out = x[..., y0 : y0 + crop, x0 : x0 + crop]
    if crop != size:
        out = resize_bilinear(out, size, size)
    return np.ascontiguousarray(out)


def crop_scale_jitter(
    rgb: np.ndarray, depth: np.ndarray, aug: AugmentConfig, rng: np.random.Generator, size: int, base: Optional[int] = None
) -> tuple[np.ndarray, np.ndarray]:
    """One random scale and crop position, applied identically to RGB and depth."""
    if min(rgb.shape[-2:]) < size:
        raise ConfigError(f"frame {rgb.shape[-2:]} smaller than output size {size}")
    if rgb.shape[-2:] != depth.shape[-2:]:
        raise ConfigError("RGB and depth frames must share spatial extents")
    scale = aug.scales[int(rng.integers(len(aug.scales)))]
    position = aug.positions[int(rng.integers(len(aug.positions)))]
    return apply_crop(rgb, size, scale, position, base), apply_crop(depth, size, scale, position, base)


def _gray(x: np.ndarray) -> np.ndarray:
    return 0.299 * x[..., 0, :, :] + 0.587 * x[..., 1, :, :] + 0.114 * x[..., 2, :, :]


def adjust_colour(
    rgb: np.ndarray, brightness: float = 1.0, contrast: float = 1.0, saturation: float = 1.0, hue: float = 0.0
) -> np.ndarray:
    """Brightness, contrast, saturation, hue (in that order) on (..., 3, H, W) in [0, 1]."""
    x = np.clip(rgb * brightness, 0.0, 1.0)
    if contrast != 1.0:
        m = _gray(x).mean(axis=(-2, -1), keepdims=True)[..., None, :, :]
        x = np.clip((x - m) * contrast + m, 0.0, 1.0)
    if saturation != 1.0:
        g = _gray(x)[..., None, :, :]
        x = np.clip((x - g) * saturation + g, 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(np.moveaxis(x, -3, -1))
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        x = np.moveaxis(hsv_to_rgb(hsv), -1, -3)
    return np.clip(x, 0.0, 1.0).astype(rgb.dtype)


def color_jitter(rgb: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """With probability ``aug.jitter_prob`` apply random colour factors (RGB only)."""
    if rng.random() >= aug.jitter_prob:
        return rgb
    b = rng.uniform(1 - aug.brightness, 1 + aug.brightness)
    c = rng.uniform(1 - aug.contrast, 1 + aug.contrast)
    s = rng.uniform(1 - aug.saturation, 1 + aug.saturation)
    h = rng.uniform(-aug.hue, aug.hue)
    return adjust_colour(rgb, b, c, s, h)


# ---------------------------------------------------------------------------
# depth targets


def binarize_depth(depth: np.ndarray, threshold: float = 10.0, unit: bool = False) -> np.ndarray:
    """Pixels strictly above ``threshold`` become foreground, the rest background.

    With raw 8-bit depth the result is 0/255. With ``unit=True`` the input is
    taken as depth/255 and the result is 0/1.
    """
    if unit:
        return (depth * 255.0 > threshold).astype(depth.dtype)
    return np.where(depth > threshold, 255, 0).astype(depth.dtype)


def depth_targets(depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-scale target and a bilinear quarter-scale target from (M, 1, S, S) depth."""
    s_h, s_w = depth.shape[-2:]
    if s_h % 4 or s_w % 4:
        raise ConfigError(f"depth extents {depth.shape[-2:]} must be divisible by 4")
    return depth, resize_bilinear(depth, s_h // 4, s_w // 4)


# ---------------------------------------------------------------------------
# storage

CLIP_MAGIC = b"CLPS"
CLIP_VERSION = 1


def write_clipset(path: Union[str, Path], clips: Sequence[VideoClip]) -> None:
    buf = io.BytesIO()
    buf.write(CLIP_MAGIC)
    buf.write(struct.pack("<II", CLIP_VERSION, len(clips)))
    for clip in clips:
        L, _, H, W = clip.frames.shape
        buf.write(struct.pack("<IIII", clip.label, L, H, W))
        buf.write(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(clip.depth, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_clipset(path: Union[str, Path]) -> list[VideoClip]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated {what}: wanted {n} bytes, {len(data) - pos} left", pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CLIP_MAGIC:
        raise FormatError("bad clip-set magic", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CLIP_VERSION:
        raise FormatError(f"unsupported clip-set version {version}", 4)
    clips = []
    for _ in range(count):
        label, L, H, W = struct.unpack("<IIII", take(16, "clip header"))
        n = L * H * W
        frames = np.frombuffer(take(12 * n, "RGB payload"), dtype="<f4").reshape(L, 3, H, W).astype(np.float32)
        depth = np.frombuffer(take(4 * n, "depth payload"), dtype="<f4").reshape(L, 1, H, W).astype(np.float32)
        clips.append(VideoClip(frames, depth, int(label)))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", pos)
    return clips


def _to_bytes(img: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)


def export_pgm(mask: np.ndarray, path: Union[str, Path]) -> None:
    """Binary 8-bit greyscale (P5) image of a (1, H, W) or (H, W) array in [0, 1]."""
    img = np.asarray(mask)
    if img.ndim == 3:
        img = img[0]
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + _to_bytes(img).tobytes())


def export_ppm(rgb: np.ndarray, path: Union[str, Path]) -> None:
    """Binary 8-bit colour (P6) image of a (3, H, W) array in [0, 1]."""
    _, h, w = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + _to_bytes(np.moveaxis(rgb, 0, -1)).tobytes())
