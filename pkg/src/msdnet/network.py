"""Residual backbone with ACTION blocks, classification head and the detachable multi-scale decoder.

Outside the ACTION blocks features are 4D ``(N*T, C, H, W)``; they are viewed as
``(N, T, C, H, W)`` only inside a block. The decoders are side branches: they
read backbone features and never feed back into the classification path, so
dropping their parameters leaves the logits untouched.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from . import action, ops
from .serialize import FormatError, read_tensor, write_tensor
from .tensor import ConfigError, Tensor, get_dtype

DECODER_PREFIX = "msd."
# fixed per-pixel standardisation of [0, 1] RGB input
INPUT_MEAN = 0.45
INPUT_STD = 0.225


@dataclass
class ModelConfig:
    t: int = 8
    num_classes: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    input_size: int = 224
    reduce_ratio: int = 16
    shift_fraction: float = 0.125
    lambda_cls: float = 1.0
    lambda_local: float = 1.0
    lambda_global: float = 0.01
    msd_enabled: bool = True
    local_tap: str = "stage1"  # "stage1" or "stem"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.blocks = tuple(int(b) for b in self.blocks)
        self.validate()

    def validate(self) -> None:
        if len(self.widths) != 4 or len(self.blocks) != 4:
            raise ConfigError("widths and blocks need one entry per stage (4 stages)")
        if any(b < 1 for b in self.blocks):
            raise ConfigError(f"every stage needs at least one block, got {self.blocks}")
        if self.t < 1 or self.num_classes < 1:
            raise ConfigError("segments and class count must be >= 1")
        if self.reduce_ratio < 1:
            raise ConfigError(f"reduce ratio must be >= 1, got {self.reduce_ratio}")
        for w in self.widths:
            if w < 1 or w % self.reduce_ratio:
                raise ConfigError(f"stage width {w} not divisible by reduce ratio {self.reduce_ratio}")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError(f"input size {self.input_size} must be a positive multiple of 32")
        if min(self.lambda_cls, self.lambda_local, self.lambda_global) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.local_tap not in ("stage1", "stem"):
            raise ConfigError(f"local_tap must be 'stage1' or 'stem', got {self.local_tap!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["blocks"] = list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def action_config(self, channels: int) -> action.ActionConfig:
        return action.ActionConfig(channels, self.t, self.reduce_ratio, self.shift_fraction)


@dataclass
class MaskPair:
    local: Tensor  # (N*T, 1, S, S)
    global_: Tensor  # (N*T, 1, S/4, S/4)


@dataclass
class Parameters:
    """Ordered named tensors of one model plus their momentum buffers."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self.tensors[name] = Tensor(value, requires_grad=True, dtype=value.dtype)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def has_msd(self) -> bool:
        return any(n.startswith(DECODER_PREFIX) for n in self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def scoped(self, prefix: str) -> dict[str, Tensor]:
        return {n[len(prefix) :]: t for n, t in self.tensors.items() if n.startswith(prefix)}

    def astype(self, dtype) -> "Parameters":
        out = Parameters(self.config)
        for n, t in self.tensors.items():
            out.add(n, t.data.astype(dtype))
        return out


# ---------------------------------------------------------------------------
# construction


def stage_strides() -> tuple[int, ...]:
    return (1, 2, 2, 2)


def _block_specs(cfg: ModelConfig):
    """Yield (prefix, in_channels, out_channels, stride) for every residual block."""
    cin = cfg.widths[0]
    for s, (width, nblocks, stride) in enumerate(zip(cfg.widths, cfg.blocks, stage_strides()), start=1):
        for b in range(nblocks):
            yield f"stage{s}.block{b}.", cin, width, stride if b == 0 else 1
            cin = width


def decoder_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c1, c4 = cfg.widths[0], cfg.widths[3]
    lh = max(c1 // 2, 1)
    g1, g2 = max(c4 // 2, 1), max(c4 // 4, 1)
    return {
        "msd.local.up1.w": (c1, lh, 4, 4),
        "msd.local.up1.b": (lh,),
        "msd.local.up2.w": (lh, 1, 4, 4),
        "msd.local.up2.b": (1,),
        "msd.global.up1.w": (c4, g1, 4, 4),
        "msd.global.up1.b": (g1,),
        "msd.global.up2.w": (g1, g2, 4, 4),
        "msd.global.up2.b": (g2,),
        "msd.global.up3.w": (g2, 1, 4, 4),
        "msd.global.up3.b": (1,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"stem.w": (cfg.widths[0], 3, 3, 3), "stem.b": (cfg.widths[0],)}
    for prefix, cin, cout, stride in _block_specs(cfg):
        for name, shape in action.param_shapes(cfg.action_config(cin)).items():
            shapes[prefix + "action." + name] = shape
        shapes[prefix + "conv1.w"] = (cout, cin, 3, 3)
        shapes[prefix + "conv1.b"] = (cout,)
        shapes[prefix + "conv2.w"] = (cout, cout, 3, 3)
        shapes[prefix + "conv2.b"] = (cout,)
        if cin != cout or stride != 1:
            shapes[prefix + "shortcut.w"] = (cout, cin, 1, 1)
            shapes[prefix + "shortcut.b"] = (cout,)
    shapes["head.fc.w"] = (cfg.num_classes, cfg.widths[3])
    shapes["head.fc.b"] = (cfg.num_classes,)
    if cfg.msd_enabled:
        shapes.update(decoder_shapes(cfg))
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if ".up" in name:  # transposed conv: (C_in, O, k, k); each output sums C_in*k*k/stride^2 taps
        return max(shape[0] * shape[2] * shape[3] // 4, 1)
    return int(np.prod(shape[1:]))


def _init_gain(name: str) -> float:
    if name.endswith("conv2.w"):
        return 0.25  # residual branches start small: the net has no normalisation layers
    if name.startswith("head.") or name in ("msd.local.up2.w", "msd.global.up3.w"):
        return 0.1
    return 1.0


def build_model(cfg: ModelConfig, seed: int = 0, dtype=None) -> Parameters:
    """Seeded fan-in scaled uniform initialisation; biases start at zero."""
    cfg.validate()
    dtype = dtype or get_dtype()
    rng = np.random.default_rng(seed)
    params = Parameters(cfg)
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params.add(name, np.zeros(shape, dtype=dtype))
            continue
        relu_follows = not (".action." in name or name.startswith("head.") or name.startswith("msd."))
        bound = np.sqrt((6.0 if relu_follows else 3.0) / _fan_in(name, shape)) * _init_gain(name)
        params.add(name, rng.uniform(-bound, bound, size=shape).astype(dtype))
    return params


def strip_msd(params: Parameters) -> Parameters:
    """Copy of ``params`` without decoder tensors; the tensors themselves are shared."""
    cfg = dataclasses.replace(params.config, msd_enabled=False)
    out = Parameters(cfg)
    for n, t in params.items():
        if not n.startswith(DECODER_PREFIX):
            out.tensors[n] = t
            if n in params.momentum:
                out.momentum[n] = params.momentum[n]
    return out


# ---------------------------------------------------------------------------
# forward passes


def _residual_block(x: Tensor, params: Parameters, prefix: str, cfg: ModelConfig, stride: int) -> Tensor:
    m, cin, h, w = x.shape
    n = m // cfg.t
    acfg = cfg.action_config(cin)
    excited = action.action_forward(ops.reshape(x, (n, cfg.t, cin, h, w)), params.scoped(prefix + "action."), acfg)
    y = ops.reshape(excited, (m, cin, h, w))
    y = ops.relu(ops.conv2d(y, params[prefix + "conv1.w"], params[prefix + "conv1.b"], stride, 1))
    y = ops.conv2d(y, params[prefix + "conv2.w"], params[prefix + "conv2.b"], 1, 1)
    if prefix + "shortcut.w" in params:
        sc = ops.conv2d(x, params[prefix + "shortcut.w"], params[prefix + "shortcut.b"], stride, 0)
    else:
        sc = x
    return ops.relu(ops.add(y, sc))


def backbone(params: Parameters, clip: Tensor) -> dict[str, Tensor]:
    """Run the backbone on a clip (N, T, 3, S, S); returns named 4D features."""
    cfg = params.config
    if clip.ndim != 5:
        raise ConfigError(f"clip must be (N, T, 3, S, S), got {clip.shape}")
    n, t, c, h, w = clip.shape
    if c != 3:
        raise ConfigError(f"clip channel axis must be 3 (RGB), got {c}")
    if t != cfg.t:
        raise ConfigError(f"clip has {t} segments, model expects {cfg.t}")
    if min(h, w) < 32:
        raise ConfigError(f"spatial extent {h}x{w} too small; need >= 32")
    x = ops.reshape(clip, (n * t, c, h, w))
    x = ops.scale(ops.add(x, Tensor(np.full((1,), -INPUT_MEAN, dtype=x.data.dtype))), 1.0 / INPUT_STD)
    x = ops.relu(ops.conv2d(x, params["stem.w"], params["stem.b"], 2, 1))
    x = ops.max_pool2d(x, 2)
    feats = {"stem": x}
    for prefix, _, _, stride in _block_specs(cfg):
        x = _residual_block(x, params, prefix, cfg, stride)
        stage = prefix.split(".")[0]
        feats[stage] = x
    return feats


def classify_head(params: Parameters, feat: Tensor) -> Tensor:
    """Spatial GAP, FC to class scores, then average over segments -> (N, CLS)."""
    cfg = params.config
    m, c = feat.shape[:2]
    pooled = ops.reshape(ops.avg_pool_spatial(feat), (m, c))
    scores = ops.fully_connected(pooled, params["head.fc.w"], params["head.fc.b"])
    return ops.mean(ops.reshape(scores, (m // cfg.t, cfg.t, cfg.num_classes)), axis=1)


def forward_classify(params: Parameters, clip: Tensor) -> Tensor:
    return classify_head(params, backbone(params, clip)["stage4"])


def local_decode(feat: Tensor, params: Parameters) -> Tensor:
    """Two stride-2 transposed convs (ReLU between): (M, C1, S/4, S/4) -> (M, 1, S, S)."""
    y = ops.relu(ops.conv_transpose2d(feat, params["msd.local.up1.w"], params["msd.local.up1.b"], 2, 1))
    return ops.conv_transpose2d(y, params["msd.local.up2.w"], params["msd.local.up2.b"], 2, 1)


def global_decode(feat: Tensor, params: Parameters) -> Tensor:
    """Three stride-2 transposed convs (ReLU between): (M, C4, S/32, S/32) -> (M, 1, S/4, S/4)."""
    y = ops.relu(ops.conv_transpose2d(feat, params["msd.global.up1.w"], params["msd.global.up1.b"], 2, 1))
    y = ops.relu(ops.conv_transpose2d(y, params["msd.global.up2.w"], params["msd.global.up2.b"], 2, 1))
    return ops.conv_transpose2d(y, params["msd.global.up3.w"], params["msd.global.up3.b"], 2, 1)


def forward_with_msd(params: Parameters, clip: Tensor) -> tuple[Tensor, MaskPair]:
    if not params.has_msd():
        raise ConfigError("forward_with_msd needs the multi-scale decoder; these parameters have it stripped")
    s = clip.shape[-1]
    if clip.shape[-2] != s or s % 32:
        raise ConfigError(f"decoder supervision needs square clips with side divisible by 32, got {clip.shape[-2:]}")
    feats = backbone(params, clip)
    logits = classify_head(params, feats["stage4"])
    masks = MaskPair(local=local_decode(feats[params.config.local_tap], params), global_=global_decode(feats["stage4"], params))
    return logits, masks


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"CKPT"
_CKPT_VERSION = 1


def save_checkpoint(params: Parameters, path: Union[str, Path], extra: Optional[dict] = None) -> None:
    """Header (JSON model config) followed by ordered (name, tensor) records."""
    header = json.dumps({"model": params.config.to_dict(), "extra": extra or {}}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<II", _CKPT_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params.items():
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor(buf, t.data)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Union[str, Path], expect: Optional[ModelConfig] = None) -> tuple[Parameters, dict]:
    data = Path(path).read_bytes()
    stream = io.BytesIO(data)
    if stream.read(4) != _CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, hlen = struct.unpack("<II", _read_exact(stream, 8))
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    header = json.loads(_read_exact(stream, hlen).decode())
    cfg = ModelConfig.from_dict(header["model"])
    if expect is not None and _arch(expect) != _arch(cfg):
        raise ConfigError(f"checkpoint model config {cfg} does not match requested {expect}")
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    params = Parameters(cfg)
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read_exact(stream, 4))
        name = _read_exact(stream, nlen).decode()
        arr = read_tensor(stream)
        params.add(name, arr.astype(get_dtype()))
    expected = set(param_shapes(cfg))
    if set(params.names()) != expected:
        raise FormatError(f"checkpoint tensors do not match config: {sorted(set(params.names()) ^ expected)[:4]}", stream.tell())
    return params, header.get("extra", {})


def _arch(cfg: ModelConfig) -> dict:
    d = cfg.to_dict()
    for k in ("msd_enabled", "lambda_cls", "lambda_local", "lambda_global"):
        d.pop(k)
    return d


def _read_exact(stream: io.BytesIO, n: int) -> bytes:
    pos = stream.tell()
    b = stream.read(n)
    if len(b) != n:
        raise FormatError(f"truncated: wanted {n} bytes", pos)
    return b
