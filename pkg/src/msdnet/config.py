"""Run configuration: flat ``key=value`` files with dotted namespaces.

Example::

    seed=3
    model.t=8
    model.widths=16,32,64,128
    optim.lr=0.005
    sampler.mode=uniform

Namespaces are ``model``, ``optim``, ``sampler``, ``aug``, ``gen``, ``eval``
and ``run`` (the ``run.`` prefix may be omitted).
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .data import AugmentConfig, SamplerConfig, gen_synthetic
from .losses import LossWeights
from .network import ModelConfig
from .optim import OptimConfig
from .tensor import ConfigError


@dataclass(frozen=True)
class GenConfig:
    num_train: int = 64
    num_val: int = 32
    num_classes: int = 4
    length: int = 16
    height: int = 64
    width: int = 80
    seed: int = 0
    val_seed_offset: int = 1000
    distractors: int = 2
    radius: float = 0.14
    amplitude: float = 0.22
    stripe_contrast: float = 0.5

    def generate(self, split: str) -> list:
        """The ``train`` or ``val`` clip set; val foregrounds come from a held-out seed."""
        if split not in ("train", "val"):
            raise ConfigError(f"split must be 'train' or 'val', got {split!r}")
        seed = self.seed if split == "train" else self.seed + self.val_seed_offset
        return gen_synthetic(
            self.num_train if split == "train" else self.num_val,
            self.num_classes,
            self.length,
            self.height,
            self.width,
            seed=seed,
            distractors=self.distractors,
            radius=self.radius,
            amplitude=self.amplitude,
            stripe_contrast=self.stripe_contrast,
        )


@dataclass(frozen=True)
class EvalConfig:
    crops: int = 3
    clips: int = 10
    scale_ratio: float = 8 / 7
    crop_size: Optional[int] = None  # none: the model input size


def toy_model() -> ModelConfig:
    return ModelConfig(t=8, num_classes=4, widths=(16, 32, 64, 128), input_size=64, reduce_ratio=4)


def toy_optim() -> OptimConfig:
    return OptimConfig(lr=0.005, momentum=0.9, weight_decay=1e-5, milestones=(25,), decay=10.0, clip_norm=5.0)


def toy_augment() -> AugmentConfig:
    # crops are taken from frames scaled to the eval size, so 7/8 is the eval
    # view and 1 the widest; smaller scales and colour jitter keep 64 clips
    # from being fitted in 30 epochs
    return AugmentConfig(scales=(1.0, 7 / 8), jitter_prob=0.0)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=toy_model)
    optim: OptimConfig = field(default_factory=toy_optim)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    aug: AugmentConfig = field(default_factory=toy_augment)
    gen: GenConfig = field(default_factory=GenConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    epochs: int = 30
    batch_size: int = 4
    data_dir: str = "data"
    out_dir: str = "runs/default"
    checkpoint: Optional[str] = None
    binarize_threshold: Optional[float] = None

    def __post_init__(self):
        if self.sampler.t != self.model.t:
            self.sampler = dataclasses.replace(self.sampler, t=self.model.t)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    @property
    def weights(self) -> LossWeights:
        m = self.model
        return LossWeights(m.lambda_cls, m.lambda_local, m.lambda_global)

    @property
    def eval_size(self) -> int:
        return int(round(self.model.input_size * self.eval.scale_ratio))

    @property
    def eval_crop(self) -> int:
        crop = self.model.input_size if self.eval.crop_size is None else self.eval.crop_size
        if not 0 < crop <= self.eval_size:
            raise ConfigError(f"eval crop {crop} must lie in (0, {self.eval_size}]")
        return crop

    def to_lines(self) -> list[str]:
        lines = []
        for ns in ("model", "optim", "sampler", "aug", "gen", "eval"):
            obj = getattr(self, ns)
            for f in dataclasses.fields(obj):
                lines.append(f"{ns}.{f.name}={_fmt(getattr(obj, f.name))}")
        for f in dataclasses.fields(self):
            if f.name not in ("model", "optim", "sampler", "aug", "gen", "eval"):
                lines.append(f"{f.name}={_fmt(getattr(self, f.name))}")
        return lines


_SECTIONS = ("model", "optim", "sampler", "aug", "gen", "eval")


def _fmt(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(i) for i in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union or origin is types.UnionType:
        inner = [a for a in args if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _parse(raw, inner[0], key)
    if origin is tuple:
        if raw == "":
            return ()
        return tuple(_parse(p, args[0], key) for p in raw.split(","))
    try:
        if tp is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            if "/" in raw:
                num, den = raw.split("/")
                return float(num) / float(den)
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _field_types(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(values: Mapping[str, str], base: Optional[RunConfig] = None) -> RunConfig:
    """Apply string ``values`` on top of ``base`` (defaults when omitted)."""
    base = base or RunConfig()
    sections: dict[str, dict[str, Any]] = {ns: {} for ns in _SECTIONS}
    top: dict[str, Any] = {}
    top_types = _field_types(RunConfig)
    for key, raw in values.items():
        ns, _, name = key.rpartition(".")
        if ns in ("", "run"):
            if name not in top_types or name in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            top[name] = _parse(raw, top_types[name], key)
        elif ns in sections:
            cls = type(getattr(base, ns))
            ftypes = _field_types(cls)
            if name not in ftypes:
                raise ConfigError(f"unknown config key {key!r}")
            sections[ns][name] = _parse(raw, ftypes[name], key)
        else:
            raise ConfigError(f"unknown config namespace in {key!r}")
    kwargs = {ns: dataclasses.replace(getattr(base, ns), **sections[ns]) for ns in _SECTIONS}
    for f in dataclasses.fields(RunConfig):
        if f.name not in _SECTIONS:
            kwargs[f.name] = top.get(f.name, getattr(base, f.name))
    return RunConfig(**kwargs)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    values: dict[str, str] = {}
    if path is not None:
        values.update(parse_lines(Path(path).read_text().splitlines()))
    values.update(overrides or {})
    return build_config(values)
