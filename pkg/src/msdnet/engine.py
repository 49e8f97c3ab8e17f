"""Training, evaluation, gradient-check and mask-export drivers."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import action, losses, ops
from .config import RunConfig
from .data import (
    VideoClip,
    binarize_depth,
    center_segments,
    color_jitter,
    crop_box,
    crop_scale_jitter,
    depth_targets,
    export_pgm,
    export_ppm,
    resize_short_side,
    sample_segments,
)
from .gradcheck import GradCheckReport, grad_check
from .network import (
    ModelConfig,
    Parameters,
    build_model,
    forward_classify,
    forward_with_msd,
    save_checkpoint,
    strip_msd,
)
from .optim import lr_at, sgd_step
from .tensor import Tensor, no_grad, precision

logger = logging.getLogger(__name__)

LOG_HEADER = "step\tepoch\tlr\tl_cls\tl_local\tl_global\ttotal"


class NumericError(RuntimeError):
    """Non-finite loss or a failed gradient check."""


# ---------------------------------------------------------------------------
# batches


def make_batch(
    clips: Sequence[VideoClip], cfg: RunConfig, rng: Optional[np.random.Generator], train: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack (N, T, 3, S, S) RGB, (N*T, 1, S, S) depth and (N,) labels.

    With ``train`` each clip gets random segment indices, one crop/scale draw
    (relative to frames scaled to the eval size) shared by RGB and depth, and
    colour jitter on RGB; otherwise the centre frame of every segment and the
    centre crop of the evaluation protocol.
    """
    s = cfg.model.input_size
    rgbs, depths, labels = [], [], []
    for clip in clips:
        if train:
            idx = sample_segments(clip.length, cfg.sampler, rng)
            rgb, depth = crop_scale_jitter(clip.frames[idx], clip.depth[idx], cfg.aug, rng, s, cfg.eval_size)
            rgb = color_jitter(rgb, cfg.aug, rng)
        else:
            idx = center_segments(clip.length, cfg.sampler)
            rgb = center_view(clip.frames[idx], cfg)
            depth = center_view(clip.depth[idx], cfg)
        if cfg.binarize_threshold is not None:
            depth = binarize_depth(depth, cfg.binarize_threshold, unit=True)
        rgbs.append(rgb)
        depths.append(depth)
        labels.append(clip.label)
    rgb = np.stack(rgbs).astype(np.float32)
    depth = np.concatenate(depths).astype(np.float32)
    return rgb, depth, np.asarray(labels, dtype=np.int64)


def center_view(frames: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Short side scaled to the eval size, then the central eval-crop square."""
    size = cfg.eval_crop
    frames = resize_short_side(frames, cfg.eval_size)
    y0, x0 = crop_box(frames.shape[-2], frames.shape[-1], size, "center")
    return frames[..., y0 : y0 + size, x0 : x0 + size]


def predict(params: Parameters, clips: Sequence[VideoClip], cfg: RunConfig, batch: int = 16) -> np.ndarray:
    """Single-view argmax predictions (centre frames, centre crop)."""
    out = []
    with no_grad():
        for i in range(0, len(clips), batch):
            rgb, _, _ = make_batch(clips[i : i + batch], cfg, None, train=False)
            out.append(forward_classify(params, Tensor(rgb)).data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(params: Parameters, clips: Sequence[VideoClip], cfg: RunConfig) -> float:
    if not clips:
        return float("nan")
    pred = predict(params, clips, cfg)
    return float(np.mean(pred == np.array([c.label for c in clips])))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: Parameters
    log_lines: list[str] = field(default_factory=list)
    epoch_lines: list[str] = field(default_factory=list)
    best_val: float = float("nan")
    best_epoch: int = -1
    best_params: Optional[Parameters] = None
    train_acc: float = float("nan")


def _fmt(x: float) -> str:
    return repr(float(x))


def train_step(params: Parameters, rgb: np.ndarray, depth: np.ndarray, labels: np.ndarray, cfg: RunConfig):
    """Forward, loss and backward for one batch; returns the loss components as floats."""
    w = cfg.weights
    params.zero_grad()
    use_msd = params.has_msd()
    if use_msd:
        logits, masks = forward_with_msd(params, Tensor(rgb))
        local_t, global_t = depth_targets(depth)
        l_local = losses.mse_local(masks.local, local_t)
        l_global = losses.mse_global(masks.global_, global_t)
    else:
        logits = forward_classify(params, Tensor(rgb))
        l_local = l_global = None
    l_cls = losses.cross_entropy(logits, labels)
    total = losses.total_loss(l_cls, l_local, l_global, w)
    total.backward()
    # decoder tensors get no gradient when their loss weight is zero
    for name, t in params.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
    vals = (
        float(l_cls.data),
        float(l_local.data) if l_local is not None else 0.0,
        float(l_global.data) if l_global is not None else 0.0,
        float(total.data),
    )
    return vals, logits.data


def train(
    cfg: RunConfig,
    train_clips: Sequence[VideoClip],
    val_clips: Sequence[VideoClip] = (),
    params: Optional[Parameters] = None,
) -> TrainResult:
    """Mini-batch SGD over ``cfg.epochs``; fully determined by ``cfg.seed``."""
    model_cfg = cfg.model
    if params is None:
        params = build_model(model_cfg, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    result = TrainResult(params=params, log_lines=[LOG_HEADER], epoch_lines=["epoch\tlr\tl_cls\tl_local\tl_global\ttotal\tval_acc"])
    step = 0
    n = len(train_clips)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.optim)
        order = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = [train_clips[i] for i in order[start : start + cfg.batch_size]]
            rgb, depth, labels = make_batch(batch, cfg, rng, train=True)
            vals, _ = train_step(params, rgb, depth, labels, cfg)
            if not all(math.isfinite(v) for v in vals):
                raise NumericError(f"non-finite loss at step {step} (epoch {epoch}): {vals}")
            sgd_step(params, cfg.optim, lr)
            result.log_lines.append("\t".join([str(step), str(epoch), _fmt(lr)] + [_fmt(v) for v in vals]))
            sums += vals
            batches += 1
            step += 1
        val_acc = accuracy(params, val_clips, cfg) if val_clips else float("nan")
        means = sums / max(batches, 1)
        result.epoch_lines.append("\t".join([str(epoch), _fmt(lr)] + [_fmt(v) for v in means] + [_fmt(val_acc)]))
        logger.info("epoch %d lr %.3g loss %.4f val %.3f", epoch, lr, means[3], val_acc)
        if val_clips and not (val_acc <= result.best_val):
            result.best_val, result.best_epoch = val_acc, epoch
            result.best_params = _snapshot(params)
    result.train_acc = accuracy(params, train_clips, cfg)
    return result


def _snapshot(params: Parameters) -> Parameters:
    out = Parameters(params.config)
    for n, t in params.items():
        out.add(n, t.data.copy())
    return out


def write_run(result: TrainResult, cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.tsv").write_text("\n".join(result.log_lines) + "\n")
    (out_dir / "epochs.tsv").write_text("\n".join(result.epoch_lines) + "\n")
    (out_dir / "config.txt").write_text("\n".join(cfg.to_lines()) + "\n")
    extra = {"seed": cfg.seed, "epochs": cfg.epochs}
    save_checkpoint(result.params, out_dir / "final.ckpt", extra)
    best = result.best_params if result.best_params is not None else result.params
    save_checkpoint(best, out_dir / "best.ckpt", dict(extra, best_epoch=result.best_epoch))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    scores: np.ndarray  # (num_videos, CLS) averaged softmax

    def lines(self) -> list[str]:
        out = [f"top1\t{self.accuracy!r}"]
        for i, row in enumerate(self.confusion):
            out.append(f"true{i}\t" + "\t".join(str(int(v)) for v in row))
        return out


def eval_positions(crops: int) -> tuple[str, ...]:
    if crops == 1:
        return ("center",)
    if crops == 3:
        return ("first", "center", "last")
    raise ValueError(f"supported crop counts are 1 and 3, got {crops}")


def _views(clip: VideoClip, cfg: RunConfig, rng: np.random.Generator, crops: int, clips: int) -> np.ndarray:
    """All (crop, clip) views of one video: (crops*clips, T, 3, C, C) cut from frames scaled to the eval size."""
    size = cfg.eval_crop
    frames = resize_short_side(clip.frames, cfg.eval_size)
    h, w = frames.shape[-2:]
    views = []
    index_sets = [sample_segments(clip.length, cfg.sampler, rng) if clips > 1 else center_segments(clip.length, cfg.sampler) for _ in range(clips)]
    for pos in eval_positions(crops):
        if pos == "center":
            y0, x0 = crop_box(h, w, size, "center")
        elif h <= w:
            y0, x0 = crop_box(h, w, size, "left" if pos == "first" else "right")
        else:
            y0, x0 = crop_box(h, w, size, "top" if pos == "first" else "bottom")
        for idx in index_sets:
            views.append(frames[idx, :, y0 : y0 + size, x0 : x0 + size])
    return np.stack(views).astype(np.float32)


def evaluate(
    params: Parameters, clips: Sequence[VideoClip], cfg: RunConfig, crops: Optional[int] = None, n_clips: Optional[int] = None
) -> EvalReport:
    """Averaged softmax over crops x sampled clips per video; MSD is stripped first."""
    crops = cfg.eval.crops if crops is None else crops
    n_clips = cfg.eval.clips if n_clips is None else n_clips
    params = strip_msd(params)
    k = params.config.num_classes
    rng = np.random.default_rng([cfg.seed, 3])
    scores = np.zeros((len(clips), k))
    confusion = np.zeros((k, k), dtype=np.int64)
    with no_grad():
        for i, clip in enumerate(clips):
            views = _views(clip, cfg, rng, crops, n_clips)
            probs = ops.softmax(forward_classify(params, Tensor(views)), axis=1).data
            scores[i] = probs.mean(axis=0)
            confusion[clip.label, int(scores[i].argmax())] += 1
    acc = float(np.trace(confusion) / max(len(clips), 1))
    return EvalReport(acc, confusion, scores)


# ---------------------------------------------------------------------------
# gradient checks


def gradcheck_suite(seed: int = 0, op_tol: float = 1e-5, e2e_tol: float = 1e-4, network: bool = True) -> list[GradCheckReport]:
    """Finite-difference checks of every differentiable op and, unless ``network`` is off, the toy network end to end."""
    rng = np.random.default_rng(seed)
    reports = []
    with precision("fp64"):

        def T(*shape):
            return Tensor(rng.standard_normal(shape))

        target = rng.random((2, 1, 4, 4))
        cases = [
            ("conv2d", lambda x, w, b: ops.conv2d(x, w, b, 1, 1), [T(2, 3, 6, 6), T(4, 3, 3, 3), T(4)]),
            ("conv2d_stride2", lambda x, w, b: ops.conv2d(x, w, b, 2, 1), [T(1, 2, 7, 6), T(3, 2, 3, 3), T(3)]),
            ("conv_transpose2d", lambda x, w, b: ops.conv_transpose2d(x, w, b, 2, 1), [T(1, 3, 4, 4), T(3, 2, 4, 4), T(2)]),
            ("conv1d_temporal", lambda x, w, b: ops.conv1d_temporal(x, w, b), [T(2, 3, 5), T(3, 3, 3), T(3)]),
            ("conv3d", lambda x, w, b: ops.conv3d(x, w, b), [T(1, 1, 3, 4, 4), T(1, 1, 3, 3, 3), T(1)]),
            ("avg_pool_spatial", ops.avg_pool_spatial, [T(2, 3, 4, 5)]),
            ("avg_pool_channel", ops.avg_pool_channel, [T(1, 2, 3, 4, 4)]),
            ("bilinear_resize", lambda x: ops.bilinear_resize(x, 3, 5), [T(2, 1, 8, 6)]),
            ("max_pool2d", ops.max_pool2d, [T(1, 2, 6, 5)]),
            ("sigmoid", ops.sigmoid, [T(3, 4)]),
            ("relu", ops.relu, [Tensor(np.sign(rng.standard_normal((3, 4))) * (0.1 + rng.random((3, 4))))]),
            ("softmax", lambda x: ops.softmax(x, 1), [T(3, 5)]),
            ("log_softmax", lambda x: ops.log_softmax(x, 1), [T(3, 5)]),
            ("fully_connected", ops.fully_connected, [T(3, 5), T(4, 5), T(4)]),
            ("add_broadcast", ops.add, [T(2, 3, 4, 1, 1), T(2, 3, 1, 4, 4)]),
            ("mul_broadcast", ops.mul, [T(2, 3, 4, 1, 1), T(2, 3, 1, 4, 4)]),
            ("sub", ops.sub, [T(3, 4), T(3, 4)]),
            ("scale", lambda x: ops.scale(x, -2.5), [T(3, 4)]),
            ("temporal_shift", lambda x: ops.temporal_shift(x, 0.25), [T(1, 3, 8, 2, 2)]),
            ("cross_entropy", lambda x: losses.cross_entropy(x, [0, 3, 1]), [T(3, 4)]),
            ("mse", lambda p: losses.mse(p, target), [T(2, 1, 4, 4)]),
        ]
        for name, fn, inputs in cases:
            reports.append(grad_check(fn, inputs, tol=op_tol, name=name))

        acfg = action.ActionConfig(channels=16, segments=2, reduce_ratio=4)
        ap = {k: Tensor(v) for k, v in action.init_params(acfg, rng, np.float64).items()}
        for k in ap:
            ap[k].data = ap[k].data + 0.1 * rng.standard_normal(ap[k].shape)
        names = list(ap)
        x = T(1, 2, 16, 8, 8)

        def block(x, *ws):
            return action.action_forward(x, dict(zip(names, ws)), acfg)

        reports.append(grad_check(block, [x] + [ap[k] for k in names], tol=op_tol, names=["x"] + names, name="action_block", max_entries=2048))
        if network:
            reports.append(gradcheck_network(seed, e2e_tol))
    return reports


def gradcheck_network(seed: int = 0, tol: float = 1e-4) -> GradCheckReport:
    """Total three-term loss of the toy network (widths 8..64, input 32, T=2) against finite differences."""
    with precision("fp64"):
        cfg = ModelConfig(t=2, num_classes=3, widths=(8, 16, 32, 64), input_size=32, reduce_ratio=4)
        params = build_model(cfg, seed, dtype=np.float64)
        rng = np.random.default_rng([seed, 9])
        for n, t in params.items():
            if n.endswith(".b"):
                t.data = 0.05 * rng.standard_normal(t.shape)
        clip = rng.random((1, 2, 3, 32, 32))
        depth = rng.random((2, 1, 32, 32))
        labels = np.array([1])
        weights = losses.LossWeights(1.0, 1.0, 0.01)
        names = params.names()

        def loss_fn(x, *ws):
            for n, wt in zip(names, ws):
                params.tensors[n] = wt
            logits, masks = forward_with_msd(params, x)
            local_t, global_t = depth_targets(depth)
            return losses.total_loss(
                losses.cross_entropy(logits, labels),
                losses.mse_local(masks.local, local_t),
                losses.mse_global(masks.global_, global_t),
                weights,
            )

        inputs = [Tensor(clip)] + [params[n] for n in names]
        return grad_check(loss_fn, inputs, tol=tol, names=["clip"] + names, name="network_end_to_end", max_entries=64)


# ---------------------------------------------------------------------------
# mask export


def export_masks(params: Parameters, clip: VideoClip, cfg: RunConfig, out_dir: Path, prefix: str = "clip") -> list[Path]:
    """Write per sampled frame: RGB (PPM), depth target, local and global masks (PGM).

    Files are ``{prefix}_f{k:02d}_{rgb.ppm,depth.pgm,local.pgm,global.pgm}``.
    """
    if not params.has_msd():
        raise ValueError("mask export needs the multi-scale decoder, but this checkpoint has it stripped")
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb, depth, _ = make_batch([clip], cfg, None, train=False)
    with no_grad():
        _, masks = forward_with_msd(params, Tensor(rgb))
    written = []
    for k in range(cfg.model.t):
        base = out_dir / f"{prefix}_f{k:02d}"
        files = {
            "rgb.ppm": lambda p: export_ppm(rgb[0, k], p),
            "depth.pgm": lambda p: export_pgm(depth[k], p),
            "local.pgm": lambda p: export_pgm(np.clip(masks.local.data[k], 0, 1), p),
            "global.pgm": lambda p: export_pgm(np.clip(masks.global_.data[k], 0, 1), p),
        }
        for suffix, write in files.items():
            path = Path(f"{base}_{suffix}")
            write(path)
            written.append(path)
    return written


def with_model(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **changes))
