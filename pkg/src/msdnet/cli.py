"""Command-line entry point: ``msdnet <command> [options]``.

Commands::

    gen-data      write train/val clip sets and a manifest
    train         train a model, write metrics and checkpoints
    eval          multi-crop, multi-clip evaluation of a checkpoint
    gradcheck     finite-difference checks of every op and the toy network
    export-masks  dump RGB, depth target and decoder masks for one clip

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import engine
from .config import RunConfig, load_config
from .data import read_clipset, write_clipset
from .network import load_checkpoint
from .serialize import FormatError
from .tensor import ConfigError, corrupt_backward

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config override (repeatable)")
    p.add_argument("--data", help="data directory (default from config)")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--msd", choices=("on", "off"), help="attach the multi-scale decoders")
    p.add_argument("--lambda-local", type=float)
    p.add_argument("--lambda-global", type=float)
    p.add_argument("--binarize-threshold", type=float, help="binarise depth targets at this 8-bit level")
    p.add_argument("--sampler", choices=("uniform", "dense"))


def build_parser() -> argparse.ArgumentParser:
    # argparse exits with 2 on bad usage, which already matches the config error code
    parser = argparse.ArgumentParser(prog="msdnet", description="Multi-task RGB gesture recognition with depth-supervised decoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic RGB-D clip sets")
    _common(p)
    p.add_argument("--force", action="store_true", help="overwrite existing output")

    p = sub.add_parser("train", help="train a model")
    _common(p)
    _model_flags(p)
    p.add_argument("--out", help="run directory (default from config)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the val split")
    _common(p)
    _model_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--crops", type=int, help="crops per frame (1 or 3)")
    p.add_argument("--clips", type=int, help="sampled clips per video")
    p.add_argument("--split", choices=("train", "val"), default="val")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    p.add_argument("--op-tol", type=float, default=1e-5)
    p.add_argument("--e2e-tol", type=float, default=1e-4)
    p.add_argument("--no-network", action="store_true", help="skip the end-to-end network check")
    p.add_argument("--corrupt-backward", metavar="OP", help=argparse.SUPPRESS)

    p = sub.add_parser("export-masks", help="write per-frame RGB, depth and decoder masks")
    _common(p)
    _model_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", type=int, default=0, help="clip index in the split")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--out", required=True)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    values: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    flag_keys = {
        "data": "data_dir",
        "out": "out_dir",
        "epochs": "epochs",
        "lambda_local": "model.lambda_local",
        "lambda_global": "model.lambda_global",
        "binarize_threshold": "binarize_threshold",
        "sampler": "sampler.mode",
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = str(value)
    if getattr(args, "msd", None) is not None:
        values["model.msd_enabled"] = "true" if args.msd == "on" else "false"
    if args.seed is not None:
        values["gen.seed" if args.command == "gen-data" else "seed"] = str(args.seed)
    return values


def _split_path(cfg: RunConfig, split: str) -> Path:
    return Path(cfg.data_dir) / f"{split}.clps"


def _load_split(cfg: RunConfig, split: str):
    path = _split_path(cfg, split)
    if not path.exists():
        raise FileNotFoundError(f"missing {path}; run gen-data first")
    return read_clipset(path)


def cmd_gen_data(cfg: RunConfig, force: bool) -> int:
    root = Path(cfg.data_dir)
    outputs = [_split_path(cfg, "train"), _split_path(cfg, "val"), root / "manifest.txt"]
    existing = [p for p in outputs if p.exists()]
    if existing and not force:
        raise FileExistsError(f"{existing[0]} exists; pass --force to overwrite")
    root.mkdir(parents=True, exist_ok=True)
    manifest = []
    for split in ("train", "val"):
        clips = cfg.gen.generate(split)
        path = _split_path(cfg, split)
        write_clipset(path, clips)
        manifest += [f"{path.name}#{i}\t{c.label}" for i, c in enumerate(clips)]
        print(f"{split}: {len(clips)} clips -> {path}")
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return EXIT_OK


def cmd_train(cfg: RunConfig, force: bool) -> int:
    out = Path(cfg.out_dir)
    if (out / "metrics.tsv").exists() and not force:
        raise FileExistsError(f"{out} already holds a run; pass --force to overwrite")
    train_clips = _load_split(cfg, "train")
    val_clips = _load_split(cfg, "val")
    result = engine.train(cfg, train_clips, val_clips)
    engine.write_run(result, cfg, out)
    print(f"train accuracy {result.train_acc:.4f}; best val {result.best_val:.4f} at epoch {result.best_epoch}")
    print(f"run written to {out}")
    return EXIT_OK


def _checkpoint(cfg: RunConfig, args: argparse.Namespace):
    """Load ``--checkpoint``; its architecture is checked only when the user set model keys."""
    explicit = args.config is not None or any(s.startswith("model.") for s in args.set)
    params, _ = load_checkpoint(args.checkpoint, expect=cfg.model if explicit else None)
    return params, dataclasses.replace(cfg, model=params.config)


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    params, cfg = _checkpoint(cfg, args)
    clips = _load_split(cfg, args.split)
    report = engine.evaluate(params, clips, cfg, args.crops, args.clips)
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args: argparse.Namespace) -> int:
    seed = cfg.seed
    if args.corrupt_backward:
        with corrupt_backward(args.corrupt_backward, 1.5):
            reports = engine.gradcheck_suite(seed, args.op_tol, args.e2e_tol, not args.no_network)
    else:
        reports = engine.gradcheck_suite(seed, args.op_tol, args.e2e_tol, not args.no_network)
    for r in reports:
        print(r.summary())
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(reports)} checks passed")
    return EXIT_OK


def cmd_export_masks(cfg: RunConfig, args: argparse.Namespace) -> int:
    params, cfg = _checkpoint(cfg, args)
    clips = _load_split(cfg, args.split)
    if not 0 <= args.clip < len(clips):
        raise ConfigError(f"clip index {args.clip} out of range for {len(clips)} clips")
    written = engine.export_masks(params, clips[args.clip], cfg, Path(args.out), prefix=f"{args.split}{args.clip:03d}")
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.force)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args)
        return cmd_export_masks(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except engine.NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # e.g. exporting masks from a checkpoint whose decoders were stripped
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
