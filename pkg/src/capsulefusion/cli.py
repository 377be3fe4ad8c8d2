#!/usr/bin/env python
"""
capsulefusion: command-line entry point

Subcommands:
  synth       write the synthetic ten-class dataset and its manifest
  pretrain    pretrain one U-Net per configured corruption; select the best when there are several
  select      pick the winning pretext from existing report files into <output_dir>/pretrain/selection.json
  train       train one variant (or all four) and report on the validation split
  eval        score a saved classifier checkpoint on a manifest split
  gradcheck   finite-difference check of every differentiable op and a small full pipeline

Usage (from project root):
  capsulefusion synth --config configs/run.smoke.yaml
  capsulefusion pretrain --config configs/run.smoke.yaml
  capsulefusion train --config configs/run.smoke.yaml --variant all
  capsulefusion eval --config configs/run.smoke.yaml --checkpoint runs/smoke/train/fusion/model.ckpt
  capsulefusion gradcheck

Common options:
  --config PATH           YAML/JSON run config, or a profile name from configs/paths.yaml
  --out DIR               output directory; every artifact lands under it
  --seed N                run seed
  --set KEY=VALUE         override any config key, e.g. --set train.batch_size=8 (repeatable)
  --log-level LEVEL       logging level (default: CAPSULEFUSION_LOG_LEVEL)

Exit codes: 0 success, 2 config, 3 I/O or data, 4 training divergence, 5 gradient check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import gradsuite
from .config import LOG_LEVEL, RunConfig, load_run_config, save_run_config
from .data import DatasetManifest, ImageLoader, generate_synthetic, load_manifest, split
from .errors import CapsuleFusionError
from .metrics import confusion, render, report, variant_table
from .models import VariantKind, build_unet
from .training import (
    CLASSIFIER_COLUMNS,
    PRETRAIN_COLUMNS,
    PretextReport,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    pretrain,
    save_checkpoint,
    select_pretext,
    train_classifier,
    write_curve,
)

log = logging.getLogger("capsulefusion.cli")

VARIANT_CHOICES = [v.value for v in VariantKind] + ["all"]
SPLITS = ("train", "val", "all")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# ---------- config and data ----------

def resolve_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides += [f"seed={args.seed}", f"train.seed={args.seed}"]
    config = load_run_config(args.config, overrides)
    if args.out is not None:
        config = replace(config, output_dir=Path(args.out))
    return config


def prepare_manifest(config: RunConfig, regenerate: bool = False) -> DatasetManifest:
    """The configured manifest; synthetic runs generate their dataset on first use."""
    if config.data.is_synthetic and (regenerate or not config.manifest_path.exists()):
        generate_synthetic(config.synthetic_spec, config.synthetic_dir)
    return load_manifest(config.manifest_path, config.image_root)


def prepare_splits(config: RunConfig) -> tuple[DatasetManifest, DatasetManifest]:
    manifest = prepare_manifest(config)
    train, val = split(manifest, config.data.val_fraction, config.seed)
    log.info("Split %d images into %d train / %d validation", len(manifest), len(train), len(val))
    return train, val


def _write_json(data, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _write_report(rep, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(render(rep, "json"), encoding="utf-8")
    (out_dir / "report.txt").write_text(render(rep, "text_table"), encoding="utf-8")


# ---------- commands ----------

def cmd_synth(args) -> int:
    config = resolve_config(args)
    if not config.data.is_synthetic:
        log.warning("data.manifest is set; writing the synthetic dataset to %s anyway", config.synthetic_dir)
    manifest = generate_synthetic(config.synthetic_spec, config.synthetic_dir)
    present = sum(1 for c in manifest.counts if c > 0)
    print(f"{len(manifest)} images, {present} classes")
    return 0


def cmd_pretrain(args) -> int:
    config = resolve_config(args)
    out_dir = config.output_dir / "pretrain"
    save_run_config(config, config.output_dir / "config.yaml")
    train, val = prepare_splits(config)
    loader = ImageLoader(config.data.image_size)

    reports = []
    for pretext in config.pretexts:
        kind_dir = out_dir / pretext.kind.value
        unet = build_unet(config.unet, config.seed)
        checkpoint, rep = pretrain(unet, train, val, pretext, config.train, loader)
        save_checkpoint(checkpoint, kind_dir / "unet.ckpt")
        write_curve(rep.curve, kind_dir / "curve.csv", PRETRAIN_COLUMNS)
        rep.save(kind_dir / "report.json")
        print(f"{pretext.kind.value}: val MSE {rep.final_val_mse:.6f} (PSNR {rep.final_val_psnr:.2f} dB), "
              f"corrupted-input MSE {rep.baseline_mse:.6f}")
        reports.append(rep)

    if len(reports) >= 2:
        record = select_pretext(reports)
        record.save(out_dir / "selection.json")
        print(f"selected: {record.winner.value}")
    return 0


def cmd_select(args) -> int:
    reports = [PretextReport.load(p) for p in args.reports]
    record = select_pretext(reports)
    out_dir = resolve_config(args).output_dir / "pretrain"
    record.save(out_dir / "selection.json")
    print(f"selected: {record.winner.value}")
    for kind, mse in record.compared.items():
        print(f"  {kind:<16} {mse:.6f}")
    return 0


def _default_pretrained(config: RunConfig) -> Path | None:
    """Winner of an earlier ``pretrain`` run in the same output directory, if any."""
    selection = config.output_dir / "pretrain" / "selection.json"
    if selection.exists():
        winner = json.loads(selection.read_text(encoding="utf-8"))["winner"]
        path = config.output_dir / "pretrain" / winner / "unet.ckpt"
    elif len(config.pretexts) == 1:
        path = config.output_dir / "pretrain" / config.pretexts[0].kind.value / "unet.ckpt"
    else:
        return None
    return path if path.exists() else None


def cmd_train(args) -> int:
    config = resolve_config(args)
    if args.freeze_encoder is not None:
        config = config.with_fusion(freeze_encoder=args.freeze_encoder)
    if args.variant == "all":
        variants = list(VariantKind)
    else:
        variants = [VariantKind.parse(args.variant or config.fusion.variant)]
    out_dir = config.output_dir / "train"
    save_run_config(config, config.output_dir / "config.yaml")

    pretrained_path = Path(args.pretrained) if args.pretrained else _default_pretrained(config)
    pretrained = load_checkpoint(pretrained_path, expected_kind="unet") if pretrained_path else None
    if pretrained_path:
        log.info("Using pretrained U-Net %s", pretrained_path)

    train, val = prepare_splits(config)
    loader = ImageLoader(config.data.image_size)
    accuracies = []
    for variant in variants:
        fusion = replace(config.fusion, variant=variant)
        result = train_classifier(fusion, config.unet, config.backbone, train, val, config.train,
                                  pretrained=pretrained if fusion.needs_unet else None,
                                  image_size=config.data.image_size, loader=loader)
        variant_dir = out_dir / variant.value
        save_checkpoint(result.checkpoint, variant_dir / "model.ckpt")
        write_curve(result.curve, variant_dir / "curve.csv", CLASSIFIER_COLUMNS)
        labels, predictions = evaluate(result.model, val, config.train.batch_size, loader)
        rep = report(confusion(labels, predictions))
        _write_report(rep, variant_dir)
        meta = result.checkpoint.metadata
        print(f"{variant.title}: best epoch {meta['epoch']}, val accuracy {rep.accuracy:.3f}, "
              f"balanced accuracy {rep.balanced_accuracy:.3f}")
        accuracies.append((variant, rep.accuracy))

    if args.variant == "all":
        (out_dir / "variants.txt").write_text(
            variant_table([(v.title, acc) for v, acc in accuracies]), encoding="utf-8"
        )
        _write_json({v.value: acc for v, acc in accuracies}, out_dir / "variants.json")
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    checkpoint = load_checkpoint(args.checkpoint, expected_kind="fused")
    model, image_size = model_from_checkpoint(checkpoint)
    if args.manifest:
        manifest = load_manifest(args.manifest, args.root)
    else:
        manifest = prepare_manifest(config)
        if args.split != "all":
            train, val = split(manifest, config.data.val_fraction, config.seed)
            manifest = train if args.split == "train" else val
    labels, predictions = evaluate(model, manifest, config.train.batch_size, ImageLoader(image_size))
    rep = report(confusion(labels, predictions))
    name = args.name or Path(args.checkpoint).parent.name
    out_dir = config.output_dir / "eval" / name
    _write_report(rep, out_dir)
    print(render(rep, "text_table"), end="")
    log.info("Wrote report to %s", out_dir)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradsuite.run_suite(seed=args.seed or 0, tolerance=args.tolerance,
                                  include_pipeline=not args.no_pipeline, only=args.only)
    print(gradsuite.format_results(results), end="")
    gradsuite.check_results(results)
    return 0


# ---------- parser ----------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--set", action="append", metavar="KEY=VALUE")
    common.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=LOG_LEVEL)

    ap = argparse.ArgumentParser(prog="capsulefusion", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common]).set_defaults(func=cmd_synth)
    sub.add_parser("pretrain", parents=[common]).set_defaults(func=cmd_pretrain)

    p = sub.add_parser("select", parents=[common])
    p.add_argument("reports", nargs="+", help="pretext report JSON files")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--variant", default=None, metavar="{" + ",".join(VARIANT_CHOICES) + "}")
    p.add_argument("--pretrained", default=None)
    p.add_argument("--freeze-encoder", type=parse_bool, default=None, metavar="BOOL")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None, help="score this manifest instead of a configured split")
    p.add_argument("--root", default=None, help="image root for --manifest")
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--name", default=None, help="report folder name (default: checkpoint folder)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common])
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--only", nargs="+", default=None, metavar="OP")
    p.add_argument("--no-pipeline", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level not in LOG_LEVELS:
        parser.error(f"unknown log level {args.log_level!r} (choose from {', '.join(LOG_LEVELS)})")
    logging.basicConfig(level=args.log_level, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CapsuleFusionError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
