#!/usr/bin/env python
"""
run_pipeline.py: one-command pipeline for capsulefusion

Runs (in order), each as `python -m capsulefusion <step>`:
  0) synth       (only when the config has no data.manifest)
  1) pretrain    one U-Net per configured corruption + selection.json
  2) train       --variant all → four checkpoints, four reports, variants.txt
  3) eval        the fusion checkpoint on the validation split

Stops at the first step with a non-zero exit code and exits with that code.

Usage (from project root):
  python scripts/run_pipeline.py --config configs/run.smoke.yaml --verbose
  python scripts/run_pipeline.py --config configs/run.desk.yaml --out runs/desk --skip-pretrain

Options:
  --config PATH           run config (default: configs/run.desk.yaml)
  --out DIR               output directory (default: the config's output_dir)
  --seed N                run seed
  --skip-synth            reuse an existing synthetic dataset
  --skip-pretrain         train from scratch (no pretrained U-Net)
  --eval-variant NAME     variant to evaluate at the end (default: fusion)
  --verbose               stream subprocess logs live
"""
import argparse, logging, sys, subprocess, time
from pathlib import Path

import yaml

log = logging.getLogger("capsulefusion.pipeline")

DEFAULT_CONFIG = "configs/run.desk.yaml"
DEFAULT_OUT = "runs/desk"

def run_step(cmd, verbose=False):
    print(">", " ".join(cmd))
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    lines = []
    while True:
        line = proc.stdout.readline()
        if not line and proc.poll() is not None:
            break
        if line:
            lines.append(line)
            if verbose:
                print(line, end="")
    rc = proc.wait()
    return rc, "".join(lines)

def output_dir(config_path, out):
    if out:
        return Path(out)
    with open(config_path, "r", encoding="utf-8") as f:
        cfg = yaml.safe_load(f) or {}
    return Path(cfg.get("output_dir") or DEFAULT_OUT)

def uses_manifest(config_path):
    with open(config_path, "r", encoding="utf-8") as f:
        cfg = yaml.safe_load(f) or {}
    return bool((cfg.get("data") or {}).get("manifest"))

def build_steps(args, out_dir):
    """Ordered (name, argv) pairs for the requested pipeline."""
    base = [sys.executable, "-m", "capsulefusion"]
    common = ["--config", args.config, "--out", str(out_dir)]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]

    steps = []
    if not args.skip_synth and not uses_manifest(args.config):
        steps.append(("synth", base + ["synth"] + common))
    if not args.skip_pretrain:
        steps.append(("pretrain", base + ["pretrain"] + common))
    train = base + ["train"] + common + ["--variant", "all"]
    if args.skip_pretrain:
        train += ["--freeze-encoder", "false"]
    steps.append(("train", train))
    ckpt = out_dir / "train" / args.eval_variant / "model.ckpt"
    steps.append(("eval", base + ["eval"] + common + ["--checkpoint", str(ckpt)]))
    return steps

def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=DEFAULT_CONFIG)
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--skip-synth", action="store_true")
    ap.add_argument("--skip-pretrain", action="store_true")
    ap.add_argument("--eval-variant", default="fusion")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    if not Path(args.config).is_file():
        log.error("Missing config: %s", args.config)
        return 2
    out_dir = output_dir(args.config, args.out)

    start = time.time()
    print("=== capsulefusion pipeline ===")
    for name, cmd in build_steps(args, out_dir):
        rc, output = run_step(cmd, verbose=args.verbose)
        if rc != 0:
            if not args.verbose:
                print(output, end="")
            log.error("%s step failed with exit code %d", name, rc)
            return rc
        print(f"{name} step completed.")

    variants = out_dir / "train" / "variants.txt"
    if variants.exists():
        print(variants.read_text(encoding="utf-8"), end="")
    print(f"Done in {time.time() - start:.1f}s. Artifacts under {out_dir}")
    return 0

if __name__ == "__main__":
    sys.exit(main())
