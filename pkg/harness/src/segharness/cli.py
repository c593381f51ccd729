"""CLI: train on a generator manifest, evaluate a checkpoint, emit reports."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from segharness.data import load_manifest, manifest_samples
from segharness.metrics import TaskReport
from segharness.train import (
    REAL_CLASS_WEIGHTS,
    SYNTHETIC_CLASS_WEIGHTS,
    TrainConfig,
    evaluate,
    train_with_restarts,
)
from segharness.model import UNetResNet50


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="segharness",
                                description="defect segmentation harness")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a dataset manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--domain", choices=["synthetic", "real"], default="synthetic")
    t.add_argument("--restarts", type=int, default=5)
    t.add_argument("--max-epochs", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-pretrained", action="store_true")
    t.add_argument("--fine-tune-from", help="checkpoint to fine-tune")
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--texture", default="all")
    e.add_argument("--domains", default="Sy->Sy",
                   help="experiment row label for the report")
    e.add_argument("--report-out")

    args = p.parse_args(argv)
    if args.command == "train":
        manifest = load_manifest(args.manifest)
        weights = SYNTHETIC_CLASS_WEIGHTS if args.domain == "synthetic" \
            else REAL_CLASS_WEIGHTS
        config = TrainConfig(class_weights=weights, restarts=args.restarts,
                             max_epochs=args.max_epochs, seed=args.seed,
                             pretrained=not args.no_pretrained)
        train_samples = manifest_samples(manifest, split="train")
        val_samples = manifest_samples(manifest, split="val")
        if args.fine_tune_from:
            from segharness.train import train as train_once
            state = torch.load(args.fine_tune_from, weights_only=True)
            result = train_once(config, manifest, train_samples, manifest,
                                val_samples, fine_tune_from=state)
        else:
            result = train_with_restarts(config, manifest, train_samples,
                                         manifest, val_samples)
        torch.save(result["model"].state_dict(), args.out)
        print(f"saved {args.out}; train loss "
              f"{result['history']['train_loss'][0]:.4f} -> "
              f"{result['history']['train_loss'][-1]:.4f}")
        return 0

    manifest = load_manifest(args.manifest)
    model = UNetResNet50(pretrained=False)
    model.load_state_dict(torch.load(args.checkpoint, weights_only=True))
    samples = manifest_samples(manifest, split=args.split)
    scores = evaluate(model, manifest, samples)
    report = TaskReport()
    report.add(args.texture, args.domains, scores)
    print(report.to_table())
    if args.report_out:
        Path(args.report_out).write_text(report.to_json())
        print(f"wrote {args.report_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
