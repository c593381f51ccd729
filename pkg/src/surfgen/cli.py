"""Command-line interface for texture generation, rendering and evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial batch failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from surfgen.dataset import (
    DatasetConfig,
    TextureRandomization,
    desk_scale_config,
    filter_and_dilate_masks,
    generate_dataset,
    generate_texture_instance,
    make_stand_in_exemplar,
    paper_scale_config,
    sample_texture_params,
)
from surfgen.defects import sample_defect_set, specs_from_json, default_defect_specs
from surfgen.grid import (
    FieldStats,
    GridError,
    load_topography,
    read_grid,
    write_grid,
)
from surfgen.metrics import evaluate_directories
from surfgen.milling import MillingParams, generate_milling
from surfgen.render import encode_image, render_annotation, render_image, scene_from_json
from surfgen.sandblast import SandblastParams, generate_sandblast

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="surfgen",
                description="Synthetic surface-inspection dataset toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("gen-texture", help="generate one texture height field")
    t.add_argument("--finish", required=True,
                   choices=["sandblasted", "parallel", "spiral"])
    t.add_argument("--rows", type=int, default=512)
    t.add_argument("--cols", type=int, default=512)
    t.add_argument("--spacing-mm", type=float, default=0.0061)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--params", help="milling parameter JSON file")
    t.add_argument("--randomize", action="store_true",
                   help="draw parameters from the randomization sets")
    t.add_argument("--exemplar", help="topography input for sandblasting "
                                      "(grid-container or xyz)")
    t.add_argument("--target-mean", type=float, default=0.0)
    t.add_argument("--target-std", type=float, default=0.003)
    t.add_argument("--out", required=True)

    d = sub.add_parser("gen-defects", help="sample a defect instance set")
    d.add_argument("--spec", help="defect spec JSON (defaults to the reference table)")
    d.add_argument("--face-width-mm", type=float, default=20.0)
    d.add_argument("--face-height-mm", type=float, default=20.0)
    d.add_argument("--distribution", choices=["uniform", "normal"], default="uniform")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)

    r = sub.add_parser("render", help="render a scene description")
    r.add_argument("--scene", required=True)
    r.add_argument("--spp", type=int, default=64)
    r.add_argument("--bounces", type=int, default=4)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--label", help="also write the annotation pass here")

    ds = sub.add_parser("dataset", help="generate a full dataset")
    ds.add_argument("--scale", choices=["desk", "paper"], default="desk")
    ds.add_argument("--config", help="JSON overrides for the scale defaults")
    ds.add_argument("--out-dir", required=True)
    ds.add_argument("--seed", type=int, default=0)
    ds.add_argument("--dry-run", action="store_true",
                    help="write the manifest only, no rendering")

    e = sub.add_parser("evaluate", help="real-vs-synthetic similarity report")
    e.add_argument("--real-dir", required=True)
    e.add_argument("--synth-dir", required=True)
    e.add_argument("--masks-dir")
    e.add_argument("--report-out")

    m = sub.add_parser("masks", help="visibility-filter and dilate a label mask")
    m.add_argument("--image", required=True)
    m.add_argument("--mask", required=True)
    m.add_argument("--threshold", type=float, default=0.05)
    m.add_argument("--dilate-px", type=int, default=1)
    m.add_argument("--out", required=True)
    return p


def _cmd_gen_texture(args) -> int:
    if args.finish == "sandblasted":
        if args.exemplar:
            path = Path(args.exemplar)
            exemplar = read_grid(path) if path.suffix == ".grid" \
                else load_topography(path)
        else:
            exemplar = make_stand_in_exemplar(512, 512, args.spacing_mm, args.seed)
        patch = min(args.rows, args.cols, exemplar.rows, exemplar.cols)
        params = SandblastParams(
            out_rows=args.rows, out_cols=args.cols,
            target_spacing_mm=max(args.spacing_mm, exemplar.spacing_mm),
            patch_rows=patch, patch_cols=patch, overlap_px=max(4, patch // 4),
            seed=args.seed)
        field = generate_sandblast(exemplar, params)
    else:
        base = MillingParams.from_json(args.params) if args.params else MillingParams()
        base = MillingParams(**{**base.__dict__,
                                "path_mode": args.finish, "seed": args.seed})
        if args.randomize:
            base = sample_texture_params(base, TextureRandomization(), args.seed)
        stats = FieldStats(args.target_mean, args.target_std ** 2,
                           args.target_mean - 10 * args.target_std,
                           args.target_mean + 10 * args.target_std)
        field = generate_milling(stats, base, args.rows, args.cols, args.spacing_mm)
    write_grid(args.out, field)
    print(f"wrote {args.out}: {field.rows}x{field.cols} @ {field.spacing_mm} mm")
    return EXIT_OK


def _cmd_gen_defects(args) -> int:
    specs = specs_from_json(args.spec) if args.spec else default_defect_specs()
    insts = sample_defect_set(specs, args.face_width_mm, args.face_height_mm,
                              args.distribution, args.seed)
    payload = [{k: v for k, v in inst.__dict__.items()
                if k not in ("tool", "patch_center", "polyline")}
               for inst in insts]
    Path(args.out).write_text(json.dumps(payload, indent=2))
    print(f"wrote {args.out}: {len(insts)} instances")
    return EXIT_OK


def _cmd_render(args) -> int:
    scene = scene_from_json(args.scene)
    linear, _ = render_image(scene, args.spp, args.bounces, args.seed)
    Image.fromarray(encode_image(linear, scene.exposure)).save(args.out)
    print(f"wrote {args.out}")
    if args.label:
        labels, _ = render_annotation(scene)
        Image.fromarray(labels).save(args.label)
        print(f"wrote {args.label}")
    return EXIT_OK


def _cmd_dataset(args) -> int:
    config = desk_scale_config(args.seed) if args.scale == "desk" \
        else paper_scale_config(args.seed)
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        config = DatasetConfig(**{**_config_fields(config), **overrides})
    manifest = generate_dataset(config, args.out_dir, args.scale,
                                dry_run=args.dry_run)
    n_fail = len(manifest["failures"])
    print(f"{manifest['counts']['images']} images "
          f"({manifest['counts']['defective_images']} defective), "
          f"{n_fail} failures -> {args.out_dir}")
    return EXIT_PARTIAL if n_fail else EXIT_OK


def _config_fields(config: DatasetConfig) -> dict:
    out = dict(config.__dict__)
    return out


def _cmd_evaluate(args) -> int:
    report = evaluate_directories(args.real_dir, args.synth_dir, args.masks_dir)
    print(report.to_table())
    if args.report_out:
        Path(args.report_out).write_text(report.to_json())
        print(f"wrote {args.report_out}")
    return EXIT_OK


def _cmd_masks(args) -> int:
    image = np.asarray(Image.open(args.image).convert("L"), dtype=np.float64)
    mask = np.asarray(Image.open(args.mask), dtype=np.uint8)
    out = filter_and_dilate_masks(image, mask, args.threshold, args.dilate_px)
    Image.fromarray(out.astype(np.uint8)).save(args.out)
    print(f"wrote {args.out}: {int((out > 0).sum())} labeled pixels")
    return EXIT_OK


_COMMANDS = {
    "gen-texture": _cmd_gen_texture,
    "gen-defects": _cmd_gen_defects,
    "render": _cmd_render,
    "dataset": _cmd_dataset,
    "evaluate": _cmd_evaluate,
    "masks": _cmd_masks,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (GridError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
