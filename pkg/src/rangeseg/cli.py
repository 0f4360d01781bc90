"""Command-line entry point: project | train | eval | topology.

Every command reads a profile plus an optional JSON config file, then
applies ``--set key=value`` (or bare ``--key=value``) overrides and an
optional ``--seed``. Commands exit 0 on success and nonzero with a
diagnostic on stderr otherwise; fixed seeds make every command
deterministic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import topology
from .config import ConfigError, RunConfig, load_config
from .evaluate import evaluate_frames, load_checkpoint_model
from .pointcloud import generate_synthetic_scene, load_kitti_scan
from .projection import project, save_index_maps, save_range_image
from .train import build_dataset, train_model


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", default="desk", choices=("desk", "paper"),
                        help="base configuration profile")
    parser.add_argument("--config", default=None, help="JSON config overlay file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (dotted path)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")


def _resolve_config(args, extra: list[str]) -> RunConfig:
    overrides = list(args.overrides)
    for item in extra:
        if item.startswith("--") and "=" in item:
            overrides.append(item[2:])
        else:
            raise ConfigError(f"unrecognized argument {item!r}")
    cfg = load_config(args.profile, args.config, overrides)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_project(args, extra: list[str]) -> int:
    cfg = _resolve_config(args, extra)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.scans:
        clouds = []
        for path in args.scans:
            try:
                clouds.append((Path(path).stem, load_kitti_scan(path)))
            except (OSError, ValueError) as exc:
                raise RuntimeError(f"failed to read scan {path}: {exc}") from exc
    else:
        clouds = []
        for index in range(args.synthetic):
            spec = dataclasses.replace(
                cfg.data.scene, rng_seed=cfg.data.scene.rng_seed + index
            )
            cloud, _ = generate_synthetic_scene(spec)
            clouds.append((f"synthetic_{index:04d}", cloud))
    if not clouds:
        raise RuntimeError("nothing to project: pass scan files or --synthetic N")
    for name, cloud in clouds:
        img = project(cloud, cfg.projection)
        image_path = out_dir / f"{name}.rimg"
        save_range_image(image_path, img)
        save_index_maps(out_dir / f"{name}.maps.npz", img)
        print(
            f"{name}: {len(cloud)} points -> {img.height}x{img.width}, "
            f"occupancy {img.occupancy():.4f}"
        )
    return 0


def cmd_train(args, extra: list[str]) -> int:
    cfg = _resolve_config(args, extra)
    train_frames, val_frames = build_dataset(cfg)
    print(
        f"training on {len(train_frames)} frames, validating on {len(val_frames)} "
        f"({cfg.optim.epochs} epochs, batch {cfg.optim.batch_size})"
    )
    result = train_model(cfg, train_frames, val_frames, args.out)
    best = result["best"]
    print(f"best validation mIoU {best['val_miou']:.4f} at epoch {best['epoch']}")
    print(f"checkpoint: {result['checkpoint']}")
    print(f"metrics: {result['metrics']}")
    return 0


def cmd_eval(args, extra: list[str]) -> int:
    cfg = _resolve_config(args, extra)
    model = load_checkpoint_model(cfg, args.checkpoint)
    _, val_frames = build_dataset(cfg)
    if not val_frames:
        raise RuntimeError("validation set is empty")
    report = evaluate_frames(model, val_frames, cfg)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_topology(args, extra: list[str]) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments {extra!r}")
    rule = topology.Rule.HD if args.rule == "hd" else topology.Rule.LITE
    rows = []
    for i in range(1, args.layers + 1):
        preds = topology.predecessors(i, rule)
        rows.append({"layer": i, "predecessors": list(preds), "in_degree": len(preds)})
    report = topology.connection_count(args.layers, rule)
    print(f"{'layer':>5}  {'in':>3}  predecessors")
    for row in rows:
        print(f"{row['layer']:>5}  {row['in_degree']:>3}  {row['predecessors']}")
    print(
        f"total connections: {report.total} (hd rule: {report.hd_total})\n"
        f"bound L + L*log(L)/5: natural {report.bound_natural:.2f} "
        f"[{'ok' if report.satisfies_natural else 'exceeded'}], "
        f"log2 {report.bound_log2:.2f} "
        f"[{'ok' if report.satisfies_log2 else 'exceeded'}]"
    )
    if args.json:
        payload = {"per_layer": rows, **report.to_dict()}
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangeseg",
        description="Range-image LiDAR semantic segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_project = sub.add_parser("project", help="project scans to range-image files")
    _add_common(p_project)
    p_project.add_argument("scans", nargs="*", help="scan files (.bin)")
    p_project.add_argument("--synthetic", type=int, default=0,
                           help="generate N synthetic scenes instead of reading scans")
    p_project.add_argument("--out", default="projected", help="output directory")
    p_project.set_defaults(handler=cmd_project)

    p_train = sub.add_parser("train", help="train the segmentation model")
    _add_common(p_train)
    p_train.add_argument("--out", default="run", help="output directory")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_eval.add_argument("--out", default=None, help="write the JSON report here")
    p_eval.set_defaults(handler=cmd_eval)

    p_topo = sub.add_parser("topology", help="inspect block connectivity rules")
    p_topo.add_argument("--layers", type=int, default=10, help="layer count L")
    p_topo.add_argument("--rule", default="lite", choices=("lite", "hd"))
    p_topo.add_argument("--json", default=None, help="write a JSON report here")
    p_topo.set_defaults(handler=cmd_topology)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.handler(args, extra)
    except (ConfigError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
