"""Command-line surface: gen-data, train, eval, infer, export-ply, gradcheck.

Log verbosity is controlled by the VOXINST_LOG environment variable
(debug/info/warning, default warning).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from .config import RunConfig
from .evaluation import write_prediction_dump, write_report
from .gradcheck import run_gradcheck, tiny_config
from .model import SegmentationModel, model_from_checkpoint
from .pointcloud import instance_colors, read_scene, write_ply
from .scenes import SceneSpec, load_dataset, write_dataset
from .train import evaluate_model, prepare_split, run_training


def _setup_logging() -> None:
    level = os.environ.get("VOXINST_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        cfg.validate()
    return cfg


def _scene_spec(cfg: RunConfig) -> SceneSpec:
    return SceneSpec(seed=cfg.seed, num_classes=cfg.num_classes,
                     instance_count=cfg.scene_instance_count,
                     points_per_instance=cfg.scene_points_per_instance,
                     background_points=cfg.scene_background_points,
                     noise_sigma=cfg.scene_noise_sigma,
                     twin_prob=cfg.scene_twin_prob)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.dataset_dir
    manifest = write_dataset(out, _scene_spec(cfg), cfg.gen_train_scenes,
                             cfg.gen_val_scenes, voxel_hint=cfg.voxel_size)
    print(f"wrote {len(manifest['splits']['train'])} train / "
          f"{len(manifest['splits']['val'])} val scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = args.out or "run"
    result = run_training(cfg, out, resume=args.resume)
    print(f"checkpoint: {result['checkpoint']}")
    print(f"log: {result['log']}")
    if result["final_eval"] is not None:
        ev = result["final_eval"]
        print(f"last eval: mAP={ev.map_all:.4f} AP50={ev.ap50:.4f} AP25={ev.ap25:.4f}")
    return 0


def cmd_eval(args) -> int:
    model, meta, _ = model_from_checkpoint(args.checkpoint)
    if args.config:
        given = RunConfig.from_yaml(args.config)
        if given.arch_hash() != meta["arch_hash"]:
            raise SystemExit("error: --config architecture does not match the checkpoint")
    dataset = load_dataset(args.dataset)
    if dataset.classes != model.cfg.num_classes:
        raise SystemExit(f"error: dataset has {dataset.classes} classes, "
                         f"checkpoint expects {model.cfg.num_classes}")
    names = dataset.val_files if args.split == "val" else dataset.train_files
    if not names:
        raise SystemExit(f"error: dataset split {args.split!r} is empty")
    scenes = prepare_split(model, dataset, names)
    report = evaluate_model(model, scenes)
    prefix = args.out or "eval_report"
    write_report(report, f"{prefix}.txt", f"{prefix}.kv")
    print(report.as_text(), end="")
    print(f"mAP={report.map_all:.4f} AP50={report.ap50:.4f} AP25={report.ap25:.4f}")
    return 0


def cmd_infer(args) -> int:
    model, _, _ = model_from_checkpoint(args.checkpoint)
    pc, _ = read_scene(args.scene)
    if pc.num_classes and pc.num_classes != model.cfg.num_classes:
        raise SystemExit(f"error: scene declares {pc.num_classes} classes, "
                         f"checkpoint expects {model.cfg.num_classes}")
    prep = model.prepare(pc)
    instances, out = model.predict_instances(prep)
    dump = args.out or (os.path.splitext(args.scene)[0] + ".preds.txt")
    write_prediction_dump(dump, os.path.basename(args.scene), out.predictions,
                          prep.part, prep.grid, model.cfg.num_classes)
    print(f"{len(instances)} instances after post-processing; dump: {dump}")
    if args.ply:
        ids = np.zeros(pc.n, dtype=np.int64)
        for rank, inst in enumerate(instances, start=1):
            ids[inst.mask & (ids == 0)] = rank
        write_ply(args.ply, pc.coords, instance_colors(ids))
        print(f"ply: {args.ply}")
    return 0


def cmd_export_ply(args) -> int:
    pc, _ = read_scene(args.scene)
    out = args.out or (os.path.splitext(args.scene)[0] + ".ply")
    if pc.instance is not None:
        colors = instance_colors(pc.instance)
    else:
        colors = (pc.colors * 255).astype(np.uint8)
    write_ply(out, pc.coords, colors)
    print(f"ply: {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = RunConfig.from_yaml(args.config) if args.config else tiny_config()
    report = run_gradcheck(cfg, progress=True)
    print(f"checked {report.checked} parameter entries; "
          f"worst relative error {report.worst[1]:.3e} at {report.worst[0]}")
    if report.passed:
        print("gradcheck PASS")
        return 0
    for name, idx, ana, fd, err in report.failures[:20]:
        print(f"FAIL {name}[{idx}]: analytic={ana:.6e} fd={fd:.6e} err={err:.3e}")
    print(f"gradcheck FAIL ({len(report.failures)} entries)")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxinst",
                                     description="desk-scale 3D instance segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--config", help="optional config to cross-check against")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on one scene file")
    p.add_argument("checkpoint")
    p.add_argument("scene")
    p.add_argument("--out")
    p.add_argument("--ply", help="write an instance-colored PLY here")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("export-ply", help="convert a scene file to PLY")
    p.add_argument("scene")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export_ply)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
