"""Command-line surface tying the pipeline together.

Subcommands:
  simulate     generate scenes + detections from a world config
  train-embed  stage-1 appearance embedding training
  train-assoc  stage-2 motion + affinity training (embedding frozen)
  track        run the tracker over detection files
  baseline     run the centroid-distance baseline
  eval         score tracking results against ground truth
  gradcheck    run all finite-difference gradient suites
  ablation     train cue-ablation variants and report the metric table
  scenarios    occlusion / cross-camera behavior suites

Every command writes a manifest.json next to its outputs recording the
command line, seeds, and content digests; rerunning the same command
reproduces every data file byte for byte.

Exit codes: 0 ok, 1 failure (including gradcheck), 2 missing file,
3 schema version mismatch, 4 checkpoint/architecture mismatch,
5 invalid config.
"""

import argparse
import csv
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import affinity as aff_mod
from . import embedding as emb_mod
from . import errors
from . import experiments
from . import gradchecks
from . import metrics as metrics_mod
from . import sceneio
from .jsonutil import read_json, sha256_file, write_json
from .simulator import DetectorNoiseConfig, WorldConfig, generate_scene, simulate_detections
from .tracker import TrackerConfig, TrackingModels, centroid_baseline, run_scene


def _dataclass_from_dict(cls, data, context):
    known = {f.name for f in dataclass_fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise errors.ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    converted = dict(data)
    for f in dataclass_fields(cls):
        if f.name in converted and isinstance(converted[f.name], list):
            converted[f.name] = tuple(converted[f.name])
    return cls(**converted)


def _load_config(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing config file: {path}")
    return read_json(path)


def cmd_simulate(args):
    doc = _load_config(args.config)
    n_scenes = int(doc.get("n_scenes", 1))
    base_seed = int(doc.get("seed", 0))
    world = _dataclass_from_dict(WorldConfig, doc.get("world", {}), "world")
    detector = _dataclass_from_dict(DetectorNoiseConfig, doc.get("detector", {}), "detector")
    detector.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n_scenes):
        world_i = _dataclass_from_dict(WorldConfig, doc.get("world", {}), "world")
        world_i.seed = base_seed + i
        scene = generate_scene(world_i)
        dets = simulate_detections(scene, detector, seed=base_seed + 100000 + i)
        sceneio.save_scene(out / f"scene_{i:04d}.json", scene)
        sceneio.save_detections(out / f"detections_{i:04d}.json", scene.scene_id, dets)
    sceneio.write_manifest(
        out,
        "simulate",
        {"config": str(args.config), "out": str(args.out)},
        {"base_seed": base_seed},
        inputs={"config": sha256_file(args.config)},
        configs=doc,
    )
    return errors.EXIT_OK


def _load_scenes(directory):
    paths = sceneio.scene_files(directory)
    if not paths:
        raise FileNotFoundError(f"no scene files under {directory}")
    return [sceneio.load_scene(p) for p in paths]


def _train_val_split(scenes, val_fraction=0.25):
    n_val = max(1, int(round(len(scenes) * val_fraction)))
    if len(scenes) < 2:
        raise errors.ConfigError("need at least 2 scenes to form a validation split")
    return scenes[:-n_val], scenes[-n_val:]


def _write_log_csv(path, log, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in log:
            writer.writerow([rec[c] for c in columns])


def cmd_train_embed(args):
    scenes = _load_scenes(args.data)
    train, val = _train_val_split(scenes)
    overrides = read_json(args.config) if args.config else {}
    cfg = _dataclass_from_dict(emb_mod.EmbeddingTrainConfig, overrides, "train-embed")
    net, log = emb_mod.train_embedding(train, val, cfg, use_box_size=not args.no_box_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    net.save(out)
    _write_log_csv(out.with_suffix(".log.csv"), log, ("epoch", "loss", "rank1"))
    sceneio.write_manifest(
        out.parent,
        "train-embed",
        {"data": str(args.data), "out": str(args.out), "no_box_size": args.no_box_size},
        {"seed": cfg.seed},
        inputs={"data": str(args.data)},
        configs=overrides,
    )
    return errors.EXIT_OK


def cmd_train_assoc(args):
    scenes = _load_scenes(args.data)
    train, val = _train_val_split(scenes)
    overrides = read_json(args.config) if args.config else {}
    cfg = _dataclass_from_dict(aff_mod.AssociationTrainConfig, overrides, "train-assoc")
    embedding_net = None
    if cfg.use_appearance:
        if not args.embed:
            raise errors.ConfigError("appearance cue enabled: pass --embed CKPT")
        if not Path(args.embed).exists():
            raise FileNotFoundError(f"missing checkpoint: {args.embed}")
        embedding_net = emb_mod.EmbeddingNet.load(args.embed)
    encoder, affinity_net, log = aff_mod.train_association(train, val, embedding_net, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    aff_mod.save_association_checkpoint(out, encoder, affinity_net, cfg.position_scale)
    _write_log_csv(out.with_suffix(".log.csv"), log, ("epoch", "loss", "val_auc", "val_acc"))
    sceneio.write_manifest(
        out.parent,
        "train-assoc",
        {"data": str(args.data), "embed": args.embed, "out": str(args.out)},
        {"seed": cfg.seed},
        inputs={"embed": sha256_file(args.embed) if args.embed else None},
        configs=overrides,
    )
    return errors.EXIT_OK


def _tracker_config(path):
    if not path:
        return TrackerConfig()
    return _dataclass_from_dict(TrackerConfig, read_json(path), "tracker config")


def cmd_track(args):
    det_paths = sceneio.detection_files(args.detections)
    if not det_paths:
        raise FileNotFoundError(f"no detection files under {args.detections}")
    models = TrackingModels.load(args.models)
    cfg = _tracker_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in det_paths:
        scene_id, dets = sceneio.load_detections(path)
        result = run_scene(dets, models, cfg)
        name = path.name.replace("detections", "result")
        sceneio.save_result(out / name, scene_id, result)
    sceneio.write_manifest(
        out,
        "track",
        {"detections": str(args.detections), "models": str(args.models),
         "config": args.config, "out": str(args.out)},
        {},
        inputs={p.name: sha256_file(p) for p in det_paths},
    )
    return errors.EXIT_OK


def cmd_baseline(args):
    det_paths = sceneio.detection_files(args.detections)
    if not det_paths:
        raise FileNotFoundError(f"no detection files under {args.detections}")
    cfg = _tracker_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in det_paths:
        scene_id, dets = sceneio.load_detections(path)
        result = centroid_baseline(dets, max_dist=args.max_dist, cfg=cfg)
        name = path.name.replace("detections", "result")
        sceneio.save_result(out / name, scene_id, result)
    sceneio.write_manifest(
        out,
        "baseline",
        {"detections": str(args.detections), "max_dist": args.max_dist, "out": str(args.out)},
        {},
        inputs={p.name: sha256_file(p) for p in det_paths},
    )
    return errors.EXIT_OK


def cmd_eval(args):
    scenes = _load_scenes(args.gt)
    result_paths = sceneio.result_files(args.results)
    if not result_paths:
        raise FileNotFoundError(f"no result files under {args.results}")
    by_id = {}
    for path in result_paths:
        scene_id, frames = sceneio.load_result(path)
        by_id[scene_id] = frames
    missing = [s.scene_id for s in scenes if s.scene_id not in by_id]
    if missing:
        raise FileNotFoundError(f"results missing for scenes: {missing}")
    results = [by_id[s.scene_id] for s in scenes]
    report, table = metrics_mod.evaluate(scenes, results, gate=args.gate)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_mod.MetricReport.COLUMNS)
        writer.writerow([report.to_dict()[c] for c in metrics_mod.MetricReport.COLUMNS])
    write_json(out.with_suffix(".json"), report.to_dict())
    motar_path = out.parent / (out.stem + "_motar.csv")
    with open(motar_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["target_recall", "achievable", "threshold", "achieved_recall",
             "motar", "motp", "ids", "fp", "fn"]
        )
        for row in table:
            writer.writerow([row.get(k, "") for k in
                             ("target_recall", "achievable", "threshold",
                              "achieved_recall", "motar", "motp", "ids", "fp", "fn")])
    sceneio.write_manifest(
        out.parent,
        "eval",
        {"gt": str(args.gt), "results": str(args.results), "out": str(args.out)},
        {},
    )
    print(f"MOTA {report.mota:.4f}  AMOTA {report.amota:.4f}  HOTA {report.hota:.4f}  "
          f"IDS {report.ids}")
    return errors.EXIT_OK


def cmd_gradcheck(args):
    results = gradchecks.run_all()
    failed = False
    for name, value, tolerance in results:
        status = "ok" if value < tolerance else "FAIL"
        if value >= tolerance:
            failed = True
        print(f"{name:<32} max rel err {value:.3e}  (tol {tolerance:.0e})  {status}")
    return errors.EXIT_FAILURE if failed else errors.EXIT_OK


def cmd_ablation(args):
    spec = experiments.AblationSpec(
        seeds=tuple(range(args.seeds)),
        quick=args.quick,
    )
    experiments.run_ablation(spec, args.out)
    return errors.EXIT_OK


def cmd_scenarios(args):
    models = TrackingModels.load(args.models)
    report = experiments.run_scenarios(models, Path(args.out), seeds=tuple(range(args.seeds)))
    for name, rate in report.items():
        print(f"{name}: {rate:.3f}")
    return errors.EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bevtrack",
        description="BEV multi-object tracking pipeline on a synthetic benchmark",
        epilog=(
            "exit codes: 0 ok, 1 failure, 2 missing file, "
            "3 schema version mismatch, 4 checkpoint mismatch, 5 bad config"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate scenes and detections")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-embed", help="stage-1 embedding training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--no-box-size", action="store_true")
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("train-assoc", help="stage-2 association training")
    p.add_argument("--data", required=True)
    p.add_argument("--embed")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_assoc)

    p = sub.add_parser("track", help="run the tracker over detections")
    p.add_argument("--detections", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("baseline", help="centroid-distance baseline tracker")
    p.add_argument("--detections", required=True)
    p.add_argument("--max-dist", type=float, default=10.0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="evaluate results against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gate", type=float, default=2.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablation", help="cue ablation study")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("scenarios", help="occlusion / cross-camera suites")
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_scenarios)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return errors.EXIT_MISSING_FILE
    except errors.SchemaVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return errors.EXIT_SCHEMA_VERSION
    except errors.CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return errors.EXIT_CHECKPOINT_MISMATCH
    except errors.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return errors.EXIT_BAD_CONFIG
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return errors.EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
