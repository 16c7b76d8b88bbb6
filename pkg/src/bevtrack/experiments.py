"""Scripted studies: cue ablations and behavior scenario suites.

The ablation trains the cue variants (full, motion+appearance without box
size, motion-only) once on a fixed training benchmark, adds the centroid
baseline, then scores every variant on freshly generated evaluation
worlds for each seed. The scenario suites script occlusions and camera
blind-wedge crossings and measure whether identities survive them.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import affinity as aff_mod
from . import embedding as emb_mod
from .jsonutil import write_json
from .metrics import evaluate, match_frames, evaluation_inputs
from .simulator import DetectorNoiseConfig, WorldConfig, generate_scene, simulate_detections
from .tracker import TrackerConfig, TrackingModels, centroid_baseline, run_scene

VARIANTS = ("full", "motion_appearance", "motion_only", "centroid")


@dataclass
class BenchmarkConfig:
    """The default desk-scale benchmark: 10 train + 2 val scenes of 16
    objects each, 3 fresh evaluation worlds per seed."""

    n_train: int = 10
    n_val: int = 2
    n_eval: int = 3
    data_seed: int = 0
    world: WorldConfig = None
    detector: DetectorNoiseConfig = None

    def __post_init__(self):
        if self.world is None:
            self.world = WorldConfig()
        if self.detector is None:
            self.detector = DetectorNoiseConfig()


def benchmark_scenes(cfg):
    train = [
        generate_scene(replace(cfg.world, seed=cfg.data_seed * 1000 + i))
        for i in range(cfg.n_train)
    ]
    val = [
        generate_scene(replace(cfg.world, seed=cfg.data_seed * 1000 + 500 + i))
        for i in range(cfg.n_val)
    ]
    return train, val


def eval_worlds(cfg, seed, world=None):
    world = world or cfg.world
    scenes = [
        generate_scene(replace(world, seed=90000 + seed * 100 + k))
        for k in range(cfg.n_eval)
    ]
    dets = [
        simulate_detections(s, cfg.detector, seed=50000 + seed * 100 + k)
        for k, s in enumerate(scenes)
    ]
    return scenes, dets


@dataclass
class AblationSpec:
    seeds: tuple = (0, 1, 2, 3, 4)
    include_appearance_only: bool = False
    quick: bool = False  # fewer epochs; for smoke runs only
    benchmark: BenchmarkConfig = None

    def __post_init__(self):
        if self.benchmark is None:
            self.benchmark = BenchmarkConfig()
        if not self.seeds:
            raise ValueError("need at least one evaluation seed")


def train_variants(spec, train_scenes, val_scenes):
    """Train every learned variant; returns {name: TrackingModels}.

    The appearance variants converge within ~24 epochs; the motion-only
    net learns the position-continuation task more slowly and gets a
    longer budget.
    """
    embed_epochs = 6 if spec.quick else 18
    assoc_epochs = 8 if spec.quick else 24
    motion_epochs = 12 if spec.quick else 96
    emb_cfg = emb_mod.EmbeddingTrainConfig(epochs=embed_epochs, seed=0)
    net_full, _ = emb_mod.train_embedding(train_scenes, val_scenes, emb_cfg)
    net_nobox, _ = emb_mod.train_embedding(
        train_scenes, val_scenes, emb_cfg, use_box_size=False
    )
    out = {}
    assoc = aff_mod.AssociationTrainConfig(epochs=assoc_epochs, seed=0)
    enc, aff, _ = aff_mod.train_association(train_scenes, val_scenes, net_full, assoc)
    out["full"] = TrackingModels(aff, enc, net_full)
    enc2, aff2, _ = aff_mod.train_association(train_scenes, val_scenes, net_nobox, assoc)
    out["motion_appearance"] = TrackingModels(aff2, enc2, net_nobox)
    assoc_m = replace(assoc, epochs=motion_epochs, use_appearance=False)
    enc3, aff3, _ = aff_mod.train_association(train_scenes, val_scenes, None, assoc_m)
    out["motion_only"] = TrackingModels(aff3, enc3, None)
    if spec.include_appearance_only:
        assoc_a = replace(assoc, use_motion=False)
        _, aff4, _ = aff_mod.train_association(train_scenes, val_scenes, net_full, assoc_a)
        out["appearance_only"] = TrackingModels(aff4, None, net_full)
    return out


def run_ablation(spec, out_dir, models=None):
    """Train (or reuse) the variants and tabulate per-seed metrics.

    Returns {variant: {"amota": [...], "amotp": [...], "ids": [...]}} with
    one entry per seed; writes report.csv and report.md under out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench = spec.benchmark
    if models is None:
        train_scenes, val_scenes = benchmark_scenes(bench)
        models = train_variants(spec, train_scenes, val_scenes)
    tracker_cfg = TrackerConfig()
    results = {name: {"amota": [], "amotp": [], "ids": []} for name in models}
    results["centroid"] = {"amota": [], "amotp": [], "ids": []}
    for seed in spec.seeds:
        scenes, dets = eval_worlds(bench, seed)
        for name, model in models.items():
            tracked = [run_scene(d, model, tracker_cfg) for d in dets]
            report, _ = evaluate(scenes, tracked)
            results[name]["amota"].append(report.amota)
            results[name]["amotp"].append(report.amotp)
            results[name]["ids"].append(report.ids)
        base = [centroid_baseline(d, 10.0, tracker_cfg) for d in dets]
        report, _ = evaluate(scenes, base)
        results["centroid"]["amota"].append(report.amota)
        results["centroid"]["amotp"].append(report.amotp)
        results["centroid"]["ids"].append(report.ids)
    _write_ablation_report(out_dir, spec, results)
    return results


def summarize(results):
    rows = {}
    for name, cols in results.items():
        rows[name] = {
            "amota_mean": float(np.mean(cols["amota"])),
            "amota_std": float(np.std(cols["amota"])),
            "amotp_mean": float(np.mean(cols["amotp"])),
            "ids_mean": float(np.mean(cols["ids"])),
        }
    return rows


def _write_ablation_report(out_dir, spec, results):
    summary = summarize(results)
    write_json(out_dir / "report.json", {"seeds": list(spec.seeds), "results": results,
                                         "summary": summary})
    lines = ["variant,amota_mean,amota_std,amotp_mean,ids_mean"]
    for name in sorted(summary):
        s = summary[name]
        lines.append(
            f"{name},{s['amota_mean']:.6f},{s['amota_std']:.6f},"
            f"{s['amotp_mean']:.6f},{s['ids_mean']:.2f}"
        )
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")
    md = ["# Cue ablation", "", "| variant | AMOTA | std | AMOTP | IDS |", "|---|---|---|---|---|"]
    order = [v for v in ("full", "motion_appearance", "appearance_only", "motion_only",
                         "centroid") if v in summary]
    for name in order:
        s = summary[name]
        md.append(
            f"| {name} | {s['amota_mean']:.3f} | {s['amota_std']:.3f} "
            f"| {s['amotp_mean']:.3f} | {s['ids_mean']:.1f} |"
        )
    (out_dir / "report.md").write_text("\n".join(md) + "\n")


def occlusion_world(base=None, seed=0):
    """Every object gets a scripted occlusion of 3-6 frames."""
    base = base or WorldConfig()
    return replace(base, occlusion_prob=1.0, occlusion_frames=(3, 6), seed=seed)


def crosscam_world(base=None, seed=0):
    """Camera rig with ~12 degree blind wedges between sectors."""
    base = base or WorldConfig()
    return replace(base, camera_fov=math.radians(48.0), occlusion_prob=0.0, seed=seed)


def _match_lookup(scene, result):
    """frame -> {gt identity -> matched pred id}."""
    gt_frames, pred_frames = evaluation_inputs(scene, result)
    matchings = match_frames(gt_frames, pred_frames)
    lookup = []
    for m in matchings:
        lookup.append({gt_id: pred_id for gt_id, pred_id, _ in m.pairs})
    return lookup


def _event_preserved(lookup, identity, gap_start, gap_end, grace=3):
    """Does the pred id before a visibility gap reappear after it?"""
    before = None
    for t in range(gap_start - 1, max(-1, gap_start - 1 - grace), -1):
        if t >= 0 and identity in lookup[t]:
            before = lookup[t][identity]
            break
    if before is None:
        return None
    for t in range(gap_end, min(len(lookup), gap_end + grace + 1)):
        if identity in lookup[t]:
            return lookup[t][identity] == before
    return False


def occlusion_events(scene):
    return [tuple(ev) for ev in scene.metadata.get("occlusion_events", [])]


def camera_transition_events(scene):
    """Visibility gaps caused by blind wedges: visible -> unseen -> visible
    with the camera set changing across the gap."""
    events = []
    last_seen = {}
    for t, frame in enumerate(scene.frames):
        for ann in frame.annotations:
            if not ann.views:
                continue
            cams = frozenset(v.camera_id for v in ann.views)
            if ann.identity in last_seen:
                t_prev, cams_prev = last_seen[ann.identity]
                if t - t_prev > 1 and cams.isdisjoint(cams_prev):
                    events.append((ann.identity, t_prev + 1, t))
            last_seen[ann.identity] = (t, cams)
    return events


def run_scenarios(models, out_dir, seeds=(0, 1, 2), detector=None, tracker_cfg=None):
    """Occlusion recovery and cross-camera id preservation rates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detector = detector or DetectorNoiseConfig()
    tracker_cfg = tracker_cfg or TrackerConfig()
    rates = {}
    per_seed = {"occlusion_recovery": [], "cross_camera_preservation": []}
    for seed in seeds:
        scene = generate_scene(occlusion_world(seed=7000 + seed))
        dets = simulate_detections(scene, detector, seed=8000 + seed)
        lookup = _match_lookup(scene, run_scene(dets, models, tracker_cfg))
        outcomes = []
        for identity, start, end in occlusion_events(scene):
            ok = _event_preserved(lookup, identity, start, end)
            if ok is not None:
                outcomes.append(ok)
        per_seed["occlusion_recovery"].append(
            float(np.mean(outcomes)) if outcomes else float("nan")
        )

        scene = generate_scene(crosscam_world(seed=7500 + seed))
        dets = simulate_detections(scene, detector, seed=8500 + seed)
        lookup = _match_lookup(scene, run_scene(dets, models, tracker_cfg))
        outcomes = []
        for identity, start, end in camera_transition_events(scene):
            ok = _event_preserved(lookup, identity, start, end)
            if ok is not None:
                outcomes.append(ok)
        per_seed["cross_camera_preservation"].append(
            float(np.mean(outcomes)) if outcomes else float("nan")
        )
    for key, vals in per_seed.items():
        rates[key] = float(np.nanmean(vals))
    write_json(out_dir / "scenarios.json", {"per_seed": per_seed, "rates": rates,
                                            "seeds": list(seeds)})
    return rates
