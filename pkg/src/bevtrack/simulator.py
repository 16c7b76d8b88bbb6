"""Synthetic BEV world generator and camera-detector noise model.

Stands in for a real driving dataset at desk scale while keeping the
failure modes the association pipeline has to survive: scripted
occlusions, missed detections, clutter, re-appearance across camera
sectors, and anisotropic position error along the camera ray.

Objects follow piecewise constant-velocity ground-plane trajectories with
random turn segments, steered back when they approach the arena boundary.
Each identity carries one fixed appearance latent per scene; every camera
view observes that latent plus zero-mean noise (inflated when visibility
is partial). Image crops are abstracted away entirely.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Annotation,
    BoxPose3D,
    CameraSpec,
    Detection,
    EgoPose,
    Frame,
    Scene,
    ViewObservation,
    wrap_angle,
)
from .errors import ConfigError


@dataclass(frozen=True)
class CategorySpec:
    name: str
    fraction: float
    size_mean: tuple  # (w, h, l) meters
    size_std: tuple
    speed_range: tuple  # (lo, hi) m/s


DEFAULT_CATEGORIES = (
    CategorySpec("car", 0.7, (1.9, 1.6, 4.5), (0.15, 0.10, 0.35), (1.5, 5.0)),
    CategorySpec("pedestrian", 0.3, (0.7, 1.75, 0.8), (0.08, 0.12, 0.08), (0.5, 1.5)),
)


@dataclass
class WorldConfig:
    n_objects: int = 16
    categories: tuple = DEFAULT_CATEGORIES
    n_frames: int = 32
    fps: float = 2.0
    n_cameras: int = 6
    camera_fov: float = math.radians(70.0)
    image_width: int = 1600
    image_height: int = 900
    max_range: float = 60.0
    world_radius: float = 22.0
    spawn_radius: tuple = (4.0, 19.0)
    min_spawn_distance: float = 4.0
    turn_rate_max: float = 0.5  # rad/s
    segment_frames: tuple = (3, 8)
    occlusion_prob: float = 0.5
    occlusion_frames: tuple = (2, 5)
    partial_visibility_rate: float = 0.08
    partial_visibility_range: tuple = (0.3, 0.9)
    descriptor_dim: int = 16
    descriptor_noise: float = 0.5
    twin_fraction: float = 0.0
    seed: int = 0
    # Optional scripts override the random draws; used by the scenario
    # suites and tests that need exact trajectories or occlusion windows.
    scripted_trajectories: list | None = None  # per object: [(x, y), ...] per frame
    scripted_categories: list | None = None  # per object: category name
    scripted_occlusions: list | None = None  # [(object_index, start, end_exclusive)]

    def validate(self):
        if self.n_objects < 1:
            raise ConfigError("n_objects must be positive")
        if self.n_cameras < 1:
            raise ConfigError("at least one camera required")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.descriptor_dim < 8:
            raise ConfigError("descriptor_dim must be at least 8")
        if abs(sum(c.fraction for c in self.categories) - 1.0) > 1e-9:
            raise ConfigError("category fractions must sum to 1")
        if self.occlusion_frames[0] < 1 or self.occlusion_frames[1] < self.occlusion_frames[0]:
            raise ConfigError("occlusion duration range must be positive and ordered")
        if not 0.0 <= self.twin_fraction <= 1.0:
            raise ConfigError("twin_fraction must lie in [0, 1]")


@dataclass
class DetectorNoiseConfig:
    miss_rate: float = 0.1
    occluded_miss_multiplier: float = 2.5
    false_positive_rate: float = 2.5  # Poisson mean per frame
    fp_near_object_fraction: float = 0.5  # ghost detections beside real objects
    fp_near_distance: tuple = (2.0, 8.0)
    sigma_ray: float = 1.0  # meters, along the bearing to the camera
    sigma_perp: float = 0.3  # meters, across it
    size_noise: float = 0.08  # relative, U(-a, a) per dimension
    score_clean: tuple = (0.9, 0.05)  # (mean, std)
    score_partial: tuple = (0.75, 0.08)
    score_false: tuple = (0.7, 0.1)
    descriptor_noise: float = 0.05
    split_multiview: bool = False

    def validate(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ConfigError("miss_rate must lie in [0, 1]")
        if self.false_positive_rate < 0.0:
            raise ConfigError("false_positive_rate must be non-negative")
        # sigma_perp == 0 is allowed so the degenerate noise-free detector
        # is expressible; otherwise ray noise must dominate.
        if self.sigma_ray < self.sigma_perp or self.sigma_perp < 0.0:
            raise ConfigError("need sigma_ray >= sigma_perp >= 0")

    @classmethod
    def noiseless(cls):
        return cls(
            miss_rate=0.0,
            occluded_miss_multiplier=1.0,
            false_positive_rate=0.0,
            sigma_ray=0.0,
            sigma_perp=0.0,
            size_noise=0.0,
            score_clean=(0.9, 0.0),
            score_partial=(0.9, 0.0),
            score_false=(0.5, 0.0),
            descriptor_noise=0.0,
        )


def default_camera_rig(cfg):
    yaws = [wrap_angle(k * 2.0 * math.pi / cfg.n_cameras) for k in range(cfg.n_cameras)]
    return [
        CameraSpec(k, yaw, cfg.camera_fov, cfg.image_width, cfg.image_height)
        for k, yaw in enumerate(yaws)
    ]


def _view_box(camera, ego, pos_xy, size):
    """Pinhole-ish 2D box for an object seen by one camera, or None."""
    dx = pos_xy[0] - ego.x
    dy = pos_xy[1] - ego.y
    dist = math.hypot(dx, dy)
    if dist < 1e-6:
        return None
    bearing = math.atan2(dy, dx)
    rel = wrap_angle(bearing - ego.yaw - camera.yaw)
    if abs(rel) > camera.fov / 2.0:
        return None
    focal = (camera.image_width / 2.0) / math.tan(camera.fov / 2.0)
    u_c = camera.image_width / 2.0 + focal * math.tan(rel)
    v_c = camera.image_height / 2.0
    w_px = focal * size[0] / dist
    h_px = focal * size[1] / dist
    u1 = max(0.0, u_c - w_px / 2.0)
    u2 = min(float(camera.image_width), u_c + w_px / 2.0)
    v1 = max(0.0, v_c - h_px / 2.0)
    v2 = min(float(camera.image_height), v_c + h_px / 2.0)
    if u2 - u1 < 2.0 or v2 - v1 < 2.0:
        return None
    return (u1, v1, u2, v2)


def _camera_boxes(cameras, ego, pos_xy, size, max_range):
    if math.hypot(pos_xy[0] - ego.x, pos_xy[1] - ego.y) > max_range:
        return []
    boxes = []
    for cam in cameras:
        box = _view_box(cam, ego, pos_xy, size)
        if box is not None:
            boxes.append((cam.camera_id, box))
    return boxes


def _spawn_positions(rng, cfg):
    positions = []
    for _ in range(cfg.n_objects):
        for _attempt in range(200):
            r = rng.uniform(*cfg.spawn_radius)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            cand = (r * math.cos(phi), r * math.sin(phi))
            if all(
                math.hypot(cand[0] - p[0], cand[1] - p[1]) >= cfg.min_spawn_distance
                for p in positions
            ):
                break
        positions.append(cand)
    return positions


def _random_trajectory(rng, cfg, start, speed):
    dt = 1.0 / cfg.fps
    heading = rng.uniform(0.0, 2.0 * math.pi)
    seg_left = 0
    turn = 0.0
    x, y = start
    points = []
    for _ in range(cfg.n_frames):
        points.append((x, y))
        if seg_left == 0:
            seg_left = int(rng.integers(cfg.segment_frames[0], cfg.segment_frames[1] + 1))
            turn = rng.uniform(-cfg.turn_rate_max, cfg.turn_rate_max)
        # steer back toward the origin when about to leave the arena
        radial = math.hypot(x, y)
        if radial > 0.85 * cfg.world_radius:
            outward = x * math.cos(heading) + y * math.sin(heading) > 0.0
            if outward:
                target = math.atan2(-y, -x)
                diff = wrap_angle(target - heading)
                turn = math.copysign(min(cfg.turn_rate_max, abs(diff) / dt), diff)
        heading += turn * dt
        x += speed * dt * math.cos(heading)
        y += speed * dt * math.sin(heading)
        seg_left -= 1
    return points


def generate_scene(cfg):
    """Build one ground-truth scene; deterministic in cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    cameras = default_camera_rig(cfg)
    by_name = {c.name: c for c in cfg.categories}

    if cfg.scripted_categories is not None:
        cats = [by_name[name] for name in cfg.scripted_categories]
    else:
        fractions = [c.fraction for c in cfg.categories]
        picks = rng.choice(len(cfg.categories), size=cfg.n_objects, p=fractions)
        cats = [cfg.categories[int(i)] for i in picks]

    sizes = []
    for cat in cats:
        s = np.asarray(cat.size_mean) + np.asarray(cat.size_std) * rng.normal(size=3)
        sizes.append(np.maximum(s, 0.15))

    latents = rng.normal(size=(cfg.n_objects, cfg.descriptor_dim))
    n_twin_pairs = int(cfg.twin_fraction * cfg.n_objects) // 2
    for pair in range(n_twin_pairs):
        latents[2 * pair + 1] = latents[2 * pair]

    if cfg.scripted_trajectories is not None:
        if len(cfg.scripted_trajectories) != cfg.n_objects:
            raise ConfigError("need one scripted trajectory per object")
        trajectories = [list(t) for t in cfg.scripted_trajectories]
        if any(len(t) != cfg.n_frames for t in trajectories):
            raise ConfigError("scripted trajectories must cover every frame")
    else:
        starts = _spawn_positions(rng, cfg)
        trajectories = []
        for start, cat in zip(starts, cats):
            speed = rng.uniform(*cat.speed_range)
            trajectories.append(_random_trajectory(rng, cfg, start, speed))

    headings = []
    for traj in trajectories:
        hs = []
        for i in range(len(traj)):
            a = traj[max(0, i - 1)]
            b = traj[min(len(traj) - 1, i + 1)]
            if math.hypot(b[0] - a[0], b[1] - a[1]) < 1e-9:
                hs.append(hs[-1] if hs else 0.0)
            else:
                hs.append(math.atan2(b[1] - a[1], b[0] - a[0]))
        headings.append(hs)

    if cfg.scripted_occlusions is not None:
        occlusions = [tuple(ev) for ev in cfg.scripted_occlusions]
    else:
        occlusions = []
        for obj in range(cfg.n_objects):
            if rng.random() < cfg.occlusion_prob:
                dur = int(rng.integers(cfg.occlusion_frames[0], cfg.occlusion_frames[1] + 1))
                latest = cfg.n_frames - dur - 2
                if latest <= 2:
                    continue
                start = int(rng.integers(2, latest + 1))
                occlusions.append((obj, start, start + dur))
    occluded_at = [set() for _ in range(cfg.n_objects)]
    for obj, start, end in occlusions:
        occluded_at[obj].update(range(start, end))

    ego_poses = [EgoPose(0.0, 0.0, 0.0)] * cfg.n_frames
    frames = []
    for t in range(cfg.n_frames):
        ego = ego_poses[t]
        annotations = []
        for obj in range(cfg.n_objects):
            x, y = trajectories[obj][t]
            w, h, l = sizes[obj]
            pose = BoxPose3D(x, y, h / 2.0, wrap_angle(headings[obj][t]), w, h, l)
            if t in occluded_at[obj]:
                boxes = []
            else:
                boxes = _camera_boxes(cameras, ego, (x, y), (w, h, l), cfg.max_range)
            if boxes:
                if rng.random() < cfg.partial_visibility_rate:
                    visibility = rng.uniform(*cfg.partial_visibility_range)
                else:
                    visibility = 1.0
                sigma = cfg.descriptor_noise / max(visibility, 0.3)
                views = [
                    ViewObservation(
                        cam_id, box, latents[obj] + sigma * rng.normal(size=cfg.descriptor_dim)
                    )
                    for cam_id, box in boxes
                ]
            else:
                visibility = 0.0
                views = []
            annotations.append(
                Annotation(obj, pose, cats[obj].name, visibility, views)
            )
        frames.append(Frame(t, t / cfg.fps, annotations))

    metadata = {
        "descriptor_dim": cfg.descriptor_dim,
        "max_range": cfg.max_range,
        "world_radius": cfg.world_radius,
        "categories": [
            {
                "name": c.name,
                "size_mean": list(c.size_mean),
                "size_std": list(c.size_std),
            }
            for c in cfg.categories
        ],
        "occlusion_events": [list(ev) for ev in occlusions],
    }
    return Scene(
        scene_id=f"scene{cfg.seed:06d}",
        fps=cfg.fps,
        cameras=cameras,
        ego_poses=ego_poses,
        frames=frames,
        seed=cfg.seed,
        metadata=metadata,
    )


def _noisy_position(rng, noise, ego, x, y):
    bearing = math.atan2(y - ego.y, x - ego.x)
    e_ray, e_perp = rng.normal(size=2)
    dx = math.cos(bearing) * noise.sigma_ray * e_ray - math.sin(bearing) * noise.sigma_perp * e_perp
    dy = math.sin(bearing) * noise.sigma_ray * e_ray + math.cos(bearing) * noise.sigma_perp * e_perp
    return x + dx, y + dy


def _score(rng, model):
    mean, std = model
    return float(np.clip(mean + std * rng.normal(), 0.01, 0.999))


def _detection_from_annotation(rng, noise, ego, ann, views):
    x, y = _noisy_position(rng, noise, ego, ann.pose.x, ann.pose.y)
    factors = 1.0 + noise.size_noise * rng.uniform(-1.0, 1.0, size=3)
    w, h, l = (
        max(0.05, ann.pose.w * factors[0]),
        max(0.05, ann.pose.h * factors[1]),
        max(0.05, ann.pose.l * factors[2]),
    )
    score = _score(rng, noise.score_partial if ann.visibility < 1.0 else noise.score_clean)
    pose = BoxPose3D(x, y, ann.pose.z, ann.pose.yaw, w, h, l)
    dim = views[0].descriptor.shape[0]
    noisy_views = [
        ViewObservation(
            v.camera_id, v.box, v.descriptor + noise.descriptor_noise * rng.normal(size=dim)
        )
        for v in views
    ]
    return Detection(pose, score, ann.category, noisy_views, gt_identity=ann.identity)


def simulate_detections(scene, noise, seed):
    """Corrupt a scene's visible annotations into per-frame detection lists."""
    noise.validate()
    rng = np.random.default_rng(seed)
    meta = scene.metadata
    categories = meta["categories"]
    dim = meta["descriptor_dim"]
    max_range = meta["max_range"]
    per_frame = []
    for frame, ego in zip(scene.frames, scene.ego_poses):
        dets = []
        for ann in frame.annotations:
            if not ann.views:
                continue
            miss = noise.miss_rate
            if ann.visibility < 1.0:
                miss = min(1.0, miss * noise.occluded_miss_multiplier)
            if rng.random() < miss:
                continue
            if noise.split_multiview and len(ann.views) > 1:
                for view in ann.views:
                    dets.append(_detection_from_annotation(rng, noise, ego, ann, [view]))
            else:
                dets.append(_detection_from_annotation(rng, noise, ego, ann, ann.views))
        visible_positions = [
            (a.pose.x, a.pose.y) for a in frame.annotations if a.views
        ]
        for _ in range(rng.poisson(noise.false_positive_rate)):
            cat = categories[int(rng.integers(len(categories)))]
            size = np.maximum(
                np.asarray(cat["size_mean"]) + np.asarray(cat["size_std"]) * rng.normal(size=3),
                0.15,
            )
            near = visible_positions and rng.random() < noise.fp_near_object_fraction
            boxes = []
            for _attempt in range(20):
                if near:
                    # ghost beside a real object, as duplicate-ish detector noise
                    ax, ay = visible_positions[int(rng.integers(len(visible_positions)))]
                    r = rng.uniform(*noise.fp_near_distance)
                    phi = rng.uniform(0.0, 2.0 * math.pi)
                    fx, fy = ax + r * math.cos(phi), ay + r * math.sin(phi)
                else:
                    r = rng.uniform(3.0, 0.9 * max_range)
                    phi = rng.uniform(0.0, 2.0 * math.pi)
                    fx, fy = r * math.cos(phi), r * math.sin(phi)
                boxes = _camera_boxes(scene.cameras, ego, (fx, fy), size, max_range)
                if boxes:
                    break
            if not boxes:
                continue
            descriptor = rng.normal(size=dim)
            views = [
                ViewObservation(
                    cam_id, box, descriptor + noise.descriptor_noise * rng.normal(size=dim)
                )
                for cam_id, box in boxes[:1]
            ]
            pose = BoxPose3D(fx, fy, size[1] / 2.0, 0.0, *size)
            dets.append(
                Detection(pose, _score(rng, noise.score_false), cat["name"], views)
            )
        per_frame.append(dets)
    return per_frame


def split_dataset(scenes, ratios, seed):
    """Partition scenes into (train, val, test); identities stay scene-local."""
    if len(ratios) != 3:
        raise ConfigError("ratios must give (train, val, test) fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scenes))
    shuffled = [scenes[i] for i in order]
    n = len(scenes)
    bounds = np.round(np.cumsum(ratios) * n).astype(int)
    splits = (
        shuffled[: bounds[0]],
        shuffled[bounds[0] : bounds[1]],
        shuffled[bounds[1] : bounds[2]],
    )
    for ratio, split in zip(ratios, splits):
        if ratio > 0.0 and not split:
            raise ConfigError("a split with positive ratio received no scenes")
    return splits
