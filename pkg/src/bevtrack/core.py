"""Domain types shared across the pipeline, plus coordinate conventions.

World positions live in a fixed scene-local ground frame (meters); the
tracker state is the projection of box centers onto that ground plane.
All types here are plain values with no behavior beyond validation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle to the principal range (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


@dataclass(frozen=True)
class BevPoint:
    """Ground-plane position in meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("BevPoint coordinates must be finite")

    def as_array(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class BoxPose3D:
    """Oriented 3D box: center (x, y, z), yaw in (-pi, pi], extents w/h/l > 0."""

    x: float
    y: float
    z: float
    yaw: float
    w: float
    h: float
    l: float

    def __post_init__(self):
        if min(self.w, self.h, self.l) <= 0.0:
            raise ValueError("box extents must be strictly positive")
        if not -math.pi < self.yaw <= math.pi:
            raise ValueError("yaw must lie in (-pi, pi]")

    @property
    def size(self):
        return np.array([self.w, self.h, self.l])


def project_to_bev(pose):
    """Drop a box center onto the ground plane."""
    return BevPoint(pose.x, pose.y)


def iou_2d(a, b):
    """Intersection over union of two pixel boxes [u1, v1, u2, v2]."""
    au1, av1, au2, av2 = a
    bu1, bv1, bu2, bv2 = b
    if au2 <= au1 or av2 <= av1 or bu2 <= bu1 or bv2 <= bv1:
        raise ValueError("iou_2d requires boxes with positive area")
    iw = min(au2, bu2) - max(au1, bu1)
    ih = min(av2, bv2) - max(av1, bv1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (au2 - au1) * (av2 - av1) + (bu2 - bu1) * (bv2 - bv1) - inter
    return inter / union


@dataclass(eq=False)
class ViewObservation:
    """A single-camera observation: 2D pixel box and appearance descriptor."""

    camera_id: int
    box: tuple
    descriptor: np.ndarray

    def __post_init__(self):
        u1, v1, u2, v2 = self.box
        if u2 <= u1 or v2 <= v1:
            raise ValueError("2D box must have positive area")
        self.descriptor = np.asarray(self.descriptor, dtype=np.float64)

    @property
    def area(self):
        u1, v1, u2, v2 = self.box
        return (u2 - u1) * (v2 - v1)


@dataclass(eq=False)
class Detection:
    """One detector output: 3D pose/size, score, and per-view observations."""

    pose: BoxPose3D
    score: float
    category: str
    views: list
    gt_identity: int | None = None  # simulator-provided link; None for clutter

    def __post_init__(self):
        if not self.views:
            raise ValueError("a detection needs at least one view")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("detection score must lie in [0, 1]")

    @property
    def bev(self):
        return project_to_bev(self.pose)


@dataclass(eq=False)
class Track:
    """A tracked identity and the state the association step consumes."""

    id: int
    category: str
    path: list  # observed BevPoints, oldest first
    last_pose: BoxPose3D
    last_embedding: np.ndarray | None
    last_score: float
    frames_since_seen: int = 0
    hits: int = 1
    gt_label: int | None = None  # only the oracle affinity model reads this


@dataclass(eq=False)
class CameraSpec:
    """Camera mounted on the ego vehicle: yaw offset, horizontal FOV, image size."""

    camera_id: int
    yaw: float
    fov: float
    image_width: int
    image_height: int


@dataclass(frozen=True)
class EgoPose:
    x: float
    y: float
    yaw: float


@dataclass(eq=False)
class Annotation:
    """Ground-truth object state at one frame; identity is scene-stable."""

    identity: int
    pose: BoxPose3D
    category: str
    visibility: float
    views: list

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")


@dataclass(eq=False)
class Frame:
    index: int
    timestamp: float
    annotations: list


@dataclass(eq=False)
class Scene:
    """A ground-truth world: annotated frames, camera rig, ego poses."""

    scene_id: str
    fps: float
    cameras: list
    ego_poses: list
    frames: list
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = [f.timestamp for f in self.frames]
        if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        if len(self.ego_poses) != len(self.frames):
            raise ValueError("one ego pose per frame required")

    def visible_annotations(self, frame_index):
        """Annotations with at least one camera view at the given frame."""
        return [a for a in self.frames[frame_index].annotations if a.views]
