"""Online tracking-by-detection: preprocessing, assignment, track lifecycle.

Each frame: filter and deduplicate detections, score every (track,
detection) pair with the affinity models, solve the assignment with the
Hungarian algorithm on cost 1 - affinity, reject matches under the
affinity floor, then update the track set. Lost tracks keep competing for
detections until they exceed the maximum lost age. A distance-gated
centroid matcher provides the classical baseline under the same lifecycle.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .affinity import load_association_checkpoint, pair_matrix_np, save_association_checkpoint
from .core import Track, iou_2d
from .embedding import EmbeddingNet, embed
from .motion import normalize_sequence

CROSS_CATEGORY_COST = 1e6


@dataclass
class TrackerConfig:
    score_threshold: float = 0.8
    category_thresholds: dict = field(default_factory=lambda: {"pedestrian": 0.85})
    min_affinity: float = 0.5
    max_lost_age: int = 10  # frames; about 5 s at 2 FPS
    nms_iou: float = 0.5
    duplicate_bev_distance: float = 1.0
    max_history: int = 40
    min_hits: int = 1

    def threshold_for(self, category):
        return self.category_thresholds.get(category, self.score_threshold)


@dataclass
class Assignment:
    pairs: list  # (row, col)
    unmatched_rows: list
    unmatched_cols: list


def hungarian(cost):
    """Minimum-cost assignment on a rectangular matrix.

    Pads to square with a constant, which leaves the optimal assignment of
    real rows unchanged; padded pairings come back as unmatched.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian requires finite costs")
    m, n = cost.shape
    if m == 0 or n == 0:
        return Assignment([], list(range(m)), list(range(n)))
    side = max(m, n)
    padded = np.zeros((side, side))
    padded[:m, :n] = cost
    col = kernels.hungarian_square(padded)
    pairs = [(r, int(col[r])) for r in range(m) if col[r] < n]
    matched_cols = {c for _, c in pairs}
    return Assignment(
        pairs,
        [r for r in range(m) if col[r] >= n],
        [c for c in range(n) if c not in matched_cols],
    )


def assignment_cost(cost, assignment):
    return float(sum(cost[r][c] for r, c in assignment.pairs))


def _is_duplicate(a, b, cfg):
    if a.category != b.category:
        return False
    shared_camera = False
    for va in a.views:
        for vb in b.views:
            if va.camera_id == vb.camera_id:
                shared_camera = True
                if iou_2d(va.box, vb.box) >= cfg.nms_iou:
                    return True
    if shared_camera:
        return False
    da, db = a.bev, b.bev
    return np.hypot(da.x - db.x, da.y - db.y) < cfg.duplicate_bev_distance


def preprocess(detections, cfg):
    """Score-filter detections, then merge duplicates of one object.

    Duplicates within one camera are detected by 2D IoU, across cameras by
    BEV center distance; the higher-scoring detection survives and absorbs
    the other's views.
    """
    kept = []
    candidates = [d for d in detections if d.score >= cfg.threshold_for(d.category)]
    for det in sorted(candidates, key=lambda d: -d.score):
        survivor = next((k for k in kept if _is_duplicate(k, det, cfg)), None)
        if survivor is None:
            kept.append(det)
        else:
            survivor.views.extend(det.views)
    return kept


def fuse_views(embedding_net, detection):
    """Resolution-weighted average of the per-view embeddings."""
    areas = np.array([v.area for v in detection.views], dtype=np.float64)
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("cannot fuse views with zero total area")
    size = detection.pose.size
    embs = np.stack([embed(embedding_net, v.descriptor, size) for v in detection.views])
    return (areas[:, None] * embs).sum(axis=0) / total


class TrackingModels:
    """Frozen models the tracker consults: embeddings, motion, affinity."""

    def __init__(self, affinity_net, motion_encoder=None, embedding_net=None):
        if affinity_net.use_motion and motion_encoder is None:
            raise ValueError("affinity net uses motion but no encoder given")
        if affinity_net.use_appearance and embedding_net is None:
            raise ValueError("affinity net uses appearance but no embedding net given")
        self.affinity_net = affinity_net
        self.motion_encoder = motion_encoder
        self.embedding_net = embedding_net

    @property
    def use_appearance(self):
        return self.affinity_net.use_appearance

    def det_embeddings(self, detections):
        if not self.use_appearance:
            return None
        return np.stack([fuse_views(self.embedding_net, d) for d in detections])

    def affinity_matrix(self, tracks, detections, det_embeddings, max_history):
        det_bev = np.array([[d.pose.x, d.pose.y] for d in detections])
        motion = None
        rel = None
        if self.affinity_net.use_motion:
            seqs, origins = [], []
            for tr in tracks:
                norm = normalize_sequence(tr.path, max_history)
                seqs.append(norm.points)
                origins.append([norm.origin.x, norm.origin.y])
            origins = np.asarray(origins)
            motion = self.motion_encoder.encode_batch(seqs)
            rel = (det_bev[None, :, :] - origins[:, None, :]) * self.motion_encoder.position_scale
        emb_t = None
        if self.use_appearance:
            emb_t = np.stack([tr.last_embedding for tr in tracks])
        return pair_matrix_np(self.affinity_net, emb_t, det_embeddings, motion, rel)

    def save(self, models_dir):
        models_dir = Path(models_dir)
        models_dir.mkdir(parents=True, exist_ok=True)
        if self.embedding_net is not None:
            self.embedding_net.save(models_dir / "embedding.json")
        save_association_checkpoint(
            models_dir / "association.json", self.motion_encoder, self.affinity_net
        )

    @classmethod
    def load(cls, models_dir):
        models_dir = Path(models_dir)
        assoc_path = models_dir / "association.json"
        if not assoc_path.exists():
            raise FileNotFoundError(f"missing checkpoint: {assoc_path}")
        encoder, affinity_net, _ = load_association_checkpoint(assoc_path)
        embedding_net = None
        if affinity_net.use_appearance:
            emb_path = models_dir / "embedding.json"
            if not emb_path.exists():
                raise FileNotFoundError(f"missing checkpoint: {emb_path}")
            embedding_net = EmbeddingNet.load(emb_path)
        return cls(affinity_net, encoder, embedding_net)


class OracleAffinityModel:
    """Ground-truth affinity: 1 where the identity link agrees, else 0."""

    use_appearance = False

    def det_embeddings(self, detections):
        return None

    def affinity_matrix(self, tracks, detections, det_embeddings, max_history):
        y = np.zeros((len(tracks), len(detections)))
        for i, tr in enumerate(tracks):
            for j, det in enumerate(detections):
                if tr.gt_label is not None and tr.gt_label == det.gt_identity:
                    y[i, j] = 1.0
        return y


class AffinityMatcher:
    """Hungarian on 1 - affinity with the minimum-affinity floor."""

    def __init__(self, models, cfg):
        self.models = models
        self.cfg = cfg

    def __call__(self, tracks, detections):
        emb = self.models.det_embeddings(detections)
        if not tracks or not detections:
            return [], emb
        y = self.models.affinity_matrix(tracks, detections, emb, self.cfg.max_history)
        for i, tr in enumerate(tracks):
            for j, det in enumerate(detections):
                if tr.category != det.category:
                    y[i, j] = 0.0
        assignment = hungarian(1.0 - y)
        pairs = [
            (i, j, float(y[i, j]))
            for i, j in assignment.pairs
            if y[i, j] >= self.cfg.min_affinity
        ]
        return pairs, emb


class CentroidMatcher:
    """Distance-gated nearest-centroid baseline matcher."""

    def __init__(self, max_dist=10.0):
        self.max_dist = max_dist

    def __call__(self, tracks, detections):
        if not tracks or not detections:
            return [], None
        cost = np.empty((len(tracks), len(detections)))
        for i, tr in enumerate(tracks):
            last = tr.path[-1]
            for j, det in enumerate(detections):
                bev = det.bev
                if tr.category != det.category:
                    cost[i, j] = CROSS_CATEGORY_COST
                else:
                    cost[i, j] = np.hypot(last.x - bev.x, last.y - bev.y)
        assignment = hungarian(cost)
        pairs = [
            (i, j, 1.0)
            for i, j in assignment.pairs
            if cost[i, j] <= self.max_dist
        ]
        return pairs, None


@dataclass
class TrackEntry:
    track_id: int
    pose: object
    category: str
    score: float


@dataclass
class TrackingResultFrame:
    entries: list

    def __post_init__(self):
        ids = [e.track_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate track ids within a frame")


class Tracker:
    """State-carrying per-scene tracker; ids are never reused within a run."""

    def __init__(self, matcher, cfg):
        self.matcher = matcher
        self.cfg = cfg
        self.tracks = []
        self.next_id = 1

    def step(self, detections):
        pairs, det_emb = self.matcher(self.tracks, detections)
        matched_tracks = {i for i, _, _ in pairs}
        matched_dets = {j for _, j, _ in pairs}
        entries = []
        for i, j, affinity in pairs:
            tr = self.tracks[i]
            det = detections[j]
            tr.path.append(det.bev)
            tr.last_pose = det.pose
            tr.last_score = det.score
            tr.frames_since_seen = 0
            tr.hits += 1
            tr.gt_label = det.gt_identity
            if det_emb is not None:
                tr.last_embedding = det_emb[j]
            if tr.hits >= self.cfg.min_hits:
                entries.append(
                    TrackEntry(tr.id, det.pose, det.category, det.score * affinity)
                )
        for j, det in enumerate(detections):
            if j in matched_dets:
                continue
            tr = Track(
                id=self.next_id,
                category=det.category,
                path=[det.bev],
                last_pose=det.pose,
                last_embedding=None if det_emb is None else det_emb[j],
                last_score=det.score,
                frames_since_seen=0,
                hits=1,
                gt_label=det.gt_identity,
            )
            self.next_id += 1
            self.tracks.append(tr)
            if tr.hits >= self.cfg.min_hits:
                entries.append(TrackEntry(tr.id, det.pose, det.category, det.score))
        # age unmatched pre-existing tracks; freshly created ones sit past n_pre
        n_pre = len(self.tracks) - (len(detections) - len(matched_dets))
        for i in range(n_pre):
            if i not in matched_tracks:
                self.tracks[i].frames_since_seen += 1
        self.tracks = [
            t for t in self.tracks if t.frames_since_seen <= self.cfg.max_lost_age
        ]
        return TrackingResultFrame(entries)


def run_scene(frame_detections, models, cfg):
    """Preprocess and track a whole scene's detections, frame by frame."""
    tracker = Tracker(AffinityMatcher(models, cfg), cfg)
    results = []
    for dets in frame_detections:
        results.append(tracker.step(preprocess(dets, cfg)))
    return results


def centroid_baseline(frame_detections, max_dist=10.0, cfg=None):
    """Nearest-centroid assignment baseline under the same lifecycle rules."""
    cfg = cfg or TrackerConfig()
    tracker = Tracker(CentroidMatcher(max_dist), cfg)
    results = []
    for dets in frame_detections:
        results.append(tracker.step(preprocess(dets, cfg)))
    return results
