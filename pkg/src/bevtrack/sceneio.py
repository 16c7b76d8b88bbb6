"""JSON schemas for scenes, detections, tracking results, and run manifests.

Documents are versioned; readers raise SchemaVersionError on anything they
do not understand. Serialization is canonical (see jsonutil), so equal
values produce byte-identical files and reruns can be compared bitwise.
A manifest accompanies every CLI command's output directory and records
the command line, config digest, seeds, and output digests needed to
reproduce the run exactly.
"""

from pathlib import Path

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
)
from .errors import SchemaVersionError
from .jsonutil import canonical_dumps, read_json, sha256_file, write_json
from .tracker import TrackEntry, TrackingResultFrame

SCHEMA_VERSION = 1


def _check_version(doc, kind, path):
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {version!r}, expected {SCHEMA_VERSION}"
        )
    if doc.get("kind") != kind:
        raise SchemaVersionError(f"{path}: document kind {doc.get('kind')!r}, expected {kind!r}")


def _pose_to_dict(pose):
    return {
        "x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw,
        "w": pose.w, "h": pose.h, "l": pose.l,
    }


def _pose_from_dict(d):
    return BoxPose3D(d["x"], d["y"], d["z"], d["yaw"], d["w"], d["h"], d["l"])


def _view_to_dict(view):
    return {
        "camera_id": view.camera_id,
        "box": list(view.box),
        "descriptor": view.descriptor.tolist(),
    }


def _view_from_dict(d):
    return ViewObservation(d["camera_id"], tuple(d["box"]), np.asarray(d["descriptor"]))


def scene_to_dict(scene):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "scene",
        "scene_id": scene.scene_id,
        "fps": scene.fps,
        "seed": scene.seed,
        "metadata": scene.metadata,
        "cameras": [
            {
                "camera_id": c.camera_id,
                "yaw": c.yaw,
                "fov": c.fov,
                "image_width": c.image_width,
                "image_height": c.image_height,
            }
            for c in scene.cameras
        ],
        "ego_poses": [[e.x, e.y, e.yaw] for e in scene.ego_poses],
        "frames": [
            {
                "index": f.index,
                "timestamp": f.timestamp,
                "annotations": [
                    {
                        "identity": a.identity,
                        "category": a.category,
                        "visibility": a.visibility,
                        "pose": _pose_to_dict(a.pose),
                        "views": [_view_to_dict(v) for v in a.views],
                    }
                    for a in f.annotations
                ],
            }
            for f in scene.frames
        ],
    }


def scene_from_dict(doc, path="<memory>"):
    _check_version(doc, "scene", path)
    camera_ids = {c["camera_id"] for c in doc["cameras"]}
    cameras = [
        CameraSpec(c["camera_id"], c["yaw"], c["fov"], c["image_width"], c["image_height"])
        for c in doc["cameras"]
    ]
    frames = []
    for f in doc["frames"]:
        annotations = []
        for a in f["annotations"]:
            views = [_view_from_dict(v) for v in a["views"]]
            for v in views:
                if v.camera_id not in camera_ids:
                    raise SchemaVersionError(
                        f"{path}: view references undeclared camera {v.camera_id}"
                    )
            annotations.append(
                Annotation(a["identity"], _pose_from_dict(a["pose"]), a["category"],
                           a["visibility"], views)
            )
        frames.append(Frame(f["index"], f["timestamp"], annotations))
    return Scene(
        scene_id=doc["scene_id"],
        fps=doc["fps"],
        cameras=cameras,
        ego_poses=[EgoPose(*e) for e in doc["ego_poses"]],
        frames=frames,
        seed=doc.get("seed"),
        metadata=doc.get("metadata", {}),
    )


def save_scene(path, scene):
    write_json(path, scene_to_dict(scene))


def load_scene(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing scene file: {path}")
    return scene_from_dict(read_json(path), str(path))


def detections_to_dict(scene_id, frame_detections):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "detections",
        "scene_id": scene_id,
        "frames": [
            {
                "index": t,
                "detections": [
                    {
                        "pose": _pose_to_dict(d.pose),
                        "score": d.score,
                        "category": d.category,
                        "gt_identity": d.gt_identity,
                        "views": [_view_to_dict(v) for v in d.views],
                    }
                    for d in dets
                ],
            }
            for t, dets in enumerate(frame_detections)
        ],
    }


def detections_from_dict(doc, path="<memory>"):
    _check_version(doc, "detections", path)
    frames = []
    for f in doc["frames"]:
        frames.append(
            [
                Detection(
                    _pose_from_dict(d["pose"]),
                    d["score"],
                    d["category"],
                    [_view_from_dict(v) for v in d["views"]],
                    gt_identity=d.get("gt_identity"),
                )
                for d in f["detections"]
            ]
        )
    return doc["scene_id"], frames


def save_detections(path, scene_id, frame_detections):
    write_json(path, detections_to_dict(scene_id, frame_detections))


def load_detections(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing detections file: {path}")
    return detections_from_dict(read_json(path), str(path))


def result_to_dict(scene_id, result_frames):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "tracking_result",
        "scene_id": scene_id,
        "frames": [
            {
                "index": t,
                "tracks": [
                    {
                        "id": e.track_id,
                        "pose": _pose_to_dict(e.pose),
                        "category": e.category,
                        "score": e.score,
                    }
                    for e in frame.entries
                ],
            }
            for t, frame in enumerate(result_frames)
        ],
    }


def result_from_dict(doc, path="<memory>"):
    _check_version(doc, "tracking_result", path)
    frames = []
    for f in doc["frames"]:
        entries = []
        for tr in f["tracks"]:
            score = tr["score"]
            if not 0.0 <= score <= 1.0:
                raise SchemaVersionError(f"{path}: tracking score {score} outside [0, 1]")
            entries.append(
                TrackEntry(tr["id"], _pose_from_dict(tr["pose"]), tr["category"], score)
            )
        frames.append(TrackingResultFrame(entries))
    return doc["scene_id"], frames


def save_result(path, scene_id, result_frames):
    write_json(path, result_to_dict(scene_id, result_frames))


def load_result(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing result file: {path}")
    return result_from_dict(read_json(path), str(path))


def write_manifest(out_dir, command, args, seeds, inputs=None, configs=None):
    """Record what produced the files in out_dir.

    Output digests cover every JSON/CSV file except the manifest itself;
    paths are stored relative to out_dir so reruns into a different
    directory still produce byte-identical data files.
    """
    out_dir = Path(out_dir)
    outputs = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and p.suffix in (".json", ".csv", ".md"):
            outputs[str(p.relative_to(out_dir))] = sha256_file(p)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "manifest",
        "command": command,
        "args": args,
        "seeds": seeds,
        "inputs": inputs or {},
        "configs": configs or {},
        "outputs": outputs,
    }
    write_json(out_dir / "manifest.json", manifest)
    return manifest


def load_manifest(path):
    doc = read_json(path)
    _check_version(doc, "manifest", path)
    return doc


def scene_files(directory):
    return sorted(Path(directory).glob("scene*.json"))


def detection_files(directory):
    return sorted(Path(directory).glob("detections*.json"))


def result_files(directory):
    return sorted(Path(directory).glob("result*.json"))


def canonical_bytes(obj):
    return canonical_dumps(obj).encode("utf-8")
