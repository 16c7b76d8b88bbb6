"""Desk-scale BEV multi-object tracking with learned association."""

from . import kernels
from .core import (
    Annotation,
    BevPoint,
    BoxPose3D,
    CameraSpec,
    Detection,
    Frame,
    Scene,
    Track,
    ViewObservation,
    iou_2d,
    project_to_bev,
)
from .simulator import DetectorNoiseConfig, WorldConfig, generate_scene, simulate_detections
from .tracker import TrackerConfig, TrackingModels, centroid_baseline, hungarian, run_scene

__version__ = "0.1.0"

KERNEL_BACKEND = kernels.BACKEND

__all__ = [
    "Annotation",
    "BevPoint",
    "BoxPose3D",
    "CameraSpec",
    "Detection",
    "DetectorNoiseConfig",
    "Frame",
    "KERNEL_BACKEND",
    "Scene",
    "Track",
    "TrackerConfig",
    "TrackingModels",
    "ViewObservation",
    "WorldConfig",
    "centroid_baseline",
    "generate_scene",
    "hungarian",
    "iou_2d",
    "project_to_bev",
    "run_scene",
    "simulate_detections",
]
