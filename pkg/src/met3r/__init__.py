"""Pose-free pairwise multi-view consistency scoring for generated images."""

from .core import (
    CameraIntrinsics,
    FeatureGrid,
    ImageFrame,
    PairScore,
    PointMapPair,
    Pose,
    ProjectionResult,
    SequenceReport,
    validate_frame,
)
from .metric import MetricOptions, met3r_pair

__all__ = [
    "CameraIntrinsics",
    "FeatureGrid",
    "ImageFrame",
    "MetricOptions",
    "PairScore",
    "PointMapPair",
    "Pose",
    "ProjectionResult",
    "SequenceReport",
    "met3r_pair",
    "validate_frame",
]
