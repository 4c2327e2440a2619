"""Geometric BEV perception: grids, detector, differentiable surrogate and fusion."""

from trustpoison.perception.detector import DETECTION_THRESHOLD, Detection, detect
from trustpoison.perception.fusion import feature_fuse, late_fuse
from trustpoison.perception.grid import BevGrid, GridSpec, bev_feature
from trustpoison.perception.surrogate import TrainingContext, smooth_confidence, soft_bev

__all__ = [
    "DETECTION_THRESHOLD",
    "BevGrid",
    "Detection",
    "GridSpec",
    "TrainingContext",
    "bev_feature",
    "detect",
    "feature_fuse",
    "late_fuse",
    "smooth_confidence",
    "soft_bev",
]
