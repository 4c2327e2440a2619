"""Oriented bird's-eye-view boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon

from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.geometry.pose import Pose, normalize_yaw


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle on the ground plane: center (m), length x width (m), yaw (rad)."""

    center: tuple[float, float]
    size: tuple[float, float]
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "size", (float(self.size[0]), float(self.size[1])))
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def area(self) -> float:
        return max(self.size[0], 0.0) * max(self.size[1], 0.0)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c, s]), np.array([-s, c])

    def corners(self) -> np.ndarray:
        major, minor = self.axes()
        half_l, half_w = 0.5 * self.size[0], 0.5 * self.size[1]
        center = np.asarray(self.center)
        return np.array(
            [
                center + half_l * major + half_w * minor,
                center - half_l * major + half_w * minor,
                center - half_l * major - half_w * minor,
                center + half_l * major - half_w * minor,
            ]
        )

    def polygon(self) -> Polygon:
        return Polygon(self.corners())

    def contains(self, xy: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Inclusive point-in-box test for (N, 2) points, optionally dilated."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2) - np.asarray(self.center)
        major, minor = self.axes()
        along = xy @ major
        across = xy @ minor
        tol = 1e-9
        return (np.abs(along) <= 0.5 * self.size[0] + margin + tol) & (
            np.abs(across) <= 0.5 * self.size[1] + margin + tol
        )

    def to_record(self) -> dict:
        return {
            "center": [round(self.center[0], 6), round(self.center[1], 6)],
            "size": [round(self.size[0], 6), round(self.size[1], 6)],
            "yaw": round(self.yaw, 6),
        }


def box_from_mesh(mesh: TriangleMesh, pose: Pose) -> OrientedBox:
    """Tight box of the mesh aligned with its pose heading."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    local_center = 0.5 * (lo + hi)
    world_center = pose.to_world(local_center[None, :])[0]
    return OrientedBox(
        (world_center[0], world_center[1]), (hi[0] - lo[0], hi[1] - lo[1]), pose.yaw
    )


def box_iou(a: OrientedBox, b: OrientedBox) -> float:
    """BEV intersection-over-union by convex polygon clipping; 0 for degenerate boxes."""
    if a.area <= 0.0 or b.area <= 0.0:
        return 0.0
    pa, pb = a.polygon(), b.polygon()
    if not pa.intersects(pb):
        return 0.0
    inter = pa.intersection(pb).area
    union = a.area + b.area - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0
