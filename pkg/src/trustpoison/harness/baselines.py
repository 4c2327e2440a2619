"""Reference runs that bound the attack from above and below."""

from __future__ import annotations

from enum import Enum

import numpy as np

from trustpoison.geometry.boxes import OrientedBox, box_iou
from trustpoison.geometry.raycast import GROUND_SURFACE, PointCloud
from trustpoison.perception.detector import Detection


class BaselineKind(str, Enum):
    PERFECT_ATTACK = "perfect_attack"
    IDEAL_LATE_REMOVAL = "ideal_late_removal"
    IDEAL_POINT_REMOVAL = "ideal_point_removal"


def baseline_kind(name: str | BaselineKind) -> BaselineKind:
    try:
        return BaselineKind(name)
    except ValueError:
        valid = ", ".join(k.value for k in BaselineKind)
        raise ValueError(f"Unknown baseline '{name}'. Available: {valid}") from None


def remove_target_points(cloud: PointCloud, box: OrientedBox) -> PointCloud:
    """Drop every return inside the target footprint onto the ground."""
    world = cloud.to_world()
    inside = box.contains(world.points[:, :2])
    if not np.any(inside):
        return world
    points = world.points.copy()
    points[inside, 2] = 0.0
    surfaces = world.surface_ids.copy()
    surfaces[inside] = GROUND_SURFACE
    return PointCloud(
        points, world.frame_id, world.agent_id, world.origin, world.sensor_yaw, world.coordinate_frame, surfaces
    )


def remove_target_box(detections: list[Detection], box: OrientedBox) -> list[Detection]:
    """Delete the single prediction that best overlaps the target; keep the rest."""
    overlaps = [box_iou(d.box, box) for d in detections]
    if not overlaps or max(overlaps) <= 0.0:
        return list(detections)
    drop = int(np.argmax(overlaps))
    return [d for i, d in enumerate(detections) if i != drop]
