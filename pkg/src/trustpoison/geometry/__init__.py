"""Meshes, poses, ray casting and oriented boxes."""

from trustpoison.geometry.boxes import OrientedBox, box_from_mesh, box_iou
from trustpoison.geometry.mesh import (
    ConstraintKind,
    ConstraintSet,
    TriangleMesh,
    laplacian_energy,
    merge_meshes,
    project_constraints,
)
from trustpoison.geometry.pose import Pose, normalize_yaw
from trustpoison.geometry.raycast import (
    LidarSpec,
    PointCloud,
    Ray,
    cast_lidar,
    cast_rays,
    ray_triangle_intersect,
)

__all__ = [
    "ConstraintKind",
    "ConstraintSet",
    "LidarSpec",
    "OrientedBox",
    "PointCloud",
    "Pose",
    "Ray",
    "TriangleMesh",
    "box_from_mesh",
    "box_iou",
    "cast_lidar",
    "cast_rays",
    "laplacian_energy",
    "merge_meshes",
    "normalize_yaw",
    "project_constraints",
    "ray_triangle_intersect",
]
