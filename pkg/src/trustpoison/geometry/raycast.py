"""Moller-Trumbore intersection and LiDAR point-cloud synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit, prange

from trustpoison.errors import GeometryError
from trustpoison.geometry.mesh import DEGENERATE_AREA, TriangleMesh
from trustpoison.geometry.pose import Pose

T_MIN = 1e-9
PARALLEL_EPS = 1e-12
GROUND_SURFACE = -1
NO_SURFACE = -2


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(origin)) and np.all(np.isfinite(direction))):
            raise GeometryError("ray origin and direction must be finite")
        if abs(float(np.linalg.norm(direction)) - 1.0) > 1e-9:
            raise GeometryError("ray direction must have unit norm")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def towards(cls, origin: np.ndarray, target: np.ndarray) -> Ray:
        delta = np.asarray(target, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
        return cls(origin, delta / np.linalg.norm(delta))


@dataclass(frozen=True)
class Intersection:
    t: float | None
    point: np.ndarray | None
    degenerate: bool = False

    @property
    def hit(self) -> bool:
        return self.t is not None


def ray_triangle_intersect(ray: Ray, triangle: np.ndarray) -> Intersection:
    """Nearest t > 1e-9 where the ray crosses the triangle (edges included)."""
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    if 0.5 * np.linalg.norm(np.cross(e1, e2)) < DEGENERATE_AREA:
        return Intersection(None, None, degenerate=True)
    pvec = np.cross(ray.direction, e2)
    det = float(e1 @ pvec)
    if abs(det) < PARALLEL_EPS:
        return Intersection(None, None)
    inv = 1.0 / det
    tvec = ray.origin - tri[0]
    u = float(tvec @ pvec) * inv
    if u < 0.0 or u > 1.0:
        return Intersection(None, None)
    qvec = np.cross(tvec, e1)
    v = float(ray.direction @ qvec) * inv
    if v < 0.0 or u + v > 1.0:
        return Intersection(None, None)
    t = float(e2 @ qvec) * inv
    if t <= T_MIN:
        return Intersection(None, None)
    return Intersection(t, ray.origin + t * ray.direction)


@njit(parallel=True, nogil=True, cache=True)
def _nearest_hits(origin, dirs, v0, e1, e2, t_max):
    n_rays = dirs.shape[0]
    n_tri = v0.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_tri = np.full(n_rays, -1, dtype=np.int64)
    best_u = np.zeros(n_rays)
    best_v = np.zeros(n_rays)
    for r in prange(n_rays):
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        limit = t_max[r]
        for k in range(n_tri):
            px = dy * e2[k, 2] - dz * e2[k, 1]
            py = dz * e2[k, 0] - dx * e2[k, 2]
            pz = dx * e2[k, 1] - dy * e2[k, 0]
            det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
            if abs(det) < 1e-12:
                continue
            inv = 1.0 / det
            tx = origin[0] - v0[k, 0]
            ty = origin[1] - v0[k, 1]
            tz = origin[2] - v0[k, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = ty * e1[k, 2] - tz * e1[k, 1]
            qy = tz * e1[k, 0] - tx * e1[k, 2]
            qz = tx * e1[k, 1] - ty * e1[k, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
            if t > 1e-9 and t <= limit and t < best_t[r]:
                best_t[r] = t
                best_tri[r] = k
                best_u[r] = u
                best_v[r] = v
    return best_t, best_tri, best_u, best_v


def slab_candidates(
    origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray, t_max: np.ndarray
) -> np.ndarray:
    """Indices of rays that enter the axis-aligned box [lo, hi] before t_max."""
    safe = np.where(np.abs(dirs) < 1e-15, np.copysign(1e-15, dirs), dirs)
    inv = 1.0 / safe
    t0 = (lo - origin) * inv
    t1 = (hi - origin) * inv
    near = np.minimum(t0, t1).max(axis=1)
    far = np.maximum(t0, t1).min(axis=1)
    return np.flatnonzero((far >= np.maximum(near, 0.0)) & (near <= t_max))


@dataclass(frozen=True, eq=False)
class RayHits:
    """Nearest-hit record for a bundle of rays sharing one origin.

    ``surface`` is the mesh index, ``GROUND_SURFACE`` or ``NO_SURFACE``;
    ``u``/``v`` are barycentric weights of vertices 1 and 2 of ``tri``.
    """

    origin: np.ndarray
    directions: np.ndarray
    t: np.ndarray
    surface: np.ndarray
    tri: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.surface != NO_SURFACE

    def points(self) -> np.ndarray:
        mask = self.hit
        return self.origin + self.t[mask, None] * self.directions[mask]


def cast_rays(
    origin: np.ndarray,
    directions: np.ndarray,
    meshes: list[tuple[np.ndarray, np.ndarray]],
    max_range: float,
    ground: bool = True,
) -> RayHits:
    """Nearest intersection of every ray with world-frame meshes and z=0.

    ``meshes`` holds (world vertices, faces) pairs; degenerate faces are
    skipped and each mesh is culled by its bounding box first.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(directions, dtype=np.float64)
    n = len(dirs)
    t = np.full(n, np.inf)
    surface = np.full(n, NO_SURFACE, dtype=np.int64)
    tri = np.full(n, -1, dtype=np.int64)
    u = np.zeros(n)
    v = np.zeros(n)

    if ground and origin[2] > 0:
        down = dirs[:, 2] < -1e-15
        t_ground = np.full(n, np.inf)
        t_ground[down] = -origin[2] / dirs[down, 2]
        keep = t_ground <= max_range
        t[keep] = t_ground[keep]
        surface[keep] = GROUND_SURFACE

    for index, (vertices, faces) in enumerate(meshes):
        if len(faces) == 0:
            continue
        corners = vertices[faces]
        e1 = corners[:, 1] - corners[:, 0]
        e2 = corners[:, 2] - corners[:, 0]
        valid = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1) >= DEGENERATE_AREA
        if not np.any(valid):
            continue
        face_ids = np.flatnonzero(valid)
        limit = np.minimum(t, max_range)
        rays = slab_candidates(origin, dirs, vertices.min(axis=0), vertices.max(axis=0), limit)
        if len(rays) == 0:
            continue
        bt, bk, bu, bv = _nearest_hits(
            origin,
            np.ascontiguousarray(dirs[rays]),
            np.ascontiguousarray(corners[face_ids, 0]),
            np.ascontiguousarray(e1[face_ids]),
            np.ascontiguousarray(e2[face_ids]),
            np.ascontiguousarray(limit[rays]),
        )
        better = bk >= 0
        idx = rays[better]
        t[idx] = bt[better]
        surface[idx] = index
        tri[idx] = face_ids[bk[better]]
        u[idx] = bu[better]
        v[idx] = bv[better]

    return RayHits(origin, dirs, t, surface, tri, u, v)


# -- LiDAR -------------------------------------------------------------------


@dataclass(frozen=True)
class LidarSpec:
    """Spinning LiDAR: channels spread over the vertical FOV, 360 deg sweep."""

    channel_count: int = 64
    vertical_fov: tuple[float, float] = (-25.0, 5.0)
    horizontal_step: float = 0.2
    max_range: float = 70.0
    mount_height: float = 1.8

    def __post_init__(self) -> None:
        if self.channel_count < 1:
            raise GeometryError("channel_count must be >= 1")
        if self.max_range <= 0:
            raise GeometryError("max_range must be positive")
        low, high = self.vertical_fov
        if not low < high:
            raise GeometryError("vertical FOV minimum must be below its maximum")
        if not 0 < self.horizontal_step <= 360:
            raise GeometryError("horizontal_step must lie in (0, 360]")
        object.__setattr__(self, "vertical_fov", (float(low), float(high)))

    @classmethod
    def from_dict(cls, data: dict) -> LidarSpec:
        return cls(
            channel_count=int(data.get("channel_count", 64)),
            vertical_fov=tuple(data.get("vertical_fov", (-25.0, 5.0))),
            horizontal_step=float(data.get("horizontal_step", 0.2)),
            max_range=float(data.get("max_range", 70.0)),
            mount_height=float(data.get("mount_height", 1.8)),
        )

    def to_dict(self) -> dict:
        return {
            "channel_count": self.channel_count,
            "vertical_fov": list(self.vertical_fov),
            "horizontal_step": self.horizontal_step,
            "max_range": self.max_range,
            "mount_height": self.mount_height,
        }

    def elevations(self) -> np.ndarray:
        low, high = self.vertical_fov
        if self.channel_count == 1:
            return np.array([0.5 * (low + high)])
        return np.linspace(low, high, self.channel_count)

    def azimuths(self) -> np.ndarray:
        count = max(1, int(round(360.0 / self.horizontal_step)))
        return np.arange(count) * self.horizontal_step

    def beam_directions(self, yaw: float = 0.0) -> np.ndarray:
        """Unit beams, channel-major, azimuths measured from the sensor heading."""
        el, az = np.meshgrid(
            np.radians(self.elevations()), yaw + np.radians(self.azimuths()), indexing="ij"
        )
        dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
        return dirs.reshape(-1, 3)


class CoordinateFrame(str, Enum):
    WORLD = "world"
    SENSOR = "sensor"


@dataclass(frozen=True, eq=False)
class PointCloud:
    """LiDAR returns tagged with the surface they landed on."""

    points: np.ndarray
    frame_id: int
    agent_id: str
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sensor_yaw: float = 0.0
    coordinate_frame: CoordinateFrame = CoordinateFrame.WORLD
    surface_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise GeometryError("point coordinates must be finite")
        surfaces = (
            np.full(len(points), GROUND_SURFACE, dtype=np.int64)
            if self.surface_ids is None
            else np.asarray(self.surface_ids, dtype=np.int64)
        )
        if surfaces.shape != (len(points),):
            raise GeometryError("surface_ids must have one entry per point")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "coordinate_frame", CoordinateFrame(self.coordinate_frame))
        object.__setattr__(self, "surface_ids", surfaces)

    def __len__(self) -> int:
        return len(self.points)

    def _sensor_pose(self) -> Pose:
        return Pose(tuple(self.origin), self.sensor_yaw)

    def to_world(self) -> PointCloud:
        if self.coordinate_frame is CoordinateFrame.WORLD:
            return self
        return self._reframed(self._sensor_pose().to_world(self.points), CoordinateFrame.WORLD)

    def to_sensor(self) -> PointCloud:
        if self.coordinate_frame is CoordinateFrame.SENSOR:
            return self
        return self._reframed(self._sensor_pose().to_local(self.points), CoordinateFrame.SENSOR)

    def select(self, keep: np.ndarray) -> PointCloud:
        return PointCloud(
            self.points[keep],
            self.frame_id,
            self.agent_id,
            self.origin,
            self.sensor_yaw,
            self.coordinate_frame,
            self.surface_ids[keep],
        )

    def _reframed(self, points: np.ndarray, frame: CoordinateFrame) -> PointCloud:
        return PointCloud(
            points, self.frame_id, self.agent_id, self.origin, self.sensor_yaw, frame, self.surface_ids
        )


def cast_lidar(
    scene_meshes: list[tuple[TriangleMesh, Pose]],
    sensor_pose: Pose,
    spec: LidarSpec,
    frame_id: int = 0,
    agent_id: str = "",
) -> PointCloud:
    """Simulate one sweep against posed meshes and the z=0 ground plane.

    ``sensor_pose`` is the sensor itself (already raised by the mount
    height). The cloud is returned in the world frame with one point per
    beam that hit something within range.
    """
    if sensor_pose.position[2] <= 0:
        raise GeometryError("the sensor must sit above the ground plane")
    dirs = spec.beam_directions(sensor_pose.yaw)
    world = [(mesh.transformed(pose), mesh.faces) for mesh, pose in scene_meshes]
    hits = cast_rays(sensor_pose.xyz, dirs, world, spec.max_range)
    keep = hits.hit
    return PointCloud(
        hits.points(),
        frame_id,
        agent_id,
        origin=sensor_pose.xyz,
        sensor_yaw=sensor_pose.yaw,
        coordinate_frame=CoordinateFrame.WORLD,
        surface_ids=hits.surface[keep],
    )

