"""Differentiable stand-in for the detector, used to optimize meshes.

Hard binning becomes quadratic B-spline point-to-cell weights, the height
band becomes a product of logistic ramps and occupancy saturates smoothly
with point mass. Beam directions are held fixed; a hit point moves with
the triangle it lands on, which gives the vertex gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from trustpoison.config import load_constants
from trustpoison.geometry.boxes import box_from_mesh
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import LidarSpec, cast_rays, slab_candidates
from trustpoison.perception.grid import GridSpec, dilate_cells, footprint_cells, traverse_cells
from trustpoison.scene.models import TARGET_SURFACE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurrogateSettings:
    temperature: float = 0.05
    occupancy_scale: float = 0.5
    window_margin_cells: int = 1

    @classmethod
    def from_constants(cls, constants: dict | None = None) -> SurrogateSettings:
        raw = (constants or load_constants())["surrogate"]
        return cls(raw["temperature"], raw["occupancy_scale"], int(raw["window_margin_cells"]))


@dataclass(frozen=True, eq=False)
class TrainingContext:
    """Everything around the optimized mesh: sensor, grid and static meshes."""

    grid: GridSpec
    lidar: LidarSpec
    statics: tuple[tuple[TriangleMesh, Pose], ...] = ()
    settings: SurrogateSettings = field(default_factory=SurrogateSettings)

    @classmethod
    def default(
        cls,
        lidar: LidarSpec | None = None,
        grid: GridSpec | None = None,
        statics: tuple[tuple[TriangleMesh, Pose], ...] = (),
    ) -> TrainingContext:
        constants = load_constants()
        return cls(
            grid or GridSpec.from_constants(constants),
            lidar or LidarSpec.from_dict(constants["lidar"]),
            tuple(statics),
            SurrogateSettings.from_constants(constants),
        )


def target_region(ctx: TrainingContext, mesh: TriangleMesh, pose: Pose) -> np.ndarray:
    """Footprint of the undeformed mesh, dilated by the window margin."""
    base = TriangleMesh(mesh.init_vertices, mesh.faces)
    cells = footprint_cells(ctx.grid, box_from_mesh(base, pose))
    return dilate_cells(cells, ctx.settings.window_margin_cells)


def _bspline(coord: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell indices, weights and df-derivatives of the 3-tap quadratic B-spline."""
    nearest = np.rint(coord)
    f = coord - nearest
    index = nearest.astype(np.int64)[:, None] + np.array([-1, 0, 1])
    weights = np.stack([0.5 * (0.5 - f) ** 2, 0.75 - f**2, 0.5 * (0.5 + f) ** 2], axis=1)
    slopes = np.stack([-(0.5 - f), -2.0 * f, 0.5 + f], axis=1)
    return index, weights, slopes


@dataclass(frozen=True, eq=False)
class SoftBev:
    """Soft occupancy over a cell region for one view, with its backward pass."""

    occupancy: np.ndarray
    mass: np.ndarray
    region: np.ndarray
    observed: np.ndarray
    target_hits: int
    surface: np.ndarray
    tri: np.ndarray
    ctx: TrainingContext
    _cache: dict = field(repr=False, default_factory=dict)

    def backward(self, grad_occupancy: np.ndarray) -> np.ndarray:
        """Chain dL/d(occupancy) back to local-frame vertex gradients (N, 3)."""
        c = self._cache
        world, faces, rotation = c["world"], c["faces"], c["rotation"]
        grad_world = np.zeros_like(world)
        if self.target_hits == 0:
            return grad_world
        res = self.ctx.grid.resolution
        kappa = self.ctx.settings.occupancy_scale
        q = np.asarray(grad_occupancy) * np.exp(-self.mass / kappa) / kappa * self.region

        ix, wx, dwx = c["x"]
        iy, wy, dwy = c["y"]
        beta, dbeta = c["beta"], c["dbeta"]
        nx, ny = self.ctx.grid.shape
        grad_p = np.zeros((len(beta), 3))
        for a in range(3):
            for b in range(3):
                cx, cy = ix[:, a], iy[:, b]
                inside = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
                qc = np.zeros(len(beta))
                qc[inside] = q[cx[inside], cy[inside]]
                grad_p[:, 0] += qc * beta * dwx[:, a] * wy[:, b] / res
                grad_p[:, 1] += qc * beta * wx[:, a] * dwy[:, b] / res
                grad_p[:, 2] += qc * dbeta * wx[:, a] * wy[:, b]

        on_target = c["hit_surface"] == TARGET_SURFACE
        dirs = c["dirs"][on_target]
        along = np.einsum("ij,ij->i", grad_p[on_target], dirs)
        corners = faces[c["hit_tri"][on_target]]
        v0, v1, v2 = (world[corners[:, k]] for k in range(3))
        normal = np.cross(v1 - v0, v2 - v0)
        n_dot_d = np.einsum("ij,ij->i", normal, dirs)
        ok = np.abs(n_dot_d) > 1e-12 * np.linalg.norm(normal, axis=1)
        coef = np.where(ok, along / np.where(ok, n_dot_d, 1.0), 0.0)
        u, v = c["hit_u"][on_target], c["hit_v"][on_target]
        for k, bary in enumerate((1.0 - u - v, u, v)):
            np.add.at(grad_world, corners[:, k], (coef * bary)[:, None] * normal)
        return grad_world @ rotation


def soft_bev(
    ctx: TrainingContext,
    mesh: TriangleMesh,
    pose: Pose,
    view: Pose,
    region: np.ndarray | None = None,
) -> SoftBev:
    """Soft occupancy of ``region`` seen from the vehicle pose ``view``.

    The mesh is surface 0; ``ctx.statics`` and the ground are cast too.
    Only beams that can land in the region's column are traced.
    """
    spec, settings = ctx.grid, ctx.settings
    if region is None:
        region = target_region(ctx, mesh, pose)
    region = np.asarray(region, dtype=bool)
    shape = spec.shape
    world = pose.to_world(mesh.vertices)
    cache = {"world": world, "faces": mesh.faces, "rotation": pose.rotation()}

    def empty() -> SoftBev:
        zeros = np.zeros(shape)
        return SoftBev(
            zeros, zeros, region, np.zeros(shape, dtype=bool), 0, np.zeros(0, np.int64),
            np.zeros(0, np.int64), ctx, cache,
        )

    rx, ry = np.nonzero(region)
    if len(rx) == 0:
        return empty()

    sensor = view.raised(ctx.lidar.mount_height)
    origin = sensor.xyz
    dirs = ctx.lidar.beam_directions(sensor.yaw)
    x0, _, y0, _ = spec.extent
    res = spec.resolution
    z_top = spec.occupancy_height_band[1] + 10.0 * settings.temperature
    lo = np.array([x0 + (rx.min() - 1) * res, y0 + (ry.min() - 1) * res, -1e-6])
    hi = np.array([x0 + (rx.max() + 2) * res, y0 + (ry.max() + 2) * res, z_top])
    limit = np.full(len(dirs), ctx.lidar.max_range)
    rays = slab_candidates(origin, dirs, lo, hi, limit)
    if len(rays) == 0:
        return empty()

    meshes = [(world, mesh.faces)] + [(m.transformed(p), m.faces) for m, p in ctx.statics]
    hits = cast_rays(origin, dirs[rays], meshes, ctx.lidar.max_range)
    hit = hits.hit
    points = hits.points()
    z = points[:, 2]
    low, high = spec.occupancy_height_band
    tau = settings.temperature
    rise, fall = expit((z - low) / tau), expit((high - z) / tau)
    beta = rise * fall
    dbeta = beta * ((1.0 - rise) - (1.0 - fall)) / tau

    x = _bspline((points[:, 0] - x0) / res - 0.5)
    y = _bspline((points[:, 1] - y0) / res - 0.5)
    mass = np.zeros(shape)
    nx, ny = shape
    for a in range(3):
        for b in range(3):
            cx, cy = x[0][:, a], y[0][:, b]
            inside = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
            np.add.at(mass, (cx[inside], cy[inside]), (beta * x[1][:, a] * y[1][:, b])[inside])
    mass *= region
    occupancy = (1.0 - np.exp(-mass / settings.occupancy_scale)) * region

    observed = traverse_cells(spec, origin, points, spec.free_space_ceiling)
    hx, hy, inside = spec.cell_of(points[:, :2])
    observed[hx[inside], hy[inside]] = True
    observed &= region

    cache.update(
        x=x,
        y=y,
        beta=beta,
        dbeta=dbeta,
        dirs=hits.directions[hit],
        hit_surface=hits.surface[hit],
        hit_tri=hits.tri[hit],
        hit_u=hits.u[hit],
        hit_v=hits.v[hit],
    )
    target_hits = int(np.count_nonzero(hits.surface[hit] == TARGET_SURFACE))
    return SoftBev(
        occupancy, mass, region, observed, target_hits, hits.surface[hit], hits.tri[hit], ctx, cache
    )


@dataclass(frozen=True, eq=False)
class SmoothConfidence:
    confidence: float
    gradient: np.ndarray
    logit: float
    logit_gradient: np.ndarray
    hits: int
    flagged: bool = False
    soft: SoftBev | None = None


def smooth_confidence(
    ctx: TrainingContext,
    mesh: TriangleMesh,
    pose: Pose,
    view: Pose,
    region: np.ndarray | None = None,
) -> SmoothConfidence:
    """Target confidence and its gradient w.r.t. local mesh vertices.

    No beam on the mesh gives confidence 0 with a zero gradient, flagged.
    """
    soft = soft_bev(ctx, mesh, pose, view, region)
    cells = int(np.count_nonzero(soft.region))
    if soft.target_hits == 0 or cells == 0:
        logger.warning("smooth_confidence: no beam hits the mesh from view %s", view.to_record())
        zeros = np.zeros((mesh.vertex_count, 3))
        return SmoothConfidence(0.0, zeros, -np.inf, zeros, 0, True, soft)

    spec = ctx.grid
    a, b = spec.confidence_scale
    total = float(soft.occupancy.sum())
    logit = a * (total - spec.min_cluster_cells + 0.5) + b * total / cells
    conf = float(expit(logit))
    logit_gradient = soft.backward((a + b / cells) * soft.region)
    return SmoothConfidence(
        conf, conf * (1.0 - conf) * logit_gradient, logit, logit_gradient, soft.target_hits, False, soft
    )
