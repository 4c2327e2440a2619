"""Bird's-eye-view grids: binning, beam traversal and cell windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy import ndimage

from trustpoison.config import load_constants
from trustpoison.geometry.boxes import OrientedBox
from trustpoison.geometry.raycast import PointCloud

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry plus the detector constants that read it."""

    extent: tuple[float, float, float, float] = (-35.0, 35.0, -35.0, 35.0)
    resolution: float = 0.4
    occupancy_height_band: tuple[float, float] = (0.3, 2.5)
    free_space_ceiling: float = 0.8
    min_cluster_cells: int = 6
    confidence_scale: tuple[float, float] = (0.25, 2.0)
    max_box_length: float = 7.0
    max_box_width: float = 3.5
    anchor_size: tuple[float, float] = (4.4, 1.8)

    def __post_init__(self) -> None:
        x_min, x_max, y_min, y_max = (float(v) for v in self.extent)
        if self.resolution <= 0:
            raise ValueError("grid resolution must be positive")
        if not (x_min < x_max and y_min < y_max):
            raise ValueError(f"empty grid extent {self.extent}")
        low, high = self.occupancy_height_band
        if not low < high:
            raise ValueError("occupancy height band must satisfy z_low < z_high")
        if self.min_cluster_cells < 1:
            raise ValueError("min_cluster_cells must be >= 1")
        object.__setattr__(self, "extent", (x_min, x_max, y_min, y_max))
        object.__setattr__(self, "occupancy_height_band", (float(low), float(high)))
        object.__setattr__(self, "confidence_scale", tuple(float(v) for v in self.confidence_scale))
        object.__setattr__(self, "anchor_size", tuple(float(v) for v in self.anchor_size))

    @classmethod
    def from_constants(cls, constants: dict | None = None) -> GridSpec:
        grid = (constants or load_constants())["grid"]
        return cls(
            extent=tuple(grid["extent"]),
            resolution=grid["resolution"],
            occupancy_height_band=tuple(grid["occupancy_height_band"]),
            free_space_ceiling=grid["free_space_ceiling"],
            min_cluster_cells=grid["min_cluster_cells"],
            confidence_scale=tuple(grid["confidence_scale"]),
            max_box_length=grid["max_box_length"],
            max_box_width=grid["max_box_width"],
            anchor_size=tuple(grid["anchor_size"]),
        )

    @property
    def shape(self) -> tuple[int, int]:
        x_min, x_max, y_min, y_max = self.extent
        return (
            int(round((x_max - x_min) / self.resolution)),
            int(round((y_max - y_min) / self.resolution)),
        )

    def cell_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Floor-binned (ix, iy) for (N, 2) points and an inside-extent flag."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.extent[0]) / self.resolution).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.extent[2]) / self.resolution).astype(np.int64)
        nx, ny = self.shape
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        return ix, iy, inside

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, 2) world coordinates of cell centers."""
        nx, ny = self.shape
        xs = self.extent[0] + (np.arange(nx) + 0.5) * self.resolution
        ys = self.extent[2] + (np.arange(ny) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def in_band(self, z: np.ndarray) -> np.ndarray:
        low, high = self.occupancy_height_band
        return (z >= low) & (z <= high)


@dataclass(frozen=True, eq=False)
class BevGrid:
    """Per-cell features in the shared world frame.

    ``occupancy`` is 0/1 for a single agent and a convex combination after
    feature fusion; a cell counts as occupied when it exceeds 0.5.
    ``observed`` marks cells swept below the free-space ceiling by at
    least one beam, plus every cell holding a return.
    """

    spec: GridSpec
    count: np.ndarray
    max_height: np.ndarray
    occupancy: np.ndarray
    observed: np.ndarray
    origins: tuple[tuple[float, float, float], ...] = ()
    dropped: int = 0
    agent_id: str = ""

    @classmethod
    def empty(cls, spec: GridSpec, agent_id: str = "") -> BevGrid:
        shape = spec.shape
        return cls(
            spec,
            np.zeros(shape),
            np.zeros(shape),
            np.zeros(shape),
            np.zeros(shape, dtype=bool),
            agent_id=agent_id,
        )

    @property
    def occupied(self) -> np.ndarray:
        return self.occupancy > 0.5

    @property
    def free(self) -> np.ndarray:
        return self.observed & ~self.occupied

    @property
    def covered(self) -> np.ndarray:
        """Cells holding at least one return."""
        return self.count > 0

    def features(self) -> np.ndarray:
        """(3, nx, ny) stack of count, max height and occupancy."""
        return np.stack([self.count, self.max_height, self.occupancy])

    def without_cells(self, cells: np.ndarray) -> BevGrid:
        """Drop the given cells: zero features and mark them unobserved."""
        keep = ~np.asarray(cells, dtype=bool)
        return replace(
            self,
            count=self.count * keep,
            max_height=self.max_height * keep,
            occupancy=self.occupancy * keep,
            observed=self.observed & keep,
        )


@njit(cache=True)
def _sweep(observed, origin, points, x_min, y_min, res, ceiling):
    nx, ny = observed.shape
    ox, oy, oz = origin[0], origin[1], origin[2]
    for n in range(points.shape[0]):
        px, py, pz = points[n, 0], points[n, 1], points[n, 2]
        if oz > ceiling:
            if pz >= ceiling:
                continue
            s = (oz - ceiling) / (oz - pz)
        else:
            s = 0.0
        fx = (ox + s * (px - ox) - x_min) / res
        fy = (oy + s * (py - oy) - y_min) / res
        ex = (px - x_min) / res
        ey = (py - y_min) / res
        ix = int(np.floor(fx))
        iy = int(np.floor(fy))
        jx = int(np.floor(ex))
        jy = int(np.floor(ey))
        dx = ex - fx
        dy = ey - fy
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            delta_x = abs(1.0 / dx)
            max_x = ((ix + 1 - fx) if dx > 0 else (fx - ix)) * delta_x
        else:
            delta_x = np.inf
            max_x = np.inf
        if dy != 0.0:
            delta_y = abs(1.0 / dy)
            max_y = ((iy + 1 - fy) if dy > 0 else (fy - iy)) * delta_y
        else:
            delta_y = np.inf
            max_y = np.inf
        for _ in range(abs(jx - ix) + abs(jy - iy) + 1):
            if 0 <= ix < nx and 0 <= iy < ny:
                observed[ix, iy] = True
            if ix == jx and iy == jy:
                break
            if max_x < max_y:
                max_x += delta_x
                ix += step_x
            else:
                max_y += delta_y
                iy += step_y


def traverse_cells(
    spec: GridSpec, origin: np.ndarray, points: np.ndarray, ceiling: float | None = None
) -> np.ndarray:
    """Cells crossed by origin-to-point segments below ``ceiling``.

    With ``ceiling=None`` the whole segment is traced (no height clip).
    """
    observed = np.zeros(spec.shape, dtype=bool)
    if len(points):
        _sweep(
            observed,
            np.asarray(origin, dtype=np.float64),
            np.ascontiguousarray(points, dtype=np.float64),
            spec.extent[0],
            spec.extent[2],
            spec.resolution,
            np.inf if ceiling is None else float(ceiling),
        )
    return observed


def bev_feature(cloud: PointCloud, spec: GridSpec) -> BevGrid:
    """Bin a cloud into a BevGrid; points outside the extent are dropped and counted."""
    cloud = cloud.to_world()
    points = cloud.points
    shape = spec.shape
    count = np.zeros(shape)
    max_height = np.zeros(shape)
    occupancy = np.zeros(shape)

    ix, iy, inside = spec.cell_of(points[:, :2])
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        logger.debug("bev_feature[%s]: %d points outside the grid extent", cloud.agent_id, dropped)
    ix, iy, z = ix[inside], iy[inside], points[inside, 2]
    np.add.at(count, (ix, iy), 1.0)
    np.maximum.at(max_height, (ix, iy), np.maximum(z, 0.0))
    band = spec.in_band(z)
    occupancy[ix[band], iy[band]] = 1.0

    observed = traverse_cells(spec, cloud.origin, points, spec.free_space_ceiling)
    observed[ix, iy] = True
    return BevGrid(
        spec,
        count,
        max_height,
        occupancy,
        observed,
        origins=(tuple(float(c) for c in cloud.origin),),
        dropped=dropped,
        agent_id=cloud.agent_id,
    )


def footprint_cells(spec: GridSpec, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of cells whose centers lie inside the (dilated) box."""
    centers = spec.cell_centers().reshape(-1, 2)
    return box.contains(centers, margin).reshape(spec.shape)


def dilate_cells(cells: np.ndarray, iterations: int) -> np.ndarray:
    if iterations <= 0 or not np.any(cells):
        return np.asarray(cells, dtype=bool).copy()
    return ndimage.binary_dilation(cells, iterations=iterations)


@dataclass(frozen=True)
class CellWindow:
    """Rectangular index window [x0, x1) x [y0, y1) into a grid."""

    x0: int
    x1: int
    y0: int
    y1: int

    @classmethod
    def around(cls, cells: np.ndarray, margin: int = 0) -> CellWindow:
        ix, iy = np.nonzero(cells)
        nx, ny = cells.shape
        if len(ix) == 0:
            return cls(0, 0, 0, 0)
        return cls(
            max(int(ix.min()) - margin, 0),
            min(int(ix.max()) + 1 + margin, nx),
            max(int(iy.min()) - margin, 0),
            min(int(iy.max()) + 1 + margin, ny),
        )

    @classmethod
    def centered(cls, center: tuple[int, int], half: int, shape: tuple[int, int]) -> CellWindow:
        cx, cy = center
        return cls(
            max(cx - half, 0), min(cx + half + 1, shape[0]), max(cy - half, 0), min(cy + half + 1, shape[1])
        )

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.x0, self.x1), slice(self.y0, self.y1)

    @property
    def size(self) -> int:
        return max(self.x1 - self.x0, 0) * max(self.y1 - self.y0, 0)

