"""Three-state occupancy maps derived from beam coverage."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from trustpoison.geometry.raycast import PointCloud
from trustpoison.perception.grid import BevGrid, GridSpec, bev_feature


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True, eq=False)
class OccupancyMap:
    spec: GridSpec
    cells: np.ndarray
    agent_id: str = ""

    @property
    def free(self) -> np.ndarray:
        return self.cells == CellState.FREE

    @property
    def occupied(self) -> np.ndarray:
        return self.cells == CellState.OCCUPIED

    @property
    def known(self) -> np.ndarray:
        return self.cells != CellState.UNKNOWN


def occupancy_from_grid(grid: BevGrid) -> OccupancyMap:
    cells = np.full(grid.spec.shape, CellState.UNKNOWN, dtype=np.int8)
    cells[grid.free] = CellState.FREE
    cells[grid.observed & grid.occupied] = CellState.OCCUPIED
    return OccupancyMap(grid.spec, cells, grid.agent_id)


def occupancy_from_cloud(cloud: PointCloud, spec: GridSpec) -> OccupancyMap:
    """Occupied where a return is in band; Free where swept without one; else Unknown."""
    return occupancy_from_grid(bev_feature(cloud, spec))
