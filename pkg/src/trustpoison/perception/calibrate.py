"""Offline calibration of the detector's logistic confidence.

Renders the benign car from a ring of azimuths and picks the smallest
cell-count slope that puts every view at or above the target confidence,
keeping the fill-ratio weight fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import logit

from trustpoison.config import load_constants, write_constants
from trustpoison.geometry.library import car_mesh
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import LidarSpec, cast_lidar
from trustpoison.perception.detector import fit_box
from trustpoison.perception.grid import GridSpec, bev_feature
from trustpoison.scene.render import observer_pose

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationSample:
    azimuth: float
    cells: int
    fill: float


def car_samples(
    spec: GridSpec, lidar: LidarSpec, distance: float = 10.0, azimuths: int = 36
) -> list[CalibrationSample]:
    """Largest occupied cluster of the car seen from ``azimuths`` evenly spaced views."""
    car = car_mesh()
    pose = Pose((0.0, 0.0, 0.0), 0.0)
    samples = []
    for k in range(azimuths):
        angle = -180.0 + 360.0 * k / azimuths
        view = observer_pose(pose, distance, angle)
        cloud = cast_lidar([(car, pose)], view.raised(lidar.mount_height), lidar)
        grid = bev_feature(cloud, spec)
        labels, n = ndimage.label(grid.occupied)
        if n == 0:
            samples.append(CalibrationSample(angle, 0, 0.0))
            continue
        sizes = np.bincount(labels.ravel())[1:]
        best = int(np.argmax(sizes)) + 1
        cells = int(sizes[best - 1])
        box = fit_box(spec.cell_centers()[labels == best], spec.resolution)
        fill = min(cells * spec.resolution**2 / box.area, 1.0)
        samples.append(CalibrationSample(angle, cells, fill))
    return samples


def calibrate_confidence(
    spec: GridSpec, samples: list[CalibrationSample], target: float = 0.9
) -> GridSpec:
    """Smallest slope ``a`` so that every sample reaches ``target`` confidence."""
    _, b = spec.confidence_scale
    needed = float(logit(target))
    slopes = []
    for s in samples:
        margin = s.cells - spec.min_cluster_cells + 0.5
        if margin <= 0:
            logger.warning("azimuth %.0f: only %d cells, below the cluster minimum", s.azimuth, s.cells)
            continue
        slopes.append((needed - b * s.fill) / margin)
    if not slopes:
        return spec
    a = max(max(slopes), 0.0)
    return replace(spec, confidence_scale=(math.ceil(a * 1e4) / 1e4, b))


def write_calibration(spec: GridSpec, path: str | Path) -> Path:
    constants = load_constants()
    constants["grid"]["confidence_scale"] = list(spec.confidence_scale)
    return write_constants(constants, path)
