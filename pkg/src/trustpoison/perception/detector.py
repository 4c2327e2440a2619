"""Geometric BEV vehicle detector."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import expit

from trustpoison.geometry.boxes import OrientedBox
from trustpoison.perception.grid import BevGrid, GridSpec

DETECTION_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    """A vehicle box in the shared frame with its confidence."""

    center: tuple[float, float]
    size: tuple[float, float]
    yaw: float
    confidence: float
    agent_id: str = ""
    cells: int = 0

    def __post_init__(self) -> None:
        if min(self.size) <= 0:
            raise ValueError(f"detection size must be positive, got {self.size}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def box(self) -> OrientedBox:
        return OrientedBox(self.center, self.size, self.yaw)

    @classmethod
    def from_box(cls, box: OrientedBox, confidence: float, agent_id: str = "", cells: int = 0) -> Detection:
        return cls(box.center, box.size, box.yaw, confidence, agent_id, cells)

    def to_record(self) -> dict:
        record = self.box.to_record()
        record["confidence"] = round(self.confidence, 6)
        return record


def fit_box(points: np.ndarray, resolution: float) -> OrientedBox:
    """Principal-axis box around cell centers, padded by half a cell per side."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    mean = points.mean(axis=0)
    if len(points) > 1:
        _, vectors = np.linalg.eigh(np.cov((points - mean).T, bias=True))
        major = vectors[:, 1]
    else:
        major = np.array([1.0, 0.0])
    if major[0] < -1e-12 or (abs(major[0]) <= 1e-12 and major[1] < 0):
        major = -major
    minor = np.array([-major[1], major[0]])
    along = (points - mean) @ major
    across = (points - mean) @ minor
    center = mean + major * 0.5 * (along.max() + along.min()) + minor * 0.5 * (across.max() + across.min())
    length = along.max() - along.min() + resolution
    width = across.max() - across.min() + resolution
    yaw = math.atan2(major[1], major[0])
    if width > length:
        length, width = width, length
        yaw += 0.5 * math.pi
    return OrientedBox((center[0], center[1]), (length, width), yaw)


def complete_box(
    box: OrientedBox, origins: tuple[tuple[float, float, float], ...], anchor: tuple[float, float]
) -> OrientedBox:
    """Grow a partially observed box to at least the anchor vehicle size.

    The edge facing the nearest sensor stays put and growth along the
    bearing goes away from it; growth across the bearing is symmetric.
    """
    if not origins:
        return box
    center = np.asarray(box.center)
    sensors = np.asarray(origins, dtype=np.float64)[:, :2]
    offsets = center - sensors
    nearest = offsets[np.argmin(np.hypot(offsets[:, 0], offsets[:, 1]))]
    norm = float(np.hypot(*nearest))
    if norm < 1e-9:
        return box
    bearing = nearest / norm

    major, minor = box.axes()
    if abs(major @ bearing) >= abs(minor @ bearing):
        along, perp, ext_along, ext_perp = major, minor, box.size[0], box.size[1]
    else:
        along, perp, ext_along, ext_perp = minor, major, box.size[1], box.size[0]
    if along @ bearing < 0:
        along = -along

    anchor_length, anchor_width = anchor
    # a broadside view shows more than the midpoint of the two anchor sides
    if ext_perp > 0.5 * (anchor_length + anchor_width):
        want_along, want_perp = anchor_width, anchor_length
    else:
        want_along, want_perp = anchor_length, anchor_width
    new_along = max(ext_along, want_along)
    new_perp = max(ext_perp, want_perp)
    near_edge = center - along * 0.5 * ext_along
    new_center = near_edge + along * 0.5 * new_along

    if new_along >= new_perp:
        size, axis = (new_along, new_perp), along
    else:
        size, axis = (new_perp, new_along), perp
    return OrientedBox((new_center[0], new_center[1]), size, math.atan2(axis[1], axis[0]))


def confidence(cell_count: float, fill_ratio: float, spec: GridSpec) -> float:
    a, b = spec.confidence_scale
    return float(expit(a * (cell_count - spec.min_cluster_cells + 0.5) + b * fill_ratio))


def detect(grid: BevGrid, spec: GridSpec | None = None, threshold: float = DETECTION_THRESHOLD) -> list[Detection]:
    """Vehicle boxes from 4-connected clusters of occupied cells.

    Sorted by confidence, then center, so output order is deterministic.
    """
    spec = spec or grid.spec
    labels, n_labels = ndimage.label(grid.occupied)
    if n_labels == 0:
        return []
    centers = spec.cell_centers()
    cell_area = spec.resolution**2
    sizes = np.bincount(labels.ravel(), minlength=n_labels + 1)

    detections = []
    for label in range(1, n_labels + 1):
        n = int(sizes[label])
        if n < spec.min_cluster_cells:
            continue
        fitted = fit_box(centers[labels == label], spec.resolution)
        if fitted.size[0] > spec.max_box_length or fitted.size[1] > spec.max_box_width:
            continue
        fill = min(n * cell_area / fitted.area, 1.0)
        score = confidence(n, fill, spec)
        if score < threshold:
            continue
        box = complete_box(fitted, grid.origins, spec.anchor_size)
        detections.append(Detection.from_box(box, score, grid.agent_id, n))

    detections.sort(key=lambda d: (-d.confidence, d.center[0], d.center[1]))
    return detections
