"""Planar vehicle poses in the shared world frame (x forward, y left, z up)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose:
    """Position in meters plus heading about +z.

    An object's local frame faces +x, so its rear axis points along -x.
    """

    position: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self) -> None:
        position = tuple(float(c) for c in self.position)
        if len(position) == 2:
            position = (*position, 0.0)
        if len(position) != 3 or not all(math.isfinite(c) for c in position):
            raise ValueError(f"pose position must be 2 or 3 finite values, got {self.position!r}")
        if not math.isfinite(self.yaw):
            raise ValueError(f"pose yaw must be finite, got {self.yaw!r}")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @classmethod
    def from_xy(cls, x: float, y: float, yaw_deg: float = 0.0, z: float = 0.0) -> Pose:
        return cls((x, y, z), math.radians(yaw_deg))

    @property
    def xyz(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position[:2], dtype=np.float64)

    @property
    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw)])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map local-frame points (N, 3) into the world frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation().T + self.xyz

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.xyz) @ self.rotation()

    def raised(self, height: float) -> Pose:
        x, y, z = self.position
        return Pose((x, y, z + height), self.yaw)

    def moved(self, dx: float, dy: float) -> Pose:
        x, y, z = self.position
        return Pose((x + dx, y + dy, z), self.yaw)

    def to_record(self) -> list[float]:
        x, y, _ = self.position
        return [round(x, 9), round(y, 9), round(math.degrees(self.yaw), 9)]
