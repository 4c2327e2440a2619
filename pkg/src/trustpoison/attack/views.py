"""Training views around an object placed at the origin."""

from __future__ import annotations

from trustpoison.config import load_constants
from trustpoison.geometry.pose import Pose
from trustpoison.scene.models import ViewSet
from trustpoison.scene.render import observer_pose

VICTIM_ANGLES = (-2.5, 0.0, 2.5)
NONVICTIM_ANGLES = (20.0, 45.0, 70.0, 90.0, 110.0, 135.0, 160.0, 180.0)
DISTANCES = (8.0, 15.0, 25.0)
OBJECT_POSE = Pose((0.0, 0.0, 0.0), 0.0)


def _signed(angles: tuple[float, ...]) -> list[float]:
    """Both sides of the rear axis; 0 and 180 appear once."""
    out: list[float] = []
    for angle in angles:
        for signed in (angle, -angle):
            if abs(signed) in (0.0, 180.0) and any(abs(o) == abs(signed) for o in out):
                continue
            out.append(signed)
    return out


def training_views(
    victim_angles: tuple[float, ...] = VICTIM_ANGLES,
    nonvictim_angles: tuple[float, ...] = NONVICTIM_ANGLES,
    distances: tuple[float, ...] = DISTANCES,
    object_pose: Pose = OBJECT_POSE,
    constants: dict | None = None,
) -> ViewSet:
    """Sample victim views inside the rear cone and non-victim views outside it.

    Victim angles are signed already; non-victim angles are mirrored to
    both sides of the object. Angles that fall outside their cone raise
    ``ValueError``.
    """
    views = (constants or load_constants())["views"]
    half = float(views["vulnerable_half_angle"])
    separation = float(views["nonvulnerable_min_separation"])
    if any(abs(a) > half for a in victim_angles):
        raise ValueError(f"victim view angles must lie within +-{half} deg")
    if any(abs(a) < separation for a in nonvictim_angles):
        raise ValueError(f"non-victim view angles must be at least {separation} deg from the rear axis")
    victim = [observer_pose(object_pose, d, a) for d in distances for a in victim_angles]
    nonvictim = [observer_pose(object_pose, d, a) for d in distances for a in _signed(nonvictim_angles)]
    return ViewSet(half, separation, tuple(victim), tuple(nonvictim))


def views_at(angle_deg: float, distances: tuple[float, ...] = DISTANCES) -> tuple[Pose, ...]:
    """Observer poses at one signed view angle, one per distance."""
    return tuple(observer_pose(OBJECT_POSE, d, angle_deg) for d in distances)
