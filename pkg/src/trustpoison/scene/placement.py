"""Placement protocol for the adversarial object."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from trustpoison.config import load_constants
from trustpoison.geometry.boxes import box_from_mesh
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.geometry.pose import Pose
from trustpoison.scene.models import Scene
from trustpoison.scene.render import object_region_returns, render_world, view_angle

logger = logging.getLogger(__name__)


class PlacementCondition(str, Enum):
    DISTANCE = "distance"  # within max_distance of the victim
    REAR_FACING = "rear_facing"  # victim inside the rear cone
    VISIBILITY = "visibility"  # seen by the victim and one non-victim


@dataclass(frozen=True)
class PlacementRules:
    max_distance: float = 40.0
    vulnerable_half_angle: float = 5.0
    min_returns: int = 5
    footprint_margin: float = 0.2

    @classmethod
    def from_constants(cls, constants: dict | None = None) -> PlacementRules:
        constants = constants or load_constants()
        placement = constants["placement"]
        return cls(
            max_distance=placement["max_distance"],
            vulnerable_half_angle=constants["views"]["vulnerable_half_angle"],
            min_returns=placement["min_returns"],
            footprint_margin=placement["footprint_margin"],
        )


@dataclass(frozen=True, eq=False)
class PlacementResult:
    accepted: bool
    scene: Scene | None = None
    failed_condition: PlacementCondition | None = None
    frame: int | None = None
    detail: str = ""


def frame_geometry_ok(
    victim: Pose, obj: Pose, rules: PlacementRules
) -> tuple[PlacementCondition | None, str]:
    """Distance and rear-facing checks for one frame."""
    distance = float(np.hypot(*(victim.xy - obj.xy)))
    if distance > rules.max_distance:
        return PlacementCondition.DISTANCE, f"object {distance:.2f} m from the victim"
    angle = view_angle(victim, obj)
    if angle > rules.vulnerable_half_angle:
        return PlacementCondition.REAR_FACING, f"victim at view angle {angle:.2f} deg"
    return None, ""


def frame_visibility_ok(scene: Scene, frame: int, rules: PlacementRules) -> tuple[bool, str]:
    """Enough object-region returns for the victim and for at least one non-victim."""
    box = box_from_mesh(scene.target_object.mesh, scene.target_object.poses[frame])

    def returns(agent_id: str) -> int:
        cloud = render_world(scene, agent_id, frame)
        return object_region_returns(cloud, box, rules.footprint_margin)

    victim_returns = returns(scene.victim.id)
    if victim_returns < rules.min_returns:
        return False, f"victim sees {victim_returns} object-region returns"
    best = 0
    for agent in scene.non_victims:
        best = max(best, returns(agent.id))
        if best >= rules.min_returns:
            return True, ""
    return False, f"best non-victim sees {best} object-region returns"


def place_adversarial_object(
    scene: Scene,
    mesh: TriangleMesh,
    poses: list[Pose] | tuple[Pose, ...],
    rules: PlacementRules | None = None,
    check_visibility: bool = True,
) -> PlacementResult:
    """Validate the object against every frame and install it as the target.

    Each frame is checked for distance, then rear facing, then visibility;
    the first failure rejects the placement.
    """
    rules = rules or PlacementRules.from_constants()
    if len(poses) != scene.frame_count:
        raise ValueError(f"{len(poses)} poses for a {scene.frame_count}-frame scene")
    candidate = scene.with_target(mesh, poses)
    victim = scene.victim

    for frame in range(scene.frame_count):
        failed, detail = frame_geometry_ok(victim.poses[frame], poses[frame], rules)
        if failed is None and check_visibility:
            visible, detail = frame_visibility_ok(candidate, frame, rules)
            failed = None if visible else PlacementCondition.VISIBILITY
        if failed is not None:
            logger.debug("placement rejected at frame %d, condition (%s): %s", frame, failed.value, detail)
            return PlacementResult(False, None, failed, frame, detail)
    return PlacementResult(True, candidate)
