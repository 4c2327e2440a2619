"""Online deployment: pick the scenario, the victim and the object's poses.

Scenarios are ranked by occlusion density and collaborator count. In the
chosen scene the victim is the collaborator behind the object that adds
the most sensing coverage nobody else has, and the object then follows
it lane by lane so the victim stays in the rear cone.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from trustpoison.config import load_constants
from trustpoison.geometry.pose import Pose, normalize_yaw
from trustpoison.perception.grid import GridSpec, bev_feature
from trustpoison.scene.models import Scene
from trustpoison.scene.placement import PlacementRules, frame_geometry_ok, frame_visibility_ok
from trustpoison.scene.render import coverage_masks, render_world, unique_coverage, view_angle

logger = logging.getLogger(__name__)

EXTENT_MARGIN = 15.0


@dataclass(frozen=True)
class ScoreWeights:
    omega_o: float = 1.0
    omega_c: float = 1.0
    occlusion_scale: float = 10.0

    @classmethod
    def from_constants(cls, constants: dict | None = None) -> ScoreWeights:
        d = (constants or load_constants())["deployment"]
        return cls(d["omega_o"], d["omega_c"], d["occlusion_scale"])


@dataclass(frozen=True, eq=False)
class ScenarioCandidate:
    id: str
    occlusion_density: float
    cav_count: int
    scene: Scene | None = None

    def __post_init__(self) -> None:
        if self.cav_count < 2:
            raise ValueError(f"candidate '{self.id}' needs at least 2 CAVs, got {self.cav_count}")
        if not 0.0 <= self.occlusion_density <= 1.0:
            raise ValueError("occlusion density must lie in [0, 1]")

    def score(self, weights: ScoreWeights) -> float:
        return weights.omega_o * weights.occlusion_scale * self.occlusion_density + weights.omega_c * self.cav_count


@dataclass(frozen=True)
class VictimSelection:
    victim_id: str | None
    feasible: bool
    reason: str = ""
    scores: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PosePlan:
    poses: tuple[Pose, ...]
    valid: tuple[bool, ...]

    @property
    def valid_frame_fraction(self) -> float:
        return sum(self.valid) / len(self.valid) if self.valid else 0.0


@dataclass(frozen=True)
class DeploymentPlan:
    scenario_id: str
    victim_id: str
    poses: tuple[Pose, ...]
    weights: ScoreWeights
    valid_frames: tuple[bool, ...]

    @property
    def valid_frame_fraction(self) -> float:
        return sum(self.valid_frames) / len(self.valid_frames) if self.valid_frames else 0.0

    def to_record(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "victim": self.victim_id,
            "poses": [p.to_record() for p in self.poses],
            "weights": {"omega_o": self.weights.omega_o, "omega_c": self.weights.omega_c},
            "valid_frames": list(self.valid_frames),
            "valid_frame_fraction": round(self.valid_frame_fraction, 6),
        }


def collaboration_extent(scene: Scene, frame: int, spec: GridSpec, margin: float = EXTENT_MARGIN) -> np.ndarray:
    """Cells inside the box around the collaborators' positions, padded by ``margin``."""
    xy = np.array([a.poses[frame].xy for a in scene.collaborators])
    lo, hi = xy.min(axis=0) - margin, xy.max(axis=0) + margin
    centers = spec.cell_centers()
    return (
        (centers[..., 0] >= lo[0]) & (centers[..., 0] <= hi[0])
        & (centers[..., 1] >= lo[1]) & (centers[..., 1] <= hi[1])
    )


def occlusion_density(scene: Scene, frame: int | None = None, spec: GridSpec | None = None) -> float:
    """Share of cells in the collaboration extent that no collaborator's beams reach.

    With ``frame=None`` the value is averaged over every frame.
    """
    spec = spec or GridSpec.from_constants()
    frames = range(scene.frame_count) if frame is None else [scene.check_frame(frame)]
    values = []
    for t in frames:
        extent = collaboration_extent(scene, t, spec)
        seen = np.zeros(spec.shape, dtype=bool)
        for agent_id in scene.collaborator_ids:
            seen |= bev_feature(render_world(scene, agent_id, t), spec).observed
        total = int(np.count_nonzero(extent))
        values.append(np.count_nonzero(extent & ~seen) / total if total else 0.0)
    return float(np.mean(values))


def candidate_from_scene(scene: Scene, spec: GridSpec | None = None, frame: int | None = 0) -> ScenarioCandidate:
    return ScenarioCandidate(scene.name, occlusion_density(scene, frame, spec), len(scene.collaborators), scene)


def score_scenarios(
    candidates: list[ScenarioCandidate], weights: ScoreWeights | None = None
) -> ScenarioCandidate:
    """Highest-scoring candidate; ties go to the lowest id."""
    if not candidates:
        raise ValueError("score_scenarios needs at least one candidate")
    weights = weights or ScoreWeights()
    return min(candidates, key=lambda c: (-c.score(weights), c.id))


def select_victim(
    scene: Scene,
    object_pose: Pose,
    frame: int = 0,
    spec: GridSpec | None = None,
    constants: dict | None = None,
) -> VictimSelection:
    """Victim = collaborator in the rear cone with the most unique coverage.

    Feasible only if another collaborator sees the object from the
    non-vulnerable set.
    """
    views = (constants or load_constants())["views"]
    half, separation = views["vulnerable_half_angle"], views["nonvulnerable_min_separation"]
    spec = spec or GridSpec.from_constants(constants)
    scene.check_frame(frame)
    angles = {a.id: view_angle(a.poses[frame], object_pose) for a in scene.collaborators}
    in_cone = sorted(a for a, angle in angles.items() if angle <= half)
    if not in_cone:
        return VictimSelection(None, False, "no collaborator inside the vulnerable cone")

    coverage = coverage_masks(scene, frame, spec)
    scores = {a: float(unique_coverage(scene, a, frame, spec, coverage)) for a in in_cone}
    victim = min(in_cone, key=lambda a: (-scores[a], a))
    if not any(angle >= separation for a, angle in angles.items() if a != victim):
        return VictimSelection(victim, False, "no other collaborator in the non-vulnerable view set", scores)
    return VictimSelection(victim, True, "", scores)


def _lane_coords(origin: Pose, point: np.ndarray) -> tuple[float, float]:
    offset = np.asarray(point) - origin.xy
    u = origin.heading
    n = np.array([-u[1], u[0]])
    return float(offset @ u), float(offset @ n)


def plan_object_poses(
    scene: Scene,
    victim_id: str,
    initial_pose: Pose,
    rules: PlacementRules | None = None,
    check_visibility: bool = True,
    constants: dict | None = None,
) -> PosePlan:
    """Follow the victim in the object's lane so it stays inside the rear cone.

    The object keeps its initial longitudinal gap to the victim, moves at
    most ``max_step`` per frame, stays within ``lane_half_width`` of the
    lane center and turns at most ``max_yaw_offset`` from the lane
    heading. A frame is valid when it passes the placement conditions and
    some non-victim views the object from the non-vulnerable set.
    """
    constants = constants or load_constants()
    d = constants["deployment"]
    rules = rules or PlacementRules.from_constants(constants)
    separation = constants["views"]["nonvulnerable_min_separation"]
    victim = scene.agent(victim_id)
    u = initial_pose.heading
    n = np.array([-u[1], u[0]])
    max_yaw = math.radians(d["max_yaw_offset"])
    s_victim0, _ = _lane_coords(initial_pose, victim.poses[0].xy)
    gap = -s_victim0

    poses: list[Pose] = []
    previous = initial_pose
    for t in range(scene.frame_count):
        s_v, l_v = _lane_coords(initial_pose, victim.poses[t].xy)
        lateral = float(np.clip(l_v, -d["lane_half_width"], d["lane_half_width"]))
        target_xy = initial_pose.xy + u * (s_v + gap) + n * lateral
        if t > 0:
            step = target_xy - previous.xy
            length = float(np.hypot(*step))
            if length > d["max_step"]:
                target_xy = previous.xy + step * (d["max_step"] / length)
        s_o, l_o = _lane_coords(initial_pose, target_xy)
        offset = float(np.clip(math.atan2(l_o - l_v, s_o - s_v), -max_yaw, max_yaw))
        pose = Pose((float(target_xy[0]), float(target_xy[1]), initial_pose.position[2]), normalize_yaw(initial_pose.yaw + offset))
        poses.append(pose)
        previous = pose

    valid = []
    for t, pose in enumerate(poses):
        failed, _ = frame_geometry_ok(victim.poses[t], pose, rules)
        watched = any(
            view_angle(a.poses[t], pose) >= separation for a in scene.collaborators if a.id != victim_id
        )
        valid.append(failed is None and watched)

    if check_visibility and any(valid):
        candidate = scene.with_target(scene.target_object.mesh, poses)
        for t in range(scene.frame_count):
            if valid[t]:
                valid[t], detail = frame_visibility_ok(candidate, t, rules)
                if not valid[t]:
                    logger.debug("frame %d: %s", t, detail)
    return PosePlan(tuple(poses), tuple(valid))


def plan_deployment(
    candidates: list[ScenarioCandidate],
    weights: ScoreWeights | None = None,
    check_visibility: bool = True,
    spec: GridSpec | None = None,
    constants: dict | None = None,
) -> DeploymentPlan | VictimSelection:
    """Score, select the victim at frame 0 and plan poses.

    Each candidate's scene supplies the object's initial pose as its
    target pose at frame 0. An infeasible victim selection is returned
    as-is.
    """
    weights = weights or ScoreWeights.from_constants(constants)
    best = score_scenarios(candidates, weights)
    if best.scene is None:
        raise ValueError(f"candidate '{best.id}' carries no scene")
    initial = best.scene.target_pose(0)
    selection = select_victim(best.scene, initial, 0, spec, constants)
    if not selection.feasible:
        logger.warning("scenario '%s' infeasible: %s", best.id, selection.reason)
        return selection
    plan = plan_object_poses(
        best.scene.with_victim(selection.victim_id),
        selection.victim_id,
        initial,
        check_visibility=check_visibility,
        constants=constants,
    )
    return DeploymentPlan(best.id, selection.victim_id, plan.poses, weights, plan.valid)


def save_plan(plan: DeploymentPlan, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(plan.to_record(), indent=2) + "\n", encoding="utf-8")
    return out
