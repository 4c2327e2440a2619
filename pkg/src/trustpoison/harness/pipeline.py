"""One trajectory end to end: sense, share, defend, reflect, fuse.

Sensing is done once per scene (:func:`sense_trajectory`); any number of
defense configurations can then be replayed over the same frames with
:func:`run_defense`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from trustpoison.config import load_constants
from trustpoison.defenses import Defense, DefenseInputs, get_defense
from trustpoison.defenses.made import MadeCalibration, benign_samples
from trustpoison.defenses.mate import Tracker
from trustpoison.geometry.boxes import OrientedBox
from trustpoison.geometry.raycast import PointCloud
from trustpoison.harness.baselines import BaselineKind, baseline_kind, remove_target_box, remove_target_points
from trustpoison.metrics import FrameRecord, fused_ap
from trustpoison.mitigation import ReflectionSettings, ReflectionState, apply_mask, masked_fusion_guard, self_reflect
from trustpoison.perception.detector import Detection, detect
from trustpoison.perception.fusion import feature_fuse, late_fuse
from trustpoison.perception.grid import BevGrid, GridSpec, bev_feature, footprint_cells
from trustpoison.scene.models import Scene
from trustpoison.scene.render import render_world, target_box

logger = logging.getLogger(__name__)


class FusionMode(str, Enum):
    LATE = "late"
    FEATURE = "feature"


@dataclass(eq=False)
class SensedFrame:
    frame: int
    clouds: dict[str, PointCloud]
    grids: dict[str, BevGrid]
    boxes: dict[str, list[Detection]]
    ground_truth: list[OrientedBox]
    target: OrientedBox


@dataclass(eq=False)
class Trajectory:
    scene: Scene
    frames: list[SensedFrame] = field(default_factory=list)

    @property
    def victim_id(self) -> str:
        return self.scene.victim.id


def sense_trajectory(
    scene: Scene, spec: GridSpec | None = None, baseline: BaselineKind | str | None = None
) -> Trajectory:
    """Render, grid and detect every collaborator in every frame.

    The removal baselines edit the victim's data here: point removal
    grounds its returns inside the target footprint, late removal deletes
    its target box.
    """
    spec = spec or GridSpec.from_constants()
    baseline = baseline_kind(baseline) if baseline is not None else None
    victim = scene.victim.id
    trajectory = Trajectory(scene)
    for t in range(scene.frame_count):
        target = target_box(scene, t)
        clouds, grids, boxes = {}, {}, {}
        for agent_id in scene.collaborator_ids:
            cloud = render_world(scene, agent_id, t)
            if baseline is BaselineKind.IDEAL_POINT_REMOVAL and agent_id == victim:
                cloud = remove_target_points(cloud, target)
            clouds[agent_id] = cloud
            grids[agent_id] = grid = bev_feature(cloud, spec)
            boxes[agent_id] = detect(grid, spec)
        if baseline is BaselineKind.IDEAL_LATE_REMOVAL:
            boxes[victim] = remove_target_box(boxes[victim], target)
        truth = list(scene.ground_truth_boxes[t].values())
        trajectory.frames.append(SensedFrame(t, clouds, grids, boxes, truth, target))
    return trajectory


def _fuse(
    mode: FusionMode,
    boxes: dict[str, list[Detection]],
    grids: dict[str, BevGrid],
    weights: dict[str, float] | None,
    spec: GridSpec,
    association_iou: float,
) -> list[Detection]:
    if mode is FusionMode.LATE:
        return late_fuse(boxes, weights, association_iou)
    return detect(feature_fuse(grids, weights), spec)


def run_defense(
    trajectory: Trajectory,
    defense: Defense | None,
    mitigation: bool = False,
    fusion: FusionMode | str = FusionMode.LATE,
    calibration: MadeCalibration | None = None,
    perfect_attack: bool = False,
    constants: dict | None = None,
) -> list[FrameRecord]:
    """Replay sensed frames through one defense and fuse under its weights.

    With ``mitigation`` every collaborator self-reflects after each frame
    and its trust mask, once active, filters both the defense evidence and
    the fusion inputs. ``perfect_attack`` drops the victim from fusion in
    every frame.
    """
    constants = constants or load_constants()
    fusion = FusionMode(fusion)
    scene = trajectory.scene
    ids = scene.collaborator_ids
    victim = trajectory.victim_id
    egos = [a for a in ids if a != victim]
    association_iou = constants["fusion"]["association_iou"]
    tracker = Tracker(gate=constants["mate"]["tracker_gate"])
    overrides = {}
    if defense is not None:
        defense.reset(ids)
        for name in ("track_count", "compression_ratio"):
            if getattr(defense, name, None):
                overrides[name] = getattr(defense, name)
    settings = ReflectionSettings.from_constants(constants, **overrides)
    states = {a: ReflectionState() for a in ids}

    records = []
    for sensed in trajectory.frames:
        t = sensed.frame
        spec = next(iter(sensed.grids.values())).spec
        shared = _fuse(fusion, sensed.boxes, sensed.grids, None, spec, association_iou)
        tracks = tracker.update(shared)
        inputs = DefenseInputs(t, sensed.grids, sensed.boxes, shared, tracks, egos=egos)
        masks = {a: states[a].mask(a, t) for a in ids} if mitigation else {}

        verdicts, weights = [], None
        if defense is not None:
            verdicts = defense.check(apply_mask(inputs, masks, defense.kind))
            weights = defense.fusion_weights(verdicts, ids)
        if perfect_attack:
            weights = {a: (0.0 if a == victim else (weights or {}).get(a, 1.0)) for a in ids}

        boxes, grids = masked_fusion_guard(sensed.boxes, sensed.grids, masks, tracks, association_iou)
        fused = _fuse(fusion, boxes, grids, weights, spec, association_iou)

        if mitigation and defense is not None:
            for agent_id in ids:
                _, states[agent_id] = self_reflect(
                    inputs, agent_id, defense.kind, states[agent_id], calibration, settings, sensed.clouds.get(agent_id)
                )

        seen_by_others = np.logical_or.reduce([sensed.grids[a].observed for a in egos])
        records.append(
            FrameRecord(
                frame_id=t,
                victim_id=victim,
                detections=sensed.boxes,
                fused=fused,
                ground_truth=sensed.ground_truth,
                target=sensed.target,
                verdicts=verdicts,
                masks={a: m for a, m in masks.items() if m.active},
                target_cells=footprint_cells(spec, sensed.target) & seen_by_others,
                trajectory=scene.name,
            )
        )
    return records


def run_trajectory(
    scene: Scene,
    defense: Defense | None,
    mitigation: bool = False,
    fusion: FusionMode | str = FusionMode.LATE,
    calibration: MadeCalibration | None = None,
    spec: GridSpec | None = None,
    constants: dict | None = None,
) -> list[FrameRecord]:
    return run_defense(
        sense_trajectory(scene, spec), defense, mitigation, fusion, calibration, constants=constants
    )


def run_baseline(
    kind: BaselineKind | str,
    scene: Scene,
    defense: Defense | None = None,
    fusion: FusionMode | str = FusionMode.LATE,
    calibration: MadeCalibration | None = None,
    spec: GridSpec | None = None,
    constants: dict | None = None,
) -> list[FrameRecord]:
    """Records of a reference run.

    ``perfect_attack`` removes the victim from fusion every frame; the two
    removal kinds edit the victim's own data before anything is shared.
    """
    kind = baseline_kind(kind)
    if kind is BaselineKind.PERFECT_ATTACK:
        return run_defense(
            sense_trajectory(scene, spec), defense, False, fusion, calibration, perfect_attack=True, constants=constants
        )
    return run_defense(sense_trajectory(scene, spec, kind), defense, False, fusion, calibration, constants=constants)


def fused_ap_under_defense(
    scene: Scene,
    defense_kind: str,
    mitigation_on: bool = False,
    fusion: FusionMode | str = FusionMode.LATE,
    calibration: MadeCalibration | None = None,
    spec: GridSpec | None = None,
    constants: dict | None = None,
    trajectory: Trajectory | None = None,
) -> float | None:
    """AP@0.5 of the fused output when fusion follows the defense's weights."""
    trajectory = trajectory or sense_trajectory(scene, spec)
    defense = get_defense(defense_kind, constants, calibration)
    return fused_ap(run_defense(trajectory, defense, mitigation_on, fusion, calibration, constants=constants))


def benign_made_samples(trajectory: Trajectory, fusion: FusionMode | str = FusionMode.LATE) -> list[tuple[float, float]]:
    """Raw MADE residuals of every collaborator in every frame, for calibration."""
    fusion = FusionMode(fusion)
    association_iou = load_constants()["fusion"]["association_iou"]
    samples = []
    for sensed in trajectory.frames:
        spec = next(iter(sensed.grids.values())).spec
        shared = _fuse(fusion, sensed.boxes, sensed.grids, None, spec, association_iou)
        samples.extend(benign_samples(DefenseInputs(sensed.frame, sensed.grids, sensed.boxes, shared)))
    return samples
