"""Self-reflection trust masks.

Every agent re-runs the deployed defense's scoring rule with itself as
the inspected subject. Two consecutive frames in which it would be
flagged activate a mask over the region the defense blames; from the next
frame on, that region is left out of trust scoring and of fusion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from trustpoison.config import load_constants
from trustpoison.defenses.base import DefenseInputs, DefenseKind, Track
from trustpoison.defenses.cad import cad_check, conflict_region, single_vehicle_disagreement
from trustpoison.defenses.lucia import lucia_scores, pool
from trustpoison.defenses.made import MadeCalibration, made_check, reconstruction_residual
from trustpoison.defenses.mate import PsmSign, frame_psms
from trustpoison.defenses.occupancy import occupancy_from_cloud, occupancy_from_grid
from trustpoison.geometry.boxes import box_iou
from trustpoison.geometry.raycast import PointCloud
from trustpoison.perception.detector import Detection
from trustpoison.perception.fusion import DEFAULT_ASSOCIATION_IOU
from trustpoison.perception.grid import BevGrid, GridSpec, bev_feature, dilate_cells, footprint_cells

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrustMask:
    agent_id: str
    frame_id: int
    masked_cells: np.ndarray | None = None
    masked_track_ids: frozenset[int] = frozenset()
    active: bool = False

    @property
    def has_cells(self) -> bool:
        return self.active and self.masked_cells is not None and bool(np.any(self.masked_cells))

    def to_record(self) -> dict:
        cells = np.argwhere(self.masked_cells).tolist() if self.has_cells else []
        return {
            "agent": self.agent_id,
            "frame": self.frame_id,
            "cells": cells,
            "tracks": sorted(self.masked_track_ids) if self.active else [],
            "active": self.active,
        }


@dataclass(frozen=True, eq=False)
class ReflectionState:
    """Per-agent reflection progress along one trajectory.

    ``region`` and ``tracks`` hold the latest localized inconsistency; once
    ``activation_frame`` is set the mask stays on through the last frame.
    """

    counter: int = 0
    activation_frame: int | None = None
    region: np.ndarray | None = None
    tracks: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.counter < 0:
            raise ValueError("reflection counter must be >= 0")

    def mask(self, agent_id: str, frame: int) -> TrustMask:
        active = self.activation_frame is not None and frame >= self.activation_frame
        if not active:
            return TrustMask(agent_id, frame)
        return TrustMask(agent_id, frame, self.region, self.tracks, True)


@dataclass(frozen=True)
class ReflectionSettings:
    activation_frames: int = 2
    residual_threshold: float = 0.5
    mask_dilation_cells: int = 5
    trust_threshold: float = 0.1
    track_count: int = 5
    visibility_fraction: float = 0.3
    association_iou: float = DEFAULT_ASSOCIATION_IOU
    compression_ratio: int = 1

    @classmethod
    def from_constants(cls, constants: dict | None = None, **overrides) -> ReflectionSettings:
        constants = constants or load_constants()
        m = constants["mitigation"]
        settings = cls(
            activation_frames=int(m["activation_frames"]),
            residual_threshold=float(m["residual_threshold"]),
            mask_dilation_cells=int(m["mask_dilation_cells"]),
            trust_threshold=float(constants["lucia"]["trust_threshold"]),
            track_count=int(constants["mate"]["default_track_count"]),
            visibility_fraction=float(constants["mate"]["visibility_fraction"]),
            association_iou=float(constants["fusion"]["association_iou"]),
            compression_ratio=int(constants["lucia"]["compression_ratio"]),
        )
        return replace(settings, **overrides)


def ego_reconstruction(cloud: PointCloud, spec: GridSpec) -> np.ndarray:
    """Occupancy re-derived from one agent's cloud at twice the resolution, mean-pooled back."""
    fine = bev_feature(cloud, replace(spec, resolution=spec.resolution / 2))
    nx, ny = spec.shape
    return pool(fine.occupancy, 2)[:nx, :ny]


def _localize(
    inputs: DefenseInputs,
    agent_id: str,
    kind: DefenseKind,
    settings: ReflectionSettings,
    calibration: MadeCalibration | None,
    cloud: PointCloud | None,
) -> tuple[np.ndarray | None, frozenset[int]]:
    """Region the defense would blame on ``agent_id`` this frame, or empty.

    The flag comes from the deployed defense; the region comes from the
    agent's own data, so peers alone never decide which cells it masks.
    """
    grids = inputs.grids
    own = grids[agent_id]
    cells: np.ndarray | None = None
    if kind is DefenseKind.CAD:
        maps = {a: occupancy_from_grid(g) for a, g in grids.items()}
        verdict = cad_check(maps, inputs.boxes, inputs.ignore_cells, inputs.frame)
        if verdict.flagged_agent != agent_id:
            return None, frozenset()
        baseline = occupancy_from_cloud(cloud, own.spec) if cloud is not None else maps[agent_id]
        disputed = dilate_cells(conflict_region(maps, inputs.ignore_cells), settings.mask_dilation_cells)
        cells = single_vehicle_disagreement(baseline, inputs.boxes.get(agent_id, [])) & disputed

    elif kind is DefenseKind.MATE:
        psms = frame_psms(inputs, settings.track_count, settings.visibility_fraction, settings.association_iou)
        tracks = frozenset(
            p.source_track for p in psms if p.subject_agent == agent_id and p.sign is PsmSign.NEGATIVE
        )
        return None, tracks

    elif kind is DefenseKind.LUCIA:
        scores = lucia_scores(grids, settings.compression_ratio, inputs.ignore_cells)
        if scores.as_dict()[agent_id] >= settings.trust_threshold:
            return None, frozenset()
        if cloud is None:
            raise ValueError(f"agent '{agent_id}' needs its point cloud to reflect under LUCIA")
        cells = np.abs(own.occupancy - ego_reconstruction(cloud, own.spec)) > settings.residual_threshold

    else:
        verdicts = [
            made_check(grids, ego, calibration, inputs.fused, inputs.boxes, inputs.ignore_cells, frame=inputs.frame)
            for ego in grids
            if ego != agent_id
        ]
        if not any(v.flagged_agent == agent_id for v in verdicts):
            return None, frozenset()
        cells = reconstruction_residual(grids, agent_id) > calibration.recon_threshold

    if inputs.ignore_cells is not None:
        cells &= ~inputs.ignore_cells
    return cells, frozenset()


def self_reflect(
    inputs: DefenseInputs,
    agent_id: str,
    kind: DefenseKind | str,
    state: ReflectionState,
    calibration: MadeCalibration | None = None,
    settings: ReflectionSettings | None = None,
    cloud: PointCloud | None = None,
) -> tuple[TrustMask, ReflectionState]:
    """Run the local check for frame ``inputs.frame`` and advance the state.

    ``cloud`` is the agent's own raw cloud for the frame. CAD compares it
    with the agent's boxes, LUCIA rebuilds the agent's grid from it; MADE
    masks cells whose residual exceeds the calibrated quantile.

    The returned mask is the one that applies to the next frame, so a
    mask never depends on the frame it is applied to. The counter resets
    on any consistent frame; an activated mask is never switched off.
    """
    kind = DefenseKind(kind)
    settings = settings or ReflectionSettings.from_constants()
    frame = inputs.frame
    cells, tracks = _localize(inputs, agent_id, kind, settings, calibration, cloud)
    has_cells = cells is not None and bool(np.any(cells))
    if not (has_cells or tracks):
        state = replace(state, counter=0)
        return state.mask(agent_id, frame + 1), state

    region = dilate_cells(cells, settings.mask_dilation_cells) if has_cells else state.region
    state = replace(state, counter=state.counter + 1, region=region, tracks=state.tracks | tracks)
    if state.activation_frame is None and state.counter >= settings.activation_frames:
        state = replace(state, activation_frame=frame + 1)
        logger.info("agent %s: trust mask active from frame %d", agent_id, frame + 1)
    return state.mask(agent_id, frame + 1), state


def _active(masks: dict[str, TrustMask] | None) -> dict[str, TrustMask]:
    return {a: m for a, m in (masks or {}).items() if m.active}


def apply_mask(
    inputs: DefenseInputs, masks: dict[str, TrustMask] | None, kind: DefenseKind | str
) -> DefenseInputs:
    """Leave the masked regions out of the defense's evidence.

    CAD and LUCIA ignore cells any agent masked. MATE skips the PSMs an
    agent would receive on its own masked tracks. MADE drops each agent's
    masked cells and the boxes centered in them.
    """
    kind = DefenseKind(kind)
    masks = _active(masks)
    if not masks:
        return inputs
    if kind is DefenseKind.MATE:
        merged = {a: set(t) for a, t in inputs.masked_tracks.items()}
        for agent_id, mask in masks.items():
            merged.setdefault(agent_id, set()).update(mask.masked_track_ids)
        return inputs.with_changes(masked_tracks=merged)

    cell_masks = {a: m.masked_cells for a, m in masks.items() if m.has_cells}
    if not cell_masks:
        return inputs
    if kind is DefenseKind.MADE:
        merged = dict(inputs.masked_cells)
        for agent_id, cells in cell_masks.items():
            merged[agent_id] = cells if agent_id not in merged else (merged[agent_id] | cells)
        return inputs.with_changes(masked_cells=merged)

    ignore = np.logical_or.reduce(list(cell_masks.values()))
    if inputs.ignore_cells is not None:
        ignore = ignore | inputs.ignore_cells
    if np.all(ignore):
        logger.warning("frame %d: trust masks cover the whole grid", inputs.frame)
    return inputs.with_changes(ignore_cells=ignore)


def masked_fusion_guard(
    boxes: dict[str, list[Detection]],
    grids: dict[str, BevGrid],
    masks: dict[str, TrustMask] | None,
    tracks: list[Track] | None = None,
    association_iou: float = DEFAULT_ASSOCIATION_IOU,
) -> tuple[dict[str, list[Detection]], dict[str, BevGrid]]:
    """Remove each agent's data inside its own masked region before fusion.

    Boxes touching a masked cell or matching a masked track are dropped;
    masked cells leave the agent's grid, so feature fusion gives them no
    weight.
    """
    masks = _active(masks)
    if not masks:
        return boxes, grids
    by_id = {t.track_id: t for t in tracks or []}
    boxes, grids = dict(boxes), dict(grids)
    for agent_id, mask in masks.items():
        kept = boxes.get(agent_id, [])
        if mask.has_cells and agent_id in grids:
            spec = grids[agent_id].spec
            kept = [d for d in kept if not np.any(footprint_cells(spec, d.box) & mask.masked_cells)]
            grids[agent_id] = grids[agent_id].without_cells(mask.masked_cells)
        hidden = [by_id[t].box for t in mask.masked_track_ids if t in by_id]
        if hidden:
            kept = [d for d in kept if not any(box_iou(d.box, h) > association_iou for h in hidden)]
        if agent_id in boxes:
            boxes[agent_id] = kept
    return boxes, grids
