"""Bayesian agent trust from track-level pseudomeasurements.

Each agent's trust is the mean of a Beta(alpha, beta) posterior. Tracks an
agent confirms add positive evidence; tracks it should have seen but
missed add negative evidence.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from trustpoison.config import load_constants
from trustpoison.defenses.base import Defense, DefenseInputs, DefenseKind, DefenseVerdict, Track
from trustpoison.geometry.boxes import box_iou
from trustpoison.perception.detector import Detection
from trustpoison.perception.fusion import DEFAULT_ASSOCIATION_IOU
from trustpoison.perception.grid import BevGrid, footprint_cells

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = {1: 0.15, 3: 0.35, 5: 0.40, 10: 0.45}


class PsmSign(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Psm:
    subject_agent: str
    sign: PsmSign
    weight: float = 1.0
    source_track: int = -1

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ValueError("PSM weight must be positive")


@dataclass(frozen=True)
class TrustState:
    """Per-agent Beta parameters; trust = alpha / (alpha + beta)."""

    params: dict[str, tuple[float, float]]
    prior: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        if min(self.prior) <= 0:
            raise ValueError("Beta prior parameters must be positive")

    @classmethod
    def initial(cls, agent_ids: list[str], prior: tuple[float, float] = (1.0, 1.0)) -> TrustState:
        return cls({agent_id: tuple(prior) for agent_id in agent_ids}, tuple(prior))

    def trust(self, agent_id: str) -> float:
        alpha, beta = self.params.get(agent_id, self.prior)
        return alpha / (alpha + beta)

    def trusts(self) -> dict[str, float]:
        return {agent_id: self.trust(agent_id) for agent_id in self.params}


def mate_update(state: TrustState, psms: list[Psm]) -> TrustState:
    """Add PSM weights to alpha (positive) or beta (negative); order-independent."""
    positive: dict[str, float] = defaultdict(float)
    negative: dict[str, float] = defaultdict(float)
    for psm in psms:
        (positive if psm.sign is PsmSign.POSITIVE else negative)[psm.subject_agent] += psm.weight
    params = dict(state.params)
    for agent_id in set(positive) | set(negative):
        alpha, beta = params.get(agent_id, state.prior)
        params[agent_id] = (alpha + positive[agent_id], beta + negative[agent_id])
    return TrustState(params, state.prior)


def track_visibility(grid: BevGrid, detection: Detection, fraction: float = 0.3) -> bool:
    """A track is visible when the agent observed enough of its footprint."""
    cells = footprint_cells(grid.spec, detection.box)
    total = int(np.count_nonzero(cells))
    if total == 0:
        return False
    return np.count_nonzero(grid.observed & cells) / total >= fraction


def mate_derive_psms(
    ego_boxes: dict[str, list[Detection]],
    aggregated_tracks: list[Track],
    visibility: dict[str, dict[int, bool]],
    association_iou: float = DEFAULT_ASSOCIATION_IOU,
    masked_tracks: dict[str, set[int]] | None = None,
) -> list[Psm]:
    """Positive PSM per matched track, negative per visible but unmatched track."""
    masked_tracks = masked_tracks or {}
    psms = []
    for agent_id, boxes in ego_boxes.items():
        hidden = masked_tracks.get(agent_id, set())
        for track in aggregated_tracks:
            if track.track_id in hidden:
                continue
            matched = any(box_iou(det.box, track.box) > association_iou for det in boxes)
            if matched:
                psms.append(Psm(agent_id, PsmSign.POSITIVE, 1.0, track.track_id))
            elif visibility.get(agent_id, {}).get(track.track_id, False):
                psms.append(Psm(agent_id, PsmSign.NEGATIVE, 1.0, track.track_id))
    return psms


def threshold_for(track_count: int, thresholds: dict[int, float] | None = None) -> float:
    thresholds = thresholds or DEFAULT_THRESHOLDS
    if track_count not in thresholds:
        valid = ", ".join(str(k) for k in sorted(thresholds))
        raise ValueError(f"Unsupported track count {track_count}. Available: {valid}")
    return thresholds[track_count]


def mate_decide(
    state: TrustState,
    track_count: int,
    thresholds: dict[int, float] | None = None,
    frame: int = 0,
) -> DefenseVerdict:
    """Flag the least-trusted agent if its trust is strictly below the threshold."""
    threshold = threshold_for(track_count, thresholds)
    trusts = state.trusts()
    flagged = None
    if trusts:
        lowest = min(sorted(trusts), key=lambda a: trusts[a])
        if trusts[lowest] < threshold:
            flagged = lowest
    return DefenseVerdict(
        DefenseKind.MATE, flagged_agent=flagged, scores=trusts, threshold_used=threshold, frame=frame
    )


def select_tracks(tracks: list[Track], centroid: np.ndarray, count: int) -> list[Track]:
    """The ``count`` tracks nearest the collaboration centroid (ties by id)."""
    ranked = sorted(
        tracks,
        key=lambda t: (float(np.hypot(*(np.asarray(t.detection.center) - centroid))), t.track_id),
    )
    return ranked[:count]


def frame_psms(
    inputs: DefenseInputs,
    track_count: int,
    visibility_fraction: float = 0.3,
    association_iou: float = DEFAULT_ASSOCIATION_IOU,
) -> list[Psm]:
    """PSMs of one frame over the tracks nearest the collaboration centroid."""
    origins = [o[:2] for grid in inputs.grids.values() for o in grid.origins]
    centroid = np.mean(origins, axis=0) if origins else np.zeros(2)
    tracks = select_tracks(inputs.tracks, centroid, track_count)
    visibility = {
        agent_id: {t.track_id: track_visibility(grid, t.detection, visibility_fraction) for t in tracks}
        for agent_id, grid in inputs.grids.items()
    }
    return mate_derive_psms(inputs.boxes, tracks, visibility, association_iou, inputs.masked_tracks)


@dataclass
class Tracker:
    """Greedy nearest-center association of fused boxes across frames."""

    gate: float = 2.5
    _tracks: list[Track] = field(default_factory=list)
    _next_id: int = 0

    def reset(self) -> None:
        self._tracks = []
        self._next_id = 0

    def update(self, detections: list[Detection]) -> list[Track]:
        pairs = []
        for i, track in enumerate(self._tracks):
            for j, det in enumerate(detections):
                d = float(np.hypot(*(np.asarray(track.detection.center) - np.asarray(det.center))))
                if d <= self.gate:
                    pairs.append((d, i, j))
        pairs.sort()
        used_tracks: set[int] = set()
        assigned: dict[int, int] = {}
        for _, i, j in pairs:
            if i in used_tracks or j in assigned:
                continue
            used_tracks.add(i)
            assigned[j] = self._tracks[i].track_id
        tracks = []
        for j, det in enumerate(detections):
            if j not in assigned:
                assigned[j] = self._next_id
                self._next_id += 1
            tracks.append(Track(assigned[j], det))
        self._tracks = tracks
        return tracks


class MateDefense(Defense):
    """Stateful over one trajectory; frames must arrive in order."""

    kind = DefenseKind.MATE
    temporal = True

    def __init__(self, constants: dict | None = None, track_count: int | None = None) -> None:
        constants = constants or load_constants()
        mate = constants["mate"]
        self.prior = tuple(mate["prior"])
        self.thresholds = {int(k): float(v) for k, v in mate["thresholds"].items()}
        self.visibility_fraction = mate["visibility_fraction"]
        self.association_iou = constants["fusion"]["association_iou"]
        self.track_count = track_count or int(mate["default_track_count"])
        threshold_for(self.track_count, self.thresholds)
        self.state = TrustState({}, self.prior)
        self.last_psms: list[Psm] = []

    def reset(self, agent_ids: list[str]) -> None:
        self.state = TrustState.initial(agent_ids, self.prior)
        self.last_psms = []

    def check(self, inputs: DefenseInputs) -> list[DefenseVerdict]:
        if not self.state.params:
            self.reset(inputs.agent_ids)
        self.last_psms = frame_psms(inputs, self.track_count, self.visibility_fraction, self.association_iou)
        self.state = mate_update(self.state, self.last_psms)
        return [mate_decide(self.state, self.track_count, self.thresholds, inputs.frame)]

    def fusion_weights(self, verdicts: list[DefenseVerdict], agent_ids: list[str]) -> dict[str, float]:
        """Current trust as the fusion weight."""
        return {agent_id: self.state.trust(agent_id) for agent_id in agent_ids}
