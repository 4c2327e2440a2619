"""IoU, AP@0.5 and the attack success rates."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from trustpoison.defenses.base import DefenseKind, DefenseVerdict
from trustpoison.geometry.boxes import OrientedBox, box_iou
from trustpoison.mitigation import TrustMask
from trustpoison.perception.detector import Detection

AP_IOU = 0.5
CAD_FOOTPRINT_SHARE = 0.5


def iou(box_a: OrientedBox, box_b: OrientedBox) -> float:
    return box_iou(box_a, box_b)


def max_iou(detections: list[Detection], box: OrientedBox) -> float:
    return max((box_iou(d.box, box) for d in detections), default=0.0)


@dataclass(eq=False)
class FrameRecord:
    """Everything one simulated frame produced.

    ``target_cells`` are the target footprint cells some non-victim
    observed; CAD success is measured against them.
    """

    frame_id: int
    victim_id: str
    detections: dict[str, list[Detection]]
    fused: list[Detection]
    ground_truth: list[OrientedBox]
    target: OrientedBox | None = None
    verdicts: list[DefenseVerdict] = field(default_factory=list)
    masks: dict[str, TrustMask] = field(default_factory=dict)
    target_cells: np.ndarray | None = None
    trajectory: str = ""

    @property
    def non_victims(self) -> list[str]:
        return [a for a in self.detections if a != self.victim_id]


@dataclass(frozen=True)
class AsrReport:
    metric: str
    numerator: int
    denominator: int
    unit: str = "frame"

    @property
    def rate(self) -> float:
        return self.numerator / self.denominator if self.denominator else 0.0

    @property
    def exact(self) -> Fraction:
        return Fraction(self.numerator, self.denominator) if self.denominator else Fraction(0)

    def to_record(self) -> dict:
        return {
            "metric": self.metric,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "rate": round(self.rate, 6),
            "unit": self.unit,
        }


def perception_asr(records: list[FrameRecord]) -> tuple[AsrReport, AsrReport]:
    """Victim-view and non-victim-view success over frames with a target.

    The victim view succeeds when none of the victim's boxes overlaps the
    target; the non-victim view when any non-victim's box does.
    """
    scored = [r for r in records if r.target is not None]
    victim_hits = sum(max_iou(r.detections.get(r.victim_id, []), r.target) == 0.0 for r in scored)
    nonvictim_hits = sum(
        any(max_iou(r.detections[a], r.target) > 0.0 for a in r.non_victims) for r in scored
    )
    return (
        AsrReport("victim_view_asr", victim_hits, len(scored)),
        AsrReport("nonvictim_view_asr", nonvictim_hits, len(scored)),
    )


def _verdicts(record: FrameRecord, kind: DefenseKind) -> list[DefenseVerdict]:
    return [v for v in record.verdicts if v.defense is kind]


def _cad_success(record: FrameRecord, verdict: DefenseVerdict) -> bool:
    if record.target_cells is None or verdict.conflict_cells is None:
        return False
    total = int(np.count_nonzero(record.target_cells))
    if total == 0:
        return False
    overlap = int(np.count_nonzero(record.target_cells & verdict.conflict_cells))
    return overlap >= CAD_FOOTPRINT_SHARE * total


def defense_asr(records: list[FrameRecord], kind: DefenseKind | str) -> AsrReport:
    """Defense-aware success rate.

    CAD, LUCIA and MADE count frames; MATE counts trajectories by the
    victim's trust at their last frame.

    Raises:
        ValueError: if a record carries no verdict of this defense.
    """
    kind = DefenseKind(kind)
    for r in records:
        if not _verdicts(r, kind):
            raise ValueError(f"frame {r.frame_id} of '{r.trajectory}' has no {kind.value} verdict")

    if kind is DefenseKind.MATE:
        last: dict[str, FrameRecord] = {}
        for r in records:
            if r.trajectory not in last or r.frame_id >= last[r.trajectory].frame_id:
                last[r.trajectory] = r
        hits = 0
        for r in last.values():
            verdict = _verdicts(r, kind)[-1]
            hits += verdict.scores.get(r.victim_id, 1.0) < verdict.threshold_used
        return AsrReport("mate_asr", hits, len(last), unit="trajectory")

    hits = 0
    for r in records:
        verdicts = _verdicts(r, kind)
        if kind is DefenseKind.CAD:
            hits += any(_cad_success(r, v) for v in verdicts)
        elif kind is DefenseKind.LUCIA:
            hits += any(v.scores.get(r.victim_id, 1.0) < v.threshold_used for v in verdicts)
        else:
            hits += any(v.ego_id != r.victim_id and v.flagged_agent == r.victim_id for v in verdicts)
    return AsrReport(f"{kind.value}_asr", hits, len(records))


def _ranked(predictions: list[Detection]) -> list[Detection]:
    return sorted(predictions, key=lambda d: (-d.confidence, d.center[0], d.center[1]))


def _match_flags(
    predictions: list[Detection], ground_truth: list[OrientedBox], iou_threshold: float
) -> list[tuple[float, float, float, bool]]:
    """Greedy one-to-one matching in confidence order: (conf, x, y, is_hit) per prediction."""
    taken = [False] * len(ground_truth)
    flags = []
    for det in _ranked(predictions):
        best, best_iou = -1, iou_threshold
        for k, gt in enumerate(ground_truth):
            if taken[k]:
                continue
            overlap = box_iou(det.box, gt)
            if overlap >= best_iou:
                best, best_iou = k, overlap
        if best >= 0:
            taken[best] = True
        flags.append((det.confidence, det.center[0], det.center[1], best >= 0))
    return flags


def _area_under_pr(hits: list[bool], positives: int) -> float:
    """All-points interpolated area under the precision-recall curve."""
    if not hits:
        return 0.0
    tp = np.cumsum(hits, dtype=np.float64)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / positives
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def average_precision(
    predictions: list[Detection], ground_truth: list[OrientedBox], iou_threshold: float = AP_IOU
) -> float | None:
    """AP of one scene; ``None`` without ground truth."""
    if not ground_truth:
        return None
    flags = _match_flags(predictions, ground_truth, iou_threshold)
    return _area_under_pr([f[3] for f in flags], len(ground_truth))


def dataset_average_precision(
    frames: list[tuple[list[Detection], list[OrientedBox]]], iou_threshold: float = AP_IOU
) -> float | None:
    """AP over many frames: matching per frame, ranking across all of them."""
    positives = sum(len(gt) for _, gt in frames)
    if positives == 0:
        return None
    flags = [f for preds, gt in frames for f in _match_flags(preds, gt, iou_threshold)]
    flags.sort(key=lambda f: (-f[0], f[1], f[2]))
    return _area_under_pr([f[3] for f in flags], positives)


def fused_ap(records: list[FrameRecord], iou_threshold: float = AP_IOU) -> float | None:
    return dataset_average_precision([(r.fused, r.ground_truth) for r in records], iou_threshold)
