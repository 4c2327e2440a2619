"""Reconstruction and match anomaly detection.

Each collaborator's occupancy is reconstructed from its peers (a
coverage-weighted average over the cells they share) and its boxes are
matched against the fused output. Both residuals are normalized by
benign calibration quantiles; a combined score above 1 is anomalous.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from trustpoison.config import load_constants
from trustpoison.defenses.base import Defense, DefenseInputs, DefenseKind, DefenseVerdict
from trustpoison.defenses.mate import track_visibility
from trustpoison.errors import CalibrationError, ConfigError
from trustpoison.geometry.boxes import box_iou
from trustpoison.perception.detector import Detection
from trustpoison.perception.grid import BevGrid

logger = logging.getLogger(__name__)

CALIBRATION_VERSION = 1
THRESHOLD_FLOOR = 1e-6


@dataclass(frozen=True)
class MadeCalibration:
    recon_threshold: float
    match_threshold: float
    beta: float = 1.0
    quantile: float = 95.0
    frames: int = 0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.recon_threshold) and np.isfinite(self.match_threshold)):
            raise ValueError("MADE thresholds must be finite")
        if self.recon_threshold <= 0 or self.match_threshold <= 0:
            raise ValueError("MADE thresholds must be positive")
        if self.beta < 0:
            raise ValueError("MADE beta must be >= 0")

    def combine(self, recon: float, match: float) -> float:
        return (recon / self.recon_threshold + self.beta * match / self.match_threshold) / (1.0 + self.beta)


def save_calibration(calib: MadeCalibration, path: str | Path) -> Path:
    out = Path(path)
    out.write_text(json.dumps({"version": CALIBRATION_VERSION, **asdict(calib)}, indent=2) + "\n", encoding="utf-8")
    return out


def load_calibration(path: str | Path) -> MadeCalibration:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CalibrationError(f"cannot read MADE calibration {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from exc
    if data.get("version") != CALIBRATION_VERSION:
        raise ConfigError(f"unsupported calibration version {data.get('version')!r}", str(path))
    try:
        return MadeCalibration(
            recon_threshold=float(data["recon_threshold"]),
            match_threshold=float(data["match_threshold"]),
            beta=float(data.get("beta", 1.0)),
            quantile=float(data.get("quantile", 95.0)),
            frames=int(data.get("frames", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid calibration record: {exc}", str(path)) from exc


def peer_reconstruction(grids: dict[str, BevGrid], agent_id: str) -> tuple[np.ndarray, np.ndarray]:
    """Occupancy averaged over the peers observing each cell, and their count."""
    peers = [g for a, g in grids.items() if a != agent_id]
    weight = sum((g.observed.astype(np.float64) for g in peers), np.zeros(grids[agent_id].spec.shape))
    recon = sum((g.observed * g.occupancy for g in peers), np.zeros_like(weight))
    return recon / np.where(weight > 0, weight, 1.0), weight


def reconstruction_residual(grids: dict[str, BevGrid], agent_id: str) -> np.ndarray:
    """Per-cell |occupancy - peer reconstruction| where the agent and a peer both look; 0 elsewhere."""
    own = grids[agent_id]
    recon, weight = peer_reconstruction(grids, agent_id)
    return np.where(own.observed & (weight > 0), np.abs(own.occupancy - recon), 0.0)


def reconstruction_score(
    grids: dict[str, BevGrid], agent_id: str, masked: np.ndarray | None = None
) -> float:
    """Mean |occupancy - peer reconstruction| over the shared occupied support."""
    own = grids[agent_id]
    if len(grids) < 2:
        return 0.0
    recon, weight = peer_reconstruction(grids, agent_id)
    any_occupied = np.logical_or.reduce([g.occupied for g in grids.values()])
    support = any_occupied & own.observed & (weight > 0)
    if masked is not None:
        support &= ~masked
    if not np.any(support):
        return 0.0
    return float(np.abs(own.occupancy - recon)[support].mean())


def match_score(
    grid: BevGrid,
    boxes: list[Detection],
    fused: list[Detection],
    visibility_fraction: float = 0.3,
) -> float:
    """1 - mean best IoU, in both directions between own and fused boxes.

    Fused boxes count only if the agent could see them.
    """
    visible = [f for f in fused if track_visibility(grid, f, visibility_fraction)]
    best = [max((box_iou(d.box, f.box) for f in fused), default=0.0) for d in boxes]
    best += [max((box_iou(f.box, d.box) for d in boxes), default=0.0) for f in visible]
    if not best:
        return 0.0
    return 1.0 - float(np.mean(best))


def _centered_in(grid: BevGrid, det: Detection, cells: np.ndarray) -> bool:
    ix, iy, inside = grid.spec.cell_of(np.asarray([det.center]))
    return bool(inside[0] and cells[ix[0], iy[0]])


def made_scores(
    grids: dict[str, BevGrid],
    agent_id: str,
    fused: list[Detection],
    per_agent_boxes: dict[str, list[Detection]],
    masked: np.ndarray | None = None,
) -> tuple[float, float]:
    """Raw (reconstruction, match) residuals of one collaborator.

    Boxes centered on a masked cell are left out of matching.
    """
    boxes = per_agent_boxes.get(agent_id, [])
    grid = grids[agent_id]
    if masked is not None:
        boxes = [d for d in boxes if not _centered_in(grid, d, masked)]
        grid = grid.without_cells(masked)
    return reconstruction_score(grids, agent_id, masked), match_score(grid, boxes, fused)


def made_check(
    grids: dict[str, BevGrid],
    ego_id: str,
    calib: MadeCalibration | None,
    fused_boxes: list[Detection],
    per_agent_boxes: dict[str, list[Detection]],
    ignore: np.ndarray | None = None,
    masked_cells: dict[str, np.ndarray] | None = None,
    frame: int = 0,
) -> DefenseVerdict:
    """Inspect every collaborator other than ``ego_id`` and flag the worst if its score exceeds 1."""
    if calib is None:
        raise CalibrationError("MADE needs a benign calibration record; run the calibration step first")
    masked_cells = masked_cells or {}
    scores: dict[str, float] = {}
    for agent_id in grids:
        if agent_id == ego_id:
            continue
        masked = masked_cells.get(agent_id)
        if ignore is not None:
            masked = ignore if masked is None else (masked | ignore)
        recon, match = made_scores(grids, agent_id, fused_boxes, per_agent_boxes, masked)
        scores[agent_id] = calib.combine(recon, match)
    flagged = None
    if scores:
        worst = max(sorted(scores), key=lambda a: scores[a])
        if scores[worst] > 1.0:
            flagged = worst
    return DefenseVerdict(
        DefenseKind.MADE, flagged_agent=flagged, scores=scores, threshold_used=1.0, frame=frame, ego_id=ego_id
    )


def calibrate_made(
    samples: list[tuple[float, float]],
    beta: float = 1.0,
    quantile: float = 95.0,
    min_frames: int = 30,
    frames: int | None = None,
) -> MadeCalibration:
    """Quantile thresholds over benign (reconstruction, match) samples.

    ``frames`` is the number of benign frames the samples came from; it
    defaults to the number of samples.
    """
    frames = len(samples) if frames is None else frames
    if frames < min_frames:
        raise CalibrationError(f"MADE calibration needs at least {min_frames} benign frames, got {frames}")
    values = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    recon_q, match_q = np.percentile(values, quantile, axis=0)
    return MadeCalibration(
        recon_threshold=max(float(recon_q), THRESHOLD_FLOOR),
        match_threshold=max(float(match_q), THRESHOLD_FLOOR),
        beta=beta,
        quantile=quantile,
        frames=frames,
    )


def benign_samples(inputs: DefenseInputs) -> list[tuple[float, float]]:
    """Raw residuals of every agent in one benign frame."""
    return [made_scores(inputs.grids, a, inputs.fused, inputs.boxes) for a in inputs.agent_ids]


class MadeDefense(Defense):
    """One verdict per ego; fusion drops every agent any ego flagged."""

    kind = DefenseKind.MADE

    def __init__(self, calibration: MadeCalibration | None = None, constants: dict | None = None) -> None:
        made = (constants or load_constants())["made"]
        self.calibration = calibration
        self.beta = float(made["beta"])

    def check(self, inputs: DefenseInputs) -> list[DefenseVerdict]:
        if self.calibration is None:
            raise CalibrationError("MADE needs a benign calibration record; run the calibration step first")
        return [
            made_check(
                inputs.grids,
                ego,
                self.calibration,
                inputs.fused,
                inputs.boxes,
                inputs.ignore_cells,
                inputs.masked_cells,
                inputs.frame,
            )
            for ego in inputs.ego_ids
        ]
