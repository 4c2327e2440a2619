"""Cross-agent occupancy conflict detection."""

from __future__ import annotations

import logging

import numpy as np

from trustpoison.defenses.base import Defense, DefenseInputs, DefenseKind, DefenseVerdict
from trustpoison.defenses.occupancy import OccupancyMap, occupancy_from_grid
from trustpoison.perception.detector import Detection
from trustpoison.perception.grid import GridSpec, footprint_cells

logger = logging.getLogger(__name__)

UNSUPPORTED_THRESHOLD = 0.5


def box_coverage(spec: GridSpec, boxes: list[Detection]) -> np.ndarray:
    covered = np.zeros(spec.shape, dtype=bool)
    for det in boxes:
        covered |= footprint_cells(spec, det.box)
    return covered


def conflict_region(maps: dict[str, OccupancyMap], ignore: np.ndarray | None = None) -> np.ndarray:
    """Cells one agent calls Free while another calls Occupied."""
    stack = list(maps.values())
    any_free = np.logical_or.reduce([m.free for m in stack])
    any_occupied = np.logical_or.reduce([m.occupied for m in stack])
    conflict = any_free & any_occupied
    if ignore is not None:
        conflict &= ~ignore
    return conflict


def single_vehicle_disagreement(baseline: OccupancyMap, boxes: list[Detection]) -> np.ndarray:
    """Cells where an agent's boxes and its own occupancy disagree.

    A box cell its beams swept empty, or an in-band return no box covers.
    """
    covered = box_coverage(baseline.spec, boxes)
    return (covered & baseline.free) | (baseline.occupied & ~covered)


def cad_check(
    maps: dict[str, OccupancyMap],
    predictions: dict[str, list[Detection]],
    ignore: np.ndarray | None = None,
    frame: int = 0,
) -> DefenseVerdict:
    """Find occupancy conflicts and attribute them.

    A vote on a conflict cell is unsupported when it is the strict
    minority and the voter's own boxes also disagree with the majority,
    or on a tie when the label contradicts the voter's own boxes. An
    agent's score is its unsupported share of conflict votes; the unique
    top scorer above 0.5 is flagged.
    """
    if len(maps) < 2:
        raise ValueError("cad_check needs occupancy maps from at least two agents")
    spec = next(iter(maps.values())).spec
    conflict = conflict_region(maps, ignore)
    free_votes = sum(m.free.astype(np.int64) for m in maps.values())
    occupied_votes = sum(m.occupied.astype(np.int64) for m in maps.values())
    majority_occupied = occupied_votes > free_votes
    majority_free = free_votes > occupied_votes
    tie = ~majority_occupied & ~majority_free

    scores: dict[str, float] = {}
    for agent_id, occ in maps.items():
        covered = box_coverage(spec, predictions.get(agent_id, []))
        votes = conflict & occ.known
        minority = (occ.free & majority_occupied) | (occ.occupied & majority_free)
        boxes_disagree = (majority_occupied & ~covered) | (majority_free & covered)
        contradicts_boxes = (occ.free & covered) | (occ.occupied & ~covered)
        unsupported = votes & ((minority & boxes_disagree) | (tie & contradicts_boxes))
        total = int(np.count_nonzero(votes))
        scores[agent_id] = np.count_nonzero(unsupported) / total if total else 0.0

    flagged = None
    if scores:
        top = max(scores.values())
        leaders = [a for a, s in scores.items() if s == top]
        if top > UNSUPPORTED_THRESHOLD and len(leaders) == 1:
            flagged = leaders[0]
    return DefenseVerdict(
        DefenseKind.CAD,
        flagged_agent=flagged,
        conflict_cells=conflict,
        scores=scores,
        threshold_used=UNSUPPORTED_THRESHOLD,
        frame=frame,
    )


class CadDefense(Defense):
    kind = DefenseKind.CAD

    def check(self, inputs: DefenseInputs) -> list[DefenseVerdict]:
        maps = {agent_id: occupancy_from_grid(grid) for agent_id, grid in inputs.grids.items()}
        ignore = inputs.ignore_cells
        if ignore is not None and np.all(ignore):
            logger.warning("CAD frame %d: every cell is masked; no evidence", inputs.frame)
            return [DefenseVerdict(DefenseKind.CAD, frame=inputs.frame, threshold_used=UNSUPPORTED_THRESHOLD)]
        return [cad_check(maps, inputs.boxes, ignore, inputs.frame)]
