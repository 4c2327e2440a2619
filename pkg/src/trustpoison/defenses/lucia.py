"""Feature-consistency trust between collaborators.

Occupancy features are pooled, L2-normalized and compared pairwise with
an L1 distance over the cells both agents observe. The mean distance to
the peers is the agent's inconsistency, and trust is its softmin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from trustpoison.config import load_constants
from trustpoison.defenses.base import Defense, DefenseInputs, DefenseKind, DefenseVerdict
from trustpoison.perception.grid import BevGrid, CellWindow

logger = logging.getLogger(__name__)

TRUST_THRESHOLD = 0.1
NORM_EPS = 1e-12


@dataclass(frozen=True)
class TrustScores:
    agent_ids: tuple[str, ...]
    trust: np.ndarray
    inconsistency: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return {a: float(t) for a, t in zip(self.agent_ids, self.trust)}

    def weights(self) -> dict[str, float]:
        """Trust rescaled so the most trusted agent has weight 1."""
        top = float(np.max(self.trust))
        return {a: float(t) / top for a, t in zip(self.agent_ids, self.trust)}


def pool(values: np.ndarray, cr: int) -> np.ndarray:
    """Average-pool a 2-D array by ``cr``, zero-padding to a multiple of it."""
    if cr < 1:
        raise ValueError(f"compression ratio must be >= 1, got {cr}")
    values = np.asarray(values, dtype=np.float64)
    if cr == 1:
        return values
    nx, ny = values.shape
    px, py = -nx % cr, -ny % cr
    padded = np.pad(values, ((0, px), (0, py)))
    return padded.reshape(padded.shape[0] // cr, cr, padded.shape[1] // cr, cr).mean(axis=(1, 3))


def _normalized(values: np.ndarray) -> np.ndarray:
    flat = values.ravel()
    return flat / max(float(np.linalg.norm(flat)), NORM_EPS)


def pairwise_l1(
    grid_a: BevGrid,
    grid_b: BevGrid,
    cr: int = 1,
    ignore: np.ndarray | None = None,
    window: CellWindow | None = None,
) -> float:
    """L1 between normalized pooled occupancy over cells both grids observe.

    ``window`` indexes the pooled grid.
    """
    mask = grid_a.observed & grid_b.observed
    if ignore is not None:
        mask &= ~ignore
    fa = pool(grid_a.occupancy * mask, cr)
    fb = pool(grid_b.occupancy * mask, cr)
    if window is not None:
        fa, fb = fa[window.slices], fb[window.slices]
    return float(np.abs(_normalized(fa) - _normalized(fb)).sum())


def lucia_scores(
    grids: dict[str, BevGrid], cr: int = 1, ignore: np.ndarray | None = None
) -> TrustScores:
    if len(grids) < 2:
        raise ValueError("lucia_scores needs at least two agents")
    agent_ids = tuple(grids)
    n = len(agent_ids)
    distance = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            distance[i, j] = distance[j, i] = pairwise_l1(grids[agent_ids[i]], grids[agent_ids[j]], cr, ignore)
    inconsistency = distance.sum(axis=1) / (n - 1)
    return TrustScores(agent_ids, softmax(-inconsistency), inconsistency)


def lucia_decide(
    scores: TrustScores, threshold: float = TRUST_THRESHOLD, frame: int = 0
) -> DefenseVerdict:
    """Flag the least-trusted agent if its trust is strictly below ``threshold``."""
    lowest = int(np.argmin(scores.trust))
    flagged = scores.agent_ids[lowest] if scores.trust[lowest] < threshold else None
    return DefenseVerdict(
        DefenseKind.LUCIA,
        flagged_agent=flagged,
        scores=scores.as_dict(),
        threshold_used=threshold,
        frame=frame,
    )


def cross_view_l1(grid_a: BevGrid, grid_b: BevGrid, window: CellWindow, cr: int = 1) -> float:
    """Local descriptor distance inside ``window`` (pooled indices).

    Unlike :func:`pairwise_l1` the two grids are not masked to common
    coverage, so two renders of one object from different viewpoints can
    be compared directly.
    """
    fa = pool(grid_a.occupancy, cr)[window.slices]
    fb = pool(grid_b.occupancy, cr)[window.slices]
    return float(np.abs(_normalized(fa) - _normalized(fb)).sum())


def target_window(cells: np.ndarray, cr: int = 1, margin: int = 5) -> CellWindow:
    """Pooled-grid window around a footprint mask."""
    return CellWindow.around(pool(cells.astype(np.float64), cr) > 0, margin)


class LuciaDefense(Defense):
    kind = DefenseKind.LUCIA

    def __init__(self, constants: dict | None = None, compression_ratio: int | None = None) -> None:
        lucia = (constants or load_constants())["lucia"]
        self.compression_ratio = compression_ratio or int(lucia["compression_ratio"])
        self.threshold = float(lucia["trust_threshold"])
        self.last_scores: TrustScores | None = None

    def check(self, inputs: DefenseInputs) -> list[DefenseVerdict]:
        ignore = inputs.ignore_cells
        self.last_scores = lucia_scores(inputs.grids, self.compression_ratio, ignore)
        if ignore is not None and np.all(ignore):
            logger.warning("LUCIA frame %d: every cell is masked; no evidence", inputs.frame)
            return [
                DefenseVerdict(
                    DefenseKind.LUCIA,
                    scores=self.last_scores.as_dict(),
                    threshold_used=self.threshold,
                    frame=inputs.frame,
                )
            ]
        return [lucia_decide(self.last_scores, self.threshold, inputs.frame)]

    def fusion_weights(self, verdicts: list[DefenseVerdict], agent_ids: list[str]) -> dict[str, float]:
        if self.last_scores is None:
            return super().fusion_weights(verdicts, agent_ids)
        weights = self.last_scores.weights()
        return {agent_id: weights.get(agent_id, 0.0) for agent_id in agent_ids}
