"""Abstract base and shared records for consistency-based defenses."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from trustpoison.geometry.boxes import OrientedBox
from trustpoison.perception.detector import Detection
from trustpoison.perception.grid import BevGrid


class DefenseKind(str, Enum):
    CAD = "cad"
    MATE = "mate"
    LUCIA = "lucia"
    MADE = "made"


@dataclass
class DefenseVerdict:
    """One decision: who (if anyone) is flagged, and the evidence behind it."""

    defense: DefenseKind
    flagged_agent: str | None = None
    conflict_cells: np.ndarray | None = None
    scores: dict[str, float] = field(default_factory=dict)
    threshold_used: float = 0.0
    frame: int = 0
    ego_id: str | None = None

    def to_record(self) -> dict:
        return {
            "frame": self.frame,
            "defense": self.defense.value,
            "ego": self.ego_id,
            "flagged_agent": self.flagged_agent,
            "score_vector": {k: round(float(v), 9) for k, v in self.scores.items()},
            "conflict_cell_count": (
                0 if self.conflict_cells is None else int(np.count_nonzero(self.conflict_cells))
            ),
            "threshold": self.threshold_used,
        }


@dataclass(frozen=True)
class Track:
    """A fused detection with an identity that persists across frames."""

    track_id: int
    detection: Detection

    @property
    def box(self) -> OrientedBox:
        return self.detection.box


@dataclass
class DefenseInputs:
    """What the collaboration shares in one frame, as a defense sees it.

    ``ignore_cells`` are excluded for every agent; ``masked_cells`` and
    ``masked_tracks`` are scoped to the agent that declared them.
    """

    frame: int
    grids: dict[str, BevGrid]
    boxes: dict[str, list[Detection]]
    fused: list[Detection] = field(default_factory=list)
    tracks: list[Track] = field(default_factory=list)
    egos: list[str] | None = None
    ignore_cells: np.ndarray | None = None
    masked_cells: dict[str, np.ndarray] = field(default_factory=dict)
    masked_tracks: dict[str, set[int]] = field(default_factory=dict)

    @property
    def agent_ids(self) -> list[str]:
        return list(self.grids)

    @property
    def ego_ids(self) -> list[str]:
        return list(self.egos) if self.egos is not None else self.agent_ids

    def with_changes(self, **changes) -> DefenseInputs:
        return replace(self, **changes)


class Defense(ABC):
    """Interface every defense implements.

    ``check`` consumes one frame and returns its verdicts (MADE emits one
    per ego). ``fusion_weights`` turns verdicts into per-agent weights.
    """

    kind: DefenseKind
    temporal: bool = False

    def reset(self, agent_ids: list[str]) -> None:
        """Start a new trajectory."""

    @abstractmethod
    def check(self, inputs: DefenseInputs) -> list[DefenseVerdict]:
        """Run the defense on one frame."""

    def fusion_weights(self, verdicts: list[DefenseVerdict], agent_ids: list[str]) -> dict[str, float]:
        """Exclude every flagged agent; keep the rest at full weight."""
        flagged = {v.flagged_agent for v in verdicts if v.flagged_agent is not None}
        return {agent_id: 0.0 if agent_id in flagged else 1.0 for agent_id in agent_ids}
