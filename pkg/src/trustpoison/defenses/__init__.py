"""Defense registry.

Defenses are constructed by name; MADE additionally needs a benign
calibration record before it can check a frame.
"""

from __future__ import annotations

from dataclasses import dataclass

from trustpoison.defenses.base import Defense, DefenseInputs, DefenseKind, DefenseVerdict, Track
from trustpoison.defenses.cad import CadDefense, cad_check
from trustpoison.defenses.lucia import LuciaDefense, TrustScores, lucia_decide, lucia_scores
from trustpoison.defenses.made import MadeCalibration, MadeDefense, calibrate_made, made_check
from trustpoison.defenses.mate import MateDefense, Psm, PsmSign, TrustState, mate_decide, mate_derive_psms, mate_update
from trustpoison.defenses.occupancy import CellState, OccupancyMap, occupancy_from_cloud, occupancy_from_grid

__all__ = [
    "DEFENSE_INFO",
    "CadDefense",
    "CellState",
    "Defense",
    "DefenseInfo",
    "DefenseInputs",
    "DefenseKind",
    "DefenseVerdict",
    "LuciaDefense",
    "MadeCalibration",
    "MadeDefense",
    "MateDefense",
    "OccupancyMap",
    "Psm",
    "PsmSign",
    "Track",
    "TrustScores",
    "TrustState",
    "cad_check",
    "calibrate_made",
    "get_defense",
    "list_defenses",
    "lucia_decide",
    "lucia_scores",
    "made_check",
    "mate_decide",
    "mate_derive_psms",
    "mate_update",
    "occupancy_from_cloud",
    "occupancy_from_grid",
]


@dataclass
class DefenseInfo:
    """Metadata about a defense (available before instantiation)."""

    name: str
    description: str
    temporal: bool
    needs_calibration: bool


DEFENSE_INFO: dict[str, DefenseInfo] = {
    "cad": DefenseInfo("cad", "Occupancy-map conflict detection", temporal=False, needs_calibration=False),
    "mate": DefenseInfo("mate", "Bayesian trust from track pseudomeasurements", temporal=True, needs_calibration=False),
    "lucia": DefenseInfo("lucia", "Feature-consistency trust scores", temporal=False, needs_calibration=False),
    "made": DefenseInfo("made", "Reconstruction and match anomaly detection", temporal=False, needs_calibration=True),
}


def get_defense(
    name: str | DefenseKind,
    constants: dict | None = None,
    calibration: MadeCalibration | None = None,
    track_count: int | None = None,
    compression_ratio: int | None = None,
) -> Defense:
    """Instantiate a defense by name.

    Raises ``ValueError`` for unknown names. MADE without ``calibration``
    is constructed but raises ``CalibrationError`` on its first check.
    """
    key = name.value if isinstance(name, DefenseKind) else str(name).lower()
    if key not in DEFENSE_INFO:
        raise ValueError(f"Unknown defense '{name}'. Available: {', '.join(DEFENSE_INFO.keys())}")
    if key == "cad":
        return CadDefense()
    if key == "mate":
        return MateDefense(constants, track_count)
    if key == "lucia":
        return LuciaDefense(constants, compression_ratio)
    return MadeDefense(calibration, constants)


def list_defenses() -> list[DefenseInfo]:
    """Return all registered defenses."""
    return list(DEFENSE_INFO.values())
