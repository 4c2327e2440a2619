"""Exception types shared across the package."""

from __future__ import annotations


class TrustPoisonError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(TrustPoisonError, ValueError):
    """Invalid mesh, ray or sensor specification."""


class MeshFormatError(TrustPoisonError):
    """An OBJ file or vertex-mask sidecar could not be parsed."""


class ConfigError(TrustPoisonError):
    """A scenario, job or constants file is malformed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(location + message)
        self.path = path
        self.line = line


class ScenarioValidationError(TrustPoisonError):
    """A scenario parses but violates the collaboration protocol."""


class UnknownEntityError(TrustPoisonError, KeyError):
    """Lookup of an agent, frame or object that does not exist."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class CalibrationError(TrustPoisonError):
    """A defense needs a calibration record that was not supplied."""


class OptimizationDiverged(TrustPoisonError):
    """The mesh optimization produced a non-finite loss."""

    def __init__(self, epoch: int, diagnostics: dict[str, float]) -> None:
        details = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
        super().__init__(f"non-finite loss at epoch {epoch} ({details})")
        self.epoch = epoch
        self.diagnostics = diagnostics
