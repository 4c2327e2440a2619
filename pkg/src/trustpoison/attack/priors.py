"""Shape priors: the starting mesh, what may move, and the loss weights."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from trustpoison.geometry.library import board_mesh, car_mesh, cuboid_mesh, hollow_mesh, rear_mask
from trustpoison.geometry.mesh import ConstraintKind, ConstraintSet, TriangleMesh, merge_meshes


class PriorKind(str, Enum):
    FROM_REAL = "from_real"
    ATTACHED = "attached"
    HOLLOW = "hollow"
    CUBOID = "cuboid"


PRIOR_DEFAULTS: dict[PriorKind, dict[str, float]] = {
    PriorKind.FROM_REAL: {"mask_depth": 0.3, "size_margin": 0.3, "displacement_bound": 0.3},
    PriorKind.ATTACHED: {
        "translation_bound": 0.3,
        "size_margin": 0.3,
        "displacement_bound": 0.3,
        "board_width": 1.6,
        "board_height": 1.2,
        "mount_height": 0.3,
        "mount_gap": 0.02,
    },
    PriorKind.HOLLOW: {"vertex_bound": 0.1},
    PriorKind.CUBOID: {"vertex_bound": 0.1},
}

PRIOR_WEIGHTS: dict[PriorKind, tuple[float, float]] = {
    PriorKind.FROM_REAL: (1.0, 0.0),
    PriorKind.ATTACHED: (1.0, 0.0),
    PriorKind.HOLLOW: (0.0, 1.0),
    PriorKind.CUBOID: (1.0, 1.0),
}


@dataclass(frozen=True, eq=False)
class ShapePrior:
    """An initial adversarial mesh and its admissible deformations.

    ``displacement_bound`` scales the saturating latent map the optimizer
    uses; ``translation_mask`` marks vertices carried by the rigid
    translation (the board of an Attached prior).
    """

    kind: PriorKind
    mesh: TriangleMesh
    constraints: ConstraintSet
    loss_weights: tuple[float, float]
    displacement_bound: float
    host_mesh: TriangleMesh | None = None
    translation_mask: np.ndarray | None = None

    @property
    def mask(self) -> np.ndarray:
        if self.constraints.mask is not None:
            return self.constraints.mask
        return self.mesh.mask

    @property
    def translates(self) -> bool:
        return self.constraints.has(ConstraintKind.TRANSLATION_BOUND)

    def realize(self, displacement: np.ndarray, translation: np.ndarray | None = None) -> TriangleMesh:
        """Mesh at V0 + displacement (+ translation on the translated vertices)."""
        vertices = self.mesh.init_vertices + displacement
        if translation is not None and self.translation_mask is not None:
            vertices = vertices + np.where(self.translation_mask[:, None], translation, 0.0)
        return self.mesh.with_vertices(vertices)


def _parameters(kind: PriorKind, parameters: dict[str, float]) -> dict[str, float]:
    defaults = PRIOR_DEFAULTS[kind]
    unknown = sorted(set(parameters) - set(defaults))
    if unknown:
        raise ValueError(
            f"Unknown parameter(s) {', '.join(unknown)} for prior '{kind.value}'. "
            f"Available: {', '.join(defaults)}"
        )
    merged = {**defaults, **parameters}
    negative = [k for k, v in merged.items() if v < 0]
    if negative:
        raise ValueError(f"prior parameters must be non-negative: {', '.join(negative)}")
    return merged


def _from_real(p: dict[str, float]) -> ShapePrior:
    car = car_mesh()
    mask = rear_mask(car, p["mask_depth"])
    mesh = car.with_mask(mask)
    constraints = ConstraintSet(
        {ConstraintKind.MASK_ONLY, ConstraintKind.SIZE_BOUND},
        size_bound=tuple(car.extents() + p["size_margin"]),
        mask=mask,
    )
    return ShapePrior(PriorKind.FROM_REAL, mesh, constraints, PRIOR_WEIGHTS[PriorKind.FROM_REAL], p["displacement_bound"])


def _attached(p: dict[str, float]) -> ShapePrior:
    host = car_mesh()
    board = board_mesh(p["board_width"], p["board_height"])
    rear = float(host.vertices[:, 0].min())
    offset = np.array([rear - p["mount_gap"], 0.0, p["mount_height"]])
    board = TriangleMesh(board.vertices + offset, board.faces)
    mesh = merge_meshes([host, board])
    mask = np.zeros(mesh.vertex_count, dtype=bool)
    mask[host.vertex_count :] = True
    mesh = mesh.with_mask(mask)
    constraints = ConstraintSet(
        {ConstraintKind.MASK_ONLY, ConstraintKind.TRANSLATION_BOUND, ConstraintKind.SIZE_BOUND},
        translation_bound=p["translation_bound"],
        size_bound=tuple(mesh.extents() + p["size_margin"]),
        mask=mask,
    )
    return ShapePrior(
        PriorKind.ATTACHED,
        mesh,
        constraints,
        PRIOR_WEIGHTS[PriorKind.ATTACHED],
        p["displacement_bound"],
        host_mesh=host,
        translation_mask=mask,
    )


def _hollow(p: dict[str, float]) -> ShapePrior:
    constraints = ConstraintSet({ConstraintKind.VERTEX_BOUND}, vertex_bound=p["vertex_bound"])
    return ShapePrior(PriorKind.HOLLOW, hollow_mesh(), constraints, PRIOR_WEIGHTS[PriorKind.HOLLOW], p["vertex_bound"])


def _cuboid(p: dict[str, float]) -> ShapePrior:
    box = cuboid_mesh()
    mask = np.ones(box.vertex_count, dtype=bool)
    constraints = ConstraintSet(
        {ConstraintKind.MASK_ONLY, ConstraintKind.VERTEX_BOUND}, vertex_bound=p["vertex_bound"], mask=mask
    )
    return ShapePrior(
        PriorKind.CUBOID, box.with_mask(mask), constraints, PRIOR_WEIGHTS[PriorKind.CUBOID], p["vertex_bound"]
    )


_BUILDERS = {
    PriorKind.FROM_REAL: _from_real,
    PriorKind.ATTACHED: _attached,
    PriorKind.HOLLOW: _hollow,
    PriorKind.CUBOID: _cuboid,
}


def prior_kind(name: str | PriorKind) -> PriorKind:
    if isinstance(name, PriorKind):
        return name
    key = str(name).lower().replace("-", "_")
    aliases = {"fromreal": "from_real"}
    try:
        return PriorKind(aliases.get(key, key))
    except ValueError:
        raise ValueError(
            f"Unknown prior '{name}'. Available: {', '.join(k.value for k in PriorKind)}"
        ) from None


def init_prior(kind: str | PriorKind, **parameters: float) -> ShapePrior:
    """Build a shape prior by name with optional parameter overrides."""
    kind = prior_kind(kind)
    return _BUILDERS[kind](_parameters(kind, parameters))
