"""Triangle meshes, the uniform Laplacian penalty and constraint projection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse

from trustpoison.errors import GeometryError
from trustpoison.geometry.pose import Pose

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertices (m), triangular faces, the perturbable vertex mask and V0."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_mask: np.ndarray | None = None
    init_vertices: np.ndarray | None = None

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=np.float64, copy=True)
        faces = np.array(self.faces, dtype=np.int64, copy=True)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise GeometryError(f"vertices must have shape (N, 3), got {vertices.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise GeometryError(f"faces must have shape (M, 3), got {faces.shape}")
        if not np.all(np.isfinite(vertices)):
            raise GeometryError("vertex coordinates must be finite")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise GeometryError("face index out of range")

        mask = None
        if self.vertex_mask is not None:
            mask = np.array(self.vertex_mask, dtype=bool, copy=True)
            if mask.shape != (len(vertices),):
                raise GeometryError(
                    f"vertex_mask length {mask.shape} does not match {len(vertices)} vertices"
                )
        init = vertices.copy() if self.init_vertices is None else np.array(
            self.init_vertices, dtype=np.float64, copy=True
        )
        if init.shape != vertices.shape:
            raise GeometryError("init_vertices must have the same shape as vertices")

        object.__setattr__(self, "vertices", _frozen(vertices))
        object.__setattr__(self, "faces", _frozen(faces))
        object.__setattr__(self, "vertex_mask", None if mask is None else _frozen(mask))
        object.__setattr__(self, "init_vertices", _frozen(init))

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def mask(self) -> np.ndarray:
        """The vertex mask, or all-True when the mesh carries none."""
        if self.vertex_mask is None:
            return np.ones(self.vertex_count, dtype=bool)
        return self.vertex_mask

    def with_vertices(self, vertices: np.ndarray) -> TriangleMesh:
        return TriangleMesh(vertices, self.faces, self.vertex_mask, self.init_vertices)

    def with_mask(self, mask: np.ndarray | None) -> TriangleMesh:
        return TriangleMesh(self.vertices, self.faces, mask, self.init_vertices)

    def rebased(self) -> TriangleMesh:
        """Snapshot the current vertices as the new V0."""
        return TriangleMesh(self.vertices, self.faces, self.vertex_mask, None)

    def transformed(self, pose: Pose) -> np.ndarray:
        """World-frame vertex positions for the mesh placed at ``pose``."""
        return pose.to_world(self.vertices)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def degenerate_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_areas() < DEGENERATE_AREA)

    def extents(self) -> np.ndarray:
        if self.vertex_count == 0:
            return np.zeros(3)
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    def displacement(self) -> np.ndarray:
        return self.vertices - self.init_vertices


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes into one; masks and V0 are carried over."""
    vertices, faces, masks, inits = [], [], [], []
    offset = 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        masks.append(mesh.mask)
        inits.append(mesh.init_vertices)
        offset += mesh.vertex_count
    has_mask = any(mesh.vertex_mask is not None for mesh in meshes)
    return TriangleMesh(
        np.concatenate(vertices),
        np.concatenate(faces),
        np.concatenate(masks) if has_mask else None,
        np.concatenate(inits),
    )


# -- Laplacian --------------------------------------------------------------


def adjacency_matrix(vertex_count: int, faces: np.ndarray) -> sparse.csr_matrix:
    """Symmetric 0/1 vertex adjacency from triangle edges."""
    faces = np.asarray(faces, dtype=np.int64)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.concatenate([edges, edges[:, ::-1]])
    adj = sparse.coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])),
        shape=(vertex_count, vertex_count),
    ).tocsr()
    adj.data[:] = 1.0
    return adj


def uniform_laplacian(mesh: TriangleMesh) -> tuple[sparse.csr_matrix, np.ndarray]:
    """L = I - D^-1 A, with rows of isolated vertices left at zero.

    Returns the operator and the indices of isolated vertices.
    """
    n = mesh.vertex_count
    adj = adjacency_matrix(n, mesh.faces)
    degree = np.asarray(adj.sum(axis=1)).ravel()
    isolated = np.flatnonzero(degree == 0)
    inv = np.zeros(n)
    inv[degree > 0] = 1.0 / degree[degree > 0]
    identity = sparse.diags((degree > 0).astype(np.float64))
    lap = (identity - sparse.diags(inv) @ adj).tocsr()
    return lap, isolated


def laplacian_energy(mesh: TriangleMesh) -> tuple[float, np.ndarray]:
    """Sum of squared one-ring offsets and its exact gradient (N, 3).

    delta_i = v_i - mean(one-ring of v_i); an isolated vertex contributes
    zero and is reported in the log.
    """
    lap, isolated = uniform_laplacian(mesh)
    if len(isolated):
        logger.warning("laplacian_energy: %d isolated vertices contribute zero", len(isolated))
    delta = lap @ mesh.vertices
    energy = float(np.sum(delta * delta))
    gradient = 2.0 * (lap.T @ delta)
    return energy, np.asarray(gradient)


# -- constraints ------------------------------------------------------------


class ConstraintKind(str, Enum):
    VERTEX_BOUND = "vertex_bound"
    TRANSLATION_BOUND = "translation_bound"
    SIZE_BOUND = "size_bound"
    MASK_ONLY = "mask_only"


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Active constraint kinds and their bounds."""

    kinds: frozenset[ConstraintKind]
    vertex_bound: float = 0.0
    translation_bound: float = 0.0
    size_bound: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kinds", frozenset(ConstraintKind(k) for k in self.kinds))
        if self.vertex_bound < 0 or self.translation_bound < 0 or min(self.size_bound) < 0:
            raise GeometryError("constraint bounds must be non-negative")
        if ConstraintKind.MASK_ONLY in self.kinds and self.mask is None:
            raise GeometryError("MaskOnly constraint needs a vertex mask")
        if self.mask is not None:
            object.__setattr__(self, "mask", _frozen(np.array(self.mask, dtype=bool)))

    def has(self, kind: ConstraintKind) -> bool:
        return kind in self.kinds


def saturate(displacement: np.ndarray, bound: float) -> np.ndarray:
    """Smooth odd map onto (-bound, bound), the optimizer's latent transform."""
    if bound <= 0:
        return np.zeros_like(displacement)
    return bound * np.tanh(displacement / bound)


def _size_scale(init: np.ndarray, disp: np.ndarray, bound: np.ndarray) -> float:
    def fits(s: float) -> bool:
        moved = init + s * disp
        return bool(np.all(moved.max(axis=0) - moved.min(axis=0) <= bound + 1e-12))

    if fits(1.0):
        return 1.0
    if not fits(0.0):
        logger.warning("size bound is tighter than the initial mesh; displacement removed")
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


def project_constraints(
    mesh: TriangleMesh,
    constraints: ConstraintSet,
    translation: np.ndarray | None = None,
    smooth: bool = False,
) -> tuple[TriangleMesh, np.ndarray]:
    """Project a deformed mesh and its translation back into the constraint set.

    The hard projection (default) is idempotent and never increases any
    vertex displacement: mask, then per-component clip, then a uniform
    shrink of the displacement field until extents fit the size bound,
    then a norm clamp on the translation. ``smooth=True`` swaps the clip
    for the saturating tanh map used inside the optimizer.
    """
    init = mesh.init_vertices
    disp = mesh.vertices - init
    trans = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64).copy()

    if constraints.has(ConstraintKind.MASK_ONLY):
        disp = np.where(constraints.mask[:, None], disp, 0.0)
    if constraints.has(ConstraintKind.VERTEX_BOUND):
        bound = constraints.vertex_bound
        disp = saturate(disp, bound) if smooth else np.clip(disp, -bound, bound)
    if constraints.has(ConstraintKind.SIZE_BOUND):
        scale = _size_scale(init, disp, np.asarray(constraints.size_bound, dtype=np.float64))
        if scale < 1.0:
            disp = disp * scale
    if constraints.has(ConstraintKind.TRANSLATION_BOUND):
        norm = float(np.linalg.norm(trans))
        if norm > constraints.translation_bound * (1.0 + 1e-12):
            trans = trans * (constraints.translation_bound / norm)

    return mesh.with_vertices(init + disp), trans
