"""Built-in meshes: the benign car, the hollow and cuboid priors, walls and boards.

All built-ins are closed lattices over the surface of a unit cube pushed
through a shape map, so neighbouring faces share vertices and the
Laplacian sees one connected surface per part.
"""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np

from trustpoison.errors import ConfigError
from trustpoison.geometry.mesh import TriangleMesh, merge_meshes

CAR_LENGTH = 4.4
CAR_WIDTH = 1.8

# rear bumper -> trunk -> rear window -> roof -> windshield -> hood
_CAR_PROFILE_X = np.array([-2.2, -1.5, -0.7, 0.5, 1.3, 2.2])
_CAR_PROFILE_Z = np.array([1.0, 1.0, 1.45, 1.45, 0.95, 0.85])

HOLLOW_LENGTH = 4.4
HOLLOW_WIDTH = 1.6
HOLLOW_HEIGHT = 1.6
HOLLOW_BOARD_THICKNESS = 0.04

ShapeMap = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def lattice_box(divisions: tuple[int, int, int], shape: ShapeMap) -> TriangleMesh:
    """Triangulated surface of a (nx, ny, nz) lattice on the unit cube."""
    nx, ny, nz = divisions
    index: dict[tuple[int, int, int], int] = {}
    coords: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    def vid(i: int, j: int, k: int) -> int:
        key = (i, j, k)
        if key not in index:
            index[key] = len(coords)
            coords.append((i / nx, j / ny, k / nz))
        return index[key]

    def quad(a: int, b: int, c: int, d: int, flip: bool) -> None:
        if flip:
            a, b, c, d = a, d, c, b
        faces.append((a, b, c))
        faces.append((a, c, d))

    for i in (0, nx):
        for j in range(ny):
            for k in range(nz):
                quad(vid(i, j, k), vid(i, j + 1, k), vid(i, j + 1, k + 1), vid(i, j, k + 1), i == 0)
    for j in (0, ny):
        for i in range(nx):
            for k in range(nz):
                quad(vid(i, j, k), vid(i, j, k + 1), vid(i + 1, j, k + 1), vid(i + 1, j, k), j == 0)
    for k in (0, nz):
        for i in range(nx):
            for j in range(ny):
                quad(vid(i, j, k), vid(i + 1, j, k), vid(i + 1, j + 1, k), vid(i, j + 1, k), k == 0)

    unit = np.asarray(coords)
    vertices = shape(unit[:, 0], unit[:, 1], unit[:, 2])
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))


def _slab(lo: tuple[float, float, float], hi: tuple[float, float, float]) -> ShapeMap:
    lo_arr, hi_arr = np.asarray(lo), np.asarray(hi)

    def shape(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        return lo_arr + np.stack([u, v, w], axis=1) * (hi_arr - lo_arr)

    return shape


def car_top(x: np.ndarray) -> np.ndarray:
    return np.interp(x, _CAR_PROFILE_X, _CAR_PROFILE_Z)


def car_mesh(divisions: tuple[int, int, int] = (22, 9, 6)) -> TriangleMesh:
    """Benign sedan, 4.4 x 1.8 m, rear at x = -2.2, resting on the ground."""

    def shape(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        x = -0.5 * CAR_LENGTH + CAR_LENGTH * u
        y = -0.5 * CAR_WIDTH + CAR_WIDTH * v
        return np.stack([x, y, car_top(x) * w], axis=1)

    return lattice_box(divisions, shape)


def rear_mask(mesh: TriangleMesh, depth: float = 0.3) -> np.ndarray:
    """Vertices within ``depth`` of the rearmost point (local -x)."""
    x = mesh.vertices[:, 0]
    return x <= x.min() + depth + 1e-9


def hollow_mesh(divisions_per_board: tuple[int, int, int] = (22, 1, 8)) -> TriangleMesh:
    """Two parallel thin boards with an empty center, 4.4 x 1.6 x 1.6 m overall."""
    half_l, half_w = 0.5 * HOLLOW_LENGTH, 0.5 * HOLLOW_WIDTH
    inner = half_w - HOLLOW_BOARD_THICKNESS
    left = lattice_box(divisions_per_board, _slab((-half_l, inner, 0.0), (half_l, half_w, HOLLOW_HEIGHT)))
    right = lattice_box(
        divisions_per_board, _slab((-half_l, -half_w, 0.0), (half_l, -inner, HOLLOW_HEIGHT))
    )
    return merge_meshes([left, right])


def cuboid_mesh(
    size: tuple[float, float, float] = (4.4, 1.8, 1.5),
    divisions: tuple[int, int, int] = (11, 5, 4),
) -> TriangleMesh:
    length, width, height = size
    return lattice_box(divisions, _slab((-0.5 * length, -0.5 * width, 0.0), (0.5 * length, 0.5 * width, height)))


def wall_mesh(length: float, thickness: float, height: float) -> TriangleMesh:
    divisions = (max(1, round(length)), 1, max(1, round(height)))
    return lattice_box(
        divisions,
        _slab((-0.5 * length, -0.5 * thickness, 0.0), (0.5 * length, 0.5 * thickness, height)),
    )


def board_mesh(width: float = 1.6, height: float = 1.2, resolution: int = 15) -> TriangleMesh:
    """Flat board in the local y-z plane (x = 0), bottom edge at z = 0."""
    ys = np.linspace(-0.5 * width, 0.5 * width, resolution)
    zs = np.linspace(0.0, height, resolution)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    vertices = np.stack([np.zeros(yy.size), yy.ravel(), zz.ravel()], axis=1)
    faces = []
    for j in range(resolution - 1):
        for k in range(resolution - 1):
            a = j * resolution + k
            b = (j + 1) * resolution + k
            faces.append((a, b, b + 1))
            faces.append((a, b + 1, a + 1))
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))


def _builtin(spec: str) -> TriangleMesh:
    name, _, args = spec.partition(":")
    if name == "car":
        return car_mesh()
    if name == "hollow":
        return hollow_mesh()
    if name == "cuboid":
        return cuboid_mesh()
    if name == "wall":
        try:
            length, thickness, height = (float(p) for p in args.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"wall mesh needs LxWxH dimensions, got 'builtin:{spec}'") from exc
        return wall_mesh(length, thickness, height)
    raise ConfigError(
        f"Unknown built-in mesh '{name}'. Available: car, hollow, cuboid, wall:LxWxH"
    )


def resolve_mesh(reference: str, base_dir: str | Path | None = None) -> TriangleMesh:
    """Load a mesh from ``builtin:<name>`` or an OBJ path (relative to ``base_dir``).

    An OBJ path may be accompanied by a ``<path>.mask`` vertex-mask sidecar.
    """
    if reference.startswith("builtin:"):
        return _builtin(reference.removeprefix("builtin:"))

    from trustpoison.parsers.obj import load_mask, load_obj

    path = Path(reference)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    mesh = load_obj(path)
    sidecar = path.with_name(path.name + ".mask")
    if sidecar.exists():
        mesh = mesh.with_mask(load_mask(sidecar, mesh.vertex_count))
    return mesh
