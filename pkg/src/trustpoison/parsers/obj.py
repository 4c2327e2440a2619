"""Wavefront OBJ meshes (vertices and triangles only) and vertex-mask sidecars."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from trustpoison.errors import GeometryError, MeshFormatError
from trustpoison.geometry.mesh import TriangleMesh

logger = logging.getLogger(__name__)

# Records that carry no geometry we use.
_IGNORED = {"vn", "vt", "vp", "o", "g", "s", "usemtl", "mtllib", "l"}


def _vertex_index(token: str, count: int, path: Path, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        index = int(head)
    except ValueError:
        raise MeshFormatError(f"{path}:{lineno}: bad face index '{token}'") from None
    # OBJ is 1-based; negative indices count back from the latest vertex.
    resolved = index - 1 if index > 0 else count + index
    if index == 0 or not 0 <= resolved < count:
        raise MeshFormatError(f"{path}:{lineno}: face index {index} out of range")
    return resolved


def parse_obj(text: str, path: str | Path = "<string>") -> TriangleMesh:
    """Parse OBJ text into a mesh.

    Args:
        text: File contents.
        path: Used only in error messages.
    """
    path = Path(path)
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *fields = line.split()
        if tag == "v":
            if len(fields) < 3:
                raise MeshFormatError(f"{path}:{lineno}: vertex needs three coordinates")
            try:
                vertices.append((float(fields[0]), float(fields[1]), float(fields[2])))
            except ValueError:
                raise MeshFormatError(f"{path}:{lineno}: bad vertex '{line}'") from None
        elif tag == "f":
            if len(fields) != 3:
                raise MeshFormatError(
                    f"{path}:{lineno}: only triangular faces are supported, got {len(fields)} vertices"
                )
            a, b, c = (_vertex_index(tok, len(vertices), path, lineno) for tok in fields)
            faces.append((a, b, c))
        elif tag not in _IGNORED:
            logger.debug("%s:%d: skipping unsupported record '%s'", path, lineno, tag)

    if not vertices:
        raise MeshFormatError(f"{path}: no vertices found")
    try:
        mesh = TriangleMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except GeometryError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc

    degenerate = mesh.degenerate_faces()
    if len(degenerate):
        logger.warning("%s: %d degenerate triangles will be skipped when casting", path, len(degenerate))
    return mesh


def load_obj(path: str | Path) -> TriangleMesh:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MeshFormatError(f"{path}: {exc.strerror or exc}") from exc
    return parse_obj(text, path)


def save_obj(mesh: TriangleMesh, path: str | Path) -> Path:
    """Write vertices and faces; coordinates keep 9 decimals so reloads are stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {mesh.vertex_count} vertices, {len(mesh.faces)} faces"]
    lines += [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_mask(path: str | Path, vertex_count: int) -> np.ndarray:
    """Read a sidecar listing masked (0-based) vertex indices, one per line."""
    path = Path(path)
    mask = np.zeros(vertex_count, dtype=bool)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            index = int(line)
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: expected a vertex index, got '{line}'") from None
        if not 0 <= index < vertex_count:
            raise MeshFormatError(f"{path}:{lineno}: vertex index {index} out of range")
        mask[index] = True
    return mask


def save_mask(mask: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    indices = np.flatnonzero(np.asarray(mask, dtype=bool))
    path.write_text("".join(f"{i}\n" for i in indices), encoding="utf-8")
    return path
