"""Per-vertex conflict between the hide and show objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from trustpoison.attack.priors import ShapePrior
from trustpoison.attack.views import DISTANCES, OBJECT_POSE, views_at
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.perception.surrogate import TrainingContext, smooth_confidence, target_region

ZERO_GRADIENT = 1e-12


@dataclass(frozen=True, eq=False)
class ConflictDiagnostic:
    angle: float
    n_conf: int
    vertex_ids: np.ndarray
    victim_gradient: np.ndarray
    nonvictim_gradient: np.ndarray


def count_conflicts(g_v: np.ndarray, g_n: np.ndarray) -> int:
    """Rows whose gradients point in opposing directions; zero rows are skipped."""
    g_v = np.asarray(g_v, dtype=np.float64).reshape(-1, 3)
    g_n = np.asarray(g_n, dtype=np.float64).reshape(-1, 3)
    norm_v = np.linalg.norm(g_v, axis=1)
    norm_n = np.linalg.norm(g_n, axis=1)
    live = (norm_v > ZERO_GRADIENT) & (norm_n > ZERO_GRADIENT)
    dots = np.einsum("ij,ij->i", g_v, g_n)
    return int(np.count_nonzero(live & (dots < 0.0)))


def _mean_logit_gradient(
    ctx: TrainingContext, mesh: TriangleMesh, angle: float, distances: tuple[float, ...], region: np.ndarray
) -> np.ndarray:
    total = np.zeros((mesh.vertex_count, 3))
    for view in views_at(angle, distances):
        total += smooth_confidence(ctx, mesh, OBJECT_POSE, view, region).logit_gradient
    return total / len(distances)


def gradient_conflict(
    prior: ShapePrior,
    theta: float,
    ctx: TrainingContext | None = None,
    distances: tuple[float, ...] = DISTANCES,
    mesh: TriangleMesh | None = None,
) -> ConflictDiagnostic:
    """Count masked vertices where hiding from 0 deg and showing at ``theta`` disagree.

    Gradients are taken in logit space: the hide gradient follows the
    victim-view logit, the show gradient the negated non-victim logit, so
    saturated confidences still carry a direction.
    """
    mask = prior.mask
    if not np.any(mask):
        raise ValueError("gradient_conflict needs a non-empty vertex mask")
    ctx = ctx or TrainingContext.default()
    mesh = mesh or prior.mesh
    region = target_region(ctx, mesh, OBJECT_POSE)
    g_v = _mean_logit_gradient(ctx, mesh, 0.0, distances, region)
    g_n = -_mean_logit_gradient(ctx, mesh, theta, distances, region)
    ids = np.flatnonzero(mask)
    return ConflictDiagnostic(float(theta), count_conflicts(g_v[ids], g_n[ids]), ids, g_v[ids], g_n[ids])
