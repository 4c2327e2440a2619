"""Task losses over training views, each with a vertex gradient.

``loss_vis`` drives detector confidence down from victim views and up
from non-victim views. ``loss_lucia`` and ``loss_made`` target the
suspicion scores of the feature-level defenses, evaluated on the soft
occupancy of every training view as one collaboration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from trustpoison.attack.priors import ShapePrior
from trustpoison.attack.views import OBJECT_POSE
from trustpoison.config import load_constants
from trustpoison.defenses.lucia import NORM_EPS, pool, target_window
from trustpoison.defenses.made import MadeCalibration
from trustpoison.errors import CalibrationError
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.geometry.pose import Pose
from trustpoison.perception.grid import CellWindow
from trustpoison.perception.surrogate import SoftBev, TrainingContext, smooth_confidence, soft_bev, target_region
from trustpoison.scene.models import ViewSet

logger = logging.getLogger(__name__)

CONFIDENCE_CLAMP = 1e-6


class LossKind(str, Enum):
    VIS = "vis"
    LUCIA = "lucia"
    MADE = "made"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.VIS
    alpha: float = 1.0
    beta: float = 1.0
    lambda_smooth: float = 0.001
    w_v: float = 1.0
    w_n: float = 1.0
    beta_made: float = 1.0
    compression_ratio: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LossKind(self.kind))
        weights = (self.alpha, self.beta, self.lambda_smooth, self.w_v, self.w_n, self.beta_made)
        if min(weights) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.compression_ratio < 1:
            raise ValueError("compression_ratio must be >= 1")

    @classmethod
    def for_prior(cls, prior: ShapePrior, kind: LossKind | str = LossKind.VIS, **overrides) -> LossSpec:
        """Loss spec with the prior's (alpha, beta)."""
        alpha, beta = prior.loss_weights
        return cls(LossKind(kind), **{"alpha": alpha, "beta": beta, **overrides})


@dataclass(frozen=True, eq=False)
class LossValue:
    value: float
    gradient: np.ndarray
    terms: dict[str, float] = field(default_factory=dict)


def hide_loss(confidence: float) -> float:
    return float(-np.log1p(-np.clip(confidence, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)))


def show_loss(confidence: float) -> float:
    return float(-np.log(np.clip(confidence, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)))


def _clamped(confidence: float) -> bool:
    return not CONFIDENCE_CLAMP < confidence < 1.0 - CONFIDENCE_CLAMP


def loss_vis(
    prior: ShapePrior,
    views: ViewSet,
    ctx: TrainingContext,
    mesh: TriangleMesh | None = None,
    alpha: float | None = None,
    beta: float | None = None,
    pose: Pose = OBJECT_POSE,
) -> LossValue:
    """alpha * mean hide loss over victim views + beta * mean show loss over non-victim views.

    Args:
        prior: Supplies the default weights and mesh.
        views: Sampled training views.
        ctx: Sensor, grid and static surroundings.
        mesh: Current mesh; defaults to the prior's initial mesh.
        alpha: Weight of the hide term; defaults to the prior's.
        beta: Weight of the show term; defaults to the prior's.
        pose: Where the object stands.

    Returns:
        The loss, its gradient w.r.t. local vertices and the two terms.
    """
    mesh = mesh or prior.mesh
    default_alpha, default_beta = prior.loss_weights
    alpha = default_alpha if alpha is None else alpha
    beta = default_beta if beta is None else beta
    victim, nonvictim = views.sampled_victim_views, views.sampled_nonvictim_views
    if not victim and not nonvictim:
        raise ValueError("loss_vis needs at least one sampled view")
    if (alpha > 0 and not victim) or (beta > 0 and not nonvictim):
        raise ValueError("a weighted loss term has no sampled views")

    region = target_region(ctx, mesh, pose)
    gradient = np.zeros((mesh.vertex_count, 3))
    hide = show = 0.0
    if alpha > 0:
        for view in victim:
            sc = smooth_confidence(ctx, mesh, pose, view, region)
            hide += hide_loss(sc.confidence) / len(victim)
            if not _clamped(sc.confidence):
                gradient += alpha * sc.confidence * sc.logit_gradient / len(victim)
    if beta > 0:
        for view in nonvictim:
            sc = smooth_confidence(ctx, mesh, pose, view, region)
            show += show_loss(sc.confidence) / len(nonvictim)
            if not _clamped(sc.confidence):
                gradient -= beta * (1.0 - sc.confidence) * sc.logit_gradient / len(nonvictim)
    return LossValue(alpha * hide + beta * show, gradient, {"hide": hide, "show": show})


# -- feature-level objectives ----------------------------------------------


def _normalize_backward(flat: np.ndarray, grad_normalized: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(flat))
    if norm <= NORM_EPS:
        return grad_normalized / NORM_EPS
    unit = flat / norm
    return (grad_normalized - unit * (unit @ grad_normalized)) / norm


def _unpool(grad: np.ndarray, cr: int, shape: tuple[int, int]) -> np.ndarray:
    if cr == 1:
        return grad
    full = np.repeat(np.repeat(grad, cr, axis=0), cr, axis=1) / (cr * cr)
    return full[: shape[0], : shape[1]]


def _coefficients(is_victim: list[bool], w_victim: float, w_peer: float) -> np.ndarray:
    victims = sum(is_victim)
    peers = len(is_victim) - victims
    return np.array([w_victim / victims if v else w_peer / peers for v in is_victim])


def lucia_objective(
    occupancy: list[np.ndarray],
    observed: list[np.ndarray],
    is_victim: list[bool],
    w_v: float = 1.0,
    w_n: float = 1.0,
    cr: int = 1,
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """w_n * mean peer inconsistency - w_v * mean victim inconsistency.

    Inconsistency is the mean pairwise L1 between normalized pooled
    occupancy on co-observed cells. Returns the value, the gradient
    w.r.t. each occupancy array and the per-agent inconsistencies.
    """
    n = len(occupancy)
    if n < 2 or all(is_victim) or not any(is_victim):
        raise ValueError("the LUCIA objective needs a victim and at least one peer")
    shape = occupancy[0].shape
    distance = np.zeros((n, n))
    pair_grads: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for i in range(n):
        for j in range(i + 1, n):
            mask = observed[i] & observed[j]
            fi = pool(occupancy[i] * mask, cr).ravel()
            fj = pool(occupancy[j] * mask, cr).ravel()
            ni = fi / max(float(np.linalg.norm(fi)), NORM_EPS)
            nj = fj / max(float(np.linalg.norm(fj)), NORM_EPS)
            diff = ni - nj
            distance[i, j] = distance[j, i] = float(np.abs(diff).sum())
            sign = np.sign(diff)
            pooled_shape = pool(np.zeros(shape), cr).shape
            gi = _unpool(_normalize_backward(fi, sign).reshape(pooled_shape), cr, shape) * mask
            gj = _unpool(_normalize_backward(fj, -sign).reshape(pooled_shape), cr, shape) * mask
            pair_grads[(i, j)] = (gi, gj)

    inconsistency = distance.sum(axis=1) / (n - 1)
    coef = _coefficients(is_victim, -w_v, w_n)
    value = float(coef @ inconsistency)
    grads = [np.zeros(shape) for _ in range(n)]
    for (i, j), (gi, gj) in pair_grads.items():
        weight = (coef[i] + coef[j]) / (n - 1)
        grads[i] += weight * gi
        grads[j] += weight * gj
    return value, grads, inconsistency


def made_objective(
    occupancy: list[np.ndarray],
    observed: list[np.ndarray],
    is_victim: list[bool],
    recon_threshold: float,
    beta_made: float = 1.0,
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """-mean victim suspicion + beta_made * mean peer suspicion.

    Suspicion is the reconstruction residual against the coverage-weighted
    peer average, divided by the calibrated threshold. Returns the value,
    the gradient w.r.t. each occupancy array and the per-agent suspicion.
    """
    n = len(occupancy)
    if n < 2 or all(is_victim) or not any(is_victim):
        raise ValueError("the MADE objective needs a victim and at least one peer")
    shape = occupancy[0].shape
    obs = [o.astype(np.float64) for o in observed]
    total_obs = sum(obs)
    total_occ = sum(o * occ for o, occ in zip(obs, occupancy))
    any_occupied = np.logical_or.reduce([occ > 0.5 for occ in occupancy])

    suspicion = np.zeros(n)
    coef = _coefficients(is_victim, -1.0, beta_made)
    grads = [np.zeros(shape) for _ in range(n)]
    for k in range(n):
        weight = total_obs - obs[k]
        recon = (total_occ - obs[k] * occupancy[k]) / np.where(weight > 0, weight, 1.0)
        support = any_occupied & observed[k] & (weight > 0)
        count = int(np.count_nonzero(support))
        if count == 0:
            continue
        residual = occupancy[k] - recon
        suspicion[k] = float(np.abs(residual)[support].mean()) / recon_threshold
        d_res = np.where(support, np.sign(residual), 0.0) / (count * recon_threshold) * coef[k]
        grads[k] += d_res
        share = d_res / np.where(weight > 0, weight, 1.0)
        for j in range(n):
            if j != k:
                grads[j] -= share * obs[j]
    return float(coef @ suspicion), grads, suspicion


def _crop(values: np.ndarray, window: CellWindow, cr: int) -> np.ndarray:
    return values[window.x0 * cr : window.x1 * cr, window.y0 * cr : window.y1 * cr]


def _soft_views(
    prior: ShapePrior, views: ViewSet, ctx: TrainingContext, mesh: TriangleMesh, pose: Pose
) -> tuple[list[SoftBev], list[bool]]:
    victim, nonvictim = views.sampled_victim_views, views.sampled_nonvictim_views
    if not victim or not nonvictim:
        raise ValueError("feature losses need victim and non-victim views (at least two collaborators)")
    region = target_region(ctx, mesh, pose)
    softs = [soft_bev(ctx, mesh, pose, view, region) for view in (*victim, *nonvictim)]
    return softs, [True] * len(victim) + [False] * len(nonvictim)


def _backward(softs: list[SoftBev], grads: list[np.ndarray], window: CellWindow, cr: int, n_vertices: int) -> np.ndarray:
    gradient = np.zeros((n_vertices, 3))
    for soft, grad in zip(softs, grads):
        full = np.zeros(soft.occupancy.shape)
        target = _crop(full, window, cr)
        target[...] = grad[: target.shape[0], : target.shape[1]]
        gradient += soft.backward(full)
    return gradient


def loss_lucia(
    prior: ShapePrior,
    views: ViewSet,
    ctx: TrainingContext,
    w_v: float = 1.0,
    w_n: float = 1.0,
    cr: int = 1,
    mesh: TriangleMesh | None = None,
    pose: Pose = OBJECT_POSE,
    window_margin: int | None = None,
) -> LossValue:
    """LUCIA inconsistency margin on the target-local window."""
    mesh = mesh or prior.mesh
    if window_margin is None:
        window_margin = int(load_constants()["lucia"]["window"])
    softs, is_victim = _soft_views(prior, views, ctx, mesh, pose)
    window = target_window(softs[0].region, cr, window_margin)
    value, grads, s = lucia_objective(
        [_crop(sb.occupancy, window, cr) for sb in softs],
        [_crop(sb.observed, window, cr) for sb in softs],
        is_victim,
        w_v,
        w_n,
        cr,
    )
    victims = np.asarray(is_victim)
    terms = {"s_victim": float(s[victims].mean()), "s_peer": float(s[~victims].mean())}
    return LossValue(value, _backward(softs, grads, window, cr, mesh.vertex_count), terms)


def loss_made(
    prior: ShapePrior,
    views: ViewSet,
    ctx: TrainingContext,
    calibration: MadeCalibration | None,
    beta_made: float = 1.0,
    mesh: TriangleMesh | None = None,
    pose: Pose = OBJECT_POSE,
) -> LossValue:
    """MADE suspicion margin from the reconstruction branch."""
    if calibration is None:
        raise CalibrationError("loss_made needs a MADE calibration record")
    mesh = mesh or prior.mesh
    softs, is_victim = _soft_views(prior, views, ctx, mesh, pose)
    window = CellWindow.around(softs[0].region)
    value, grads, s = made_objective(
        [_crop(sb.occupancy, window, 1) for sb in softs],
        [_crop(sb.observed, window, 1) for sb in softs],
        is_victim,
        calibration.recon_threshold,
        beta_made,
    )
    victims = np.asarray(is_victim)
    terms = {"s_victim": float(s[victims].mean()), "s_peer": float(s[~victims].mean())}
    return LossValue(value, _backward(softs, grads, window, 1, mesh.vertex_count), terms)
