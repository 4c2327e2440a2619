"""Offline mesh optimization: task loss + Laplacian smoothing, then projection.

Vertex displacement lives in a latent ``Z`` with ``D = b * tanh(Z / b)``
so the bound is respected during the step. The smoothing term acts on
the displacement field; in the plain gradient mode it is integrated
semi-implicitly, which keeps large smoothing weights stable.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import factorized

from trustpoison.attack.losses import LossKind, LossSpec, LossValue, loss_lucia, loss_made, loss_vis
from trustpoison.attack.priors import ShapePrior
from trustpoison.attack.views import OBJECT_POSE, training_views
from trustpoison.defenses.made import MadeCalibration
from trustpoison.errors import OptimizationDiverged
from trustpoison.geometry.mesh import TriangleMesh, project_constraints, uniform_laplacian
from trustpoison.perception.surrogate import TrainingContext
from trustpoison.scene.models import ViewSet

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
ARTANH_CLIP = 1.0 - 1e-12

TaskLoss = Callable[[TriangleMesh], LossValue]


@dataclass(frozen=True)
class OptimizerConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    view_set: ViewSet | None = None
    seed: int = 0
    adam: bool = False
    views_per_epoch: int | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.views_per_epoch is not None and self.views_per_epoch < 1:
            raise ValueError("views_per_epoch must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    task_loss: float
    smooth_loss: float
    total: float


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    mesh: TriangleMesh
    translation: np.ndarray
    trace: list[EpochRecord] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.trace[-1].total if self.trace else float("nan")


def _subsample(views: ViewSet, count: int | None, rng: np.random.Generator) -> ViewSet:
    if count is None:
        return views

    def pick(poses: tuple) -> tuple:
        if len(poses) <= count:
            return poses
        return tuple(poses[i] for i in np.sort(rng.choice(len(poses), count, replace=False)))

    return replace(
        views,
        sampled_victim_views=pick(views.sampled_victim_views),
        sampled_nonvictim_views=pick(views.sampled_nonvictim_views),
    )


def make_task(
    prior: ShapePrior,
    loss: LossSpec,
    views: ViewSet,
    ctx: TrainingContext,
    calibration: MadeCalibration | None = None,
) -> TaskLoss:
    """Bind a loss spec to its views and context."""
    if loss.kind is LossKind.VIS:
        return lambda mesh: loss_vis(prior, views, ctx, mesh, loss.alpha, loss.beta, OBJECT_POSE)
    if loss.kind is LossKind.LUCIA:
        return lambda mesh: loss_lucia(prior, views, ctx, loss.w_v, loss.w_n, loss.compression_ratio, mesh)
    return lambda mesh: loss_made(prior, views, ctx, calibration, loss.beta_made, mesh)


class _Adam:
    def __init__(self, shape: tuple[int, ...]) -> None:
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        b1, b2 = ADAM_BETAS
        self.t += 1
        self.m = b1 * self.m + (1.0 - b1) * grad
        self.v = b2 * self.v + (1.0 - b2) * grad * grad
        m_hat = self.m / (1.0 - b1**self.t)
        v_hat = self.v / (1.0 - b2**self.t)
        return m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _latent_from(displacement: np.ndarray, bound: float) -> np.ndarray:
    if bound <= 0:
        return np.zeros_like(displacement)
    return bound * np.arctanh(np.clip(displacement / bound, -ARTANH_CLIP, ARTANH_CLIP))


def optimize(
    prior: ShapePrior,
    loss: LossSpec,
    cfg: OptimizerConfig,
    ctx: TrainingContext | None = None,
    calibration: MadeCalibration | None = None,
    task: TaskLoss | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> OptimizationResult:
    """Run the epoch loop and return the projected mesh with its loss trace.

    Args:
        prior: Initial mesh, constraints and deformation bound.
        loss: Task loss selection, weights and the smoothing weight.
        cfg: Epochs, rate, views, seed and the Adam switch.
        ctx: Training context; defaults to the shipped constants.
        calibration: MADE calibration, needed for the MADE loss.
        task: Replaces the loss built from ``loss`` (smoothing still applies).
        on_epoch: Callback(record) after each epoch.

    Raises:
        OptimizationDiverged: if the total loss becomes non-finite.
    """
    ctx = ctx or TrainingContext.default()
    views = cfg.view_set or training_views()
    rng = np.random.default_rng(cfg.seed)
    eta, lam = cfg.learning_rate, loss.lambda_smooth
    bound = prior.displacement_bound

    init = prior.mesh.init_vertices
    n = prior.mesh.vertex_count
    rows = np.flatnonzero(prior.mask)
    moving = prior.translation_mask if prior.translates else None
    lap, _ = uniform_laplacian(prior.mesh)
    gram = (lap.T @ lap).tocsr()
    sub = gram[rows][:, rows]
    solve = None
    if not cfg.adam and eta * lam > 0 and len(rows):
        solve = factorized((sparse.identity(len(rows)) + 2.0 * eta * lam * sub).tocsc())

    latent = np.zeros((n, 3))
    translation = np.zeros(3)
    adam_z = _Adam((len(rows), 3)) if cfg.adam else None
    adam_t = _Adam((3,)) if cfg.adam else None

    def realize() -> tuple[TriangleMesh, np.ndarray]:
        disp = np.zeros((n, 3))
        disp[rows] = bound * np.tanh(latent[rows] / bound) if bound > 0 else 0.0
        _, clamped = project_constraints(prior.mesh, prior.constraints, translation)
        mesh = prior.realize(disp, clamped if moving is not None else None)
        projected, _ = project_constraints(mesh, prior.constraints)
        return projected, clamped

    mesh, translation = realize()
    trace: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        fn = task or make_task(prior, loss, _subsample(views, cfg.views_per_epoch, rng), ctx, calibration)
        result = fn(mesh)
        disp = mesh.vertices - init
        smooth_disp = lap @ disp
        smooth = lam * float(np.sum(smooth_disp * smooth_disp))
        total = result.value + smooth
        if not (np.isfinite(total) and np.all(np.isfinite(result.gradient))):
            raise OptimizationDiverged(epoch, {"task_loss": result.value, "smooth_loss": smooth})
        record = EpochRecord(epoch, float(result.value), smooth, float(total))
        trace.append(record)
        logger.debug("epoch %d: task %.6f smooth %.6f", epoch, result.value, smooth)
        if on_epoch:
            on_epoch(record)

        own = disp if moving is None else disp - np.where(moving[:, None], translation, 0.0)
        saturation = 1.0 - (own[rows] / bound) ** 2 if bound > 0 else np.zeros((len(rows), 3))
        grad_z = result.gradient[rows] * saturation
        grad_t = result.gradient[moving].sum(axis=0) if moving is not None else np.zeros(3)
        if adam_z is not None:
            grad_z = grad_z + 2.0 * lam * (gram @ own)[rows]
            latent[rows] -= eta * adam_z.step(grad_z)
            translation = translation - eta * adam_t.step(grad_t)
        else:
            stepped = latent[rows] - eta * grad_z
            latent[rows] = np.column_stack([solve(stepped[:, k]) for k in range(3)]) if solve else stepped
            translation = translation - eta * grad_t

        mesh, translation = realize()
        own = mesh.vertices - init
        if moving is not None:
            own = own - np.where(moving[:, None], translation, 0.0)
        latent[rows] = _latent_from(own[rows], bound)

    return OptimizationResult(mesh, translation, trace)


def write_trace(trace: list[EpochRecord], path: str | Path) -> Path:
    """Per-epoch loss trace as CSV: epoch, task_loss, smooth_loss, total."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "task_loss", "smooth_loss", "total"])
        for r in trace:
            writer.writerow([r.epoch, f"{r.task_loss:.9g}", f"{r.smooth_loss:.9g}", f"{r.total:.9g}"])
    return out
