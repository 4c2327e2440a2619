"""Adversarial mesh generation: priors, training views, losses and the optimizer."""

from trustpoison.attack.conflict import ConflictDiagnostic, count_conflicts, gradient_conflict
from trustpoison.attack.job import OptimizationJob, load_job, parse_job, run_job
from trustpoison.attack.losses import LossKind, LossSpec, LossValue, loss_lucia, loss_made, loss_vis
from trustpoison.attack.optimizer import EpochRecord, OptimizationResult, OptimizerConfig, optimize, write_trace
from trustpoison.attack.priors import PriorKind, ShapePrior, init_prior
from trustpoison.attack.views import training_views

__all__ = [
    "ConflictDiagnostic",
    "EpochRecord",
    "LossKind",
    "LossSpec",
    "LossValue",
    "OptimizationJob",
    "OptimizationResult",
    "OptimizerConfig",
    "PriorKind",
    "ShapePrior",
    "count_conflicts",
    "gradient_conflict",
    "init_prior",
    "load_job",
    "loss_lucia",
    "loss_made",
    "loss_vis",
    "optimize",
    "parse_job",
    "run_job",
    "training_views",
    "write_trace",
]
