"""Optimization job files.

A job names the prior, the loss, the optimizer settings and where to
write the result::

    {"prior": {"kind": "hollow", "parameters": {"vertex_bound": 0.1}},
     "loss": {"kind": "vis", "lambda_smooth": 0.001},
     "optimizer": {"epochs": 300, "learning_rate": 0.01, "seed": 0},
     "output": "hollow.obj",
     "trace": "hollow_trace.csv"}

Relative paths resolve against the job file's directory.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from trustpoison.attack.losses import LossKind, LossSpec
from trustpoison.attack.optimizer import EpochRecord, OptimizationResult, OptimizerConfig, optimize, write_trace
from trustpoison.attack.priors import PRIOR_DEFAULTS, init_prior, prior_kind
from trustpoison.attack.views import DISTANCES, NONVICTIM_ANGLES, VICTIM_ANGLES, training_views
from trustpoison.defenses.made import load_calibration
from trustpoison.errors import ConfigError
from trustpoison.parsers.obj import save_mask, save_obj
from trustpoison.perception.surrogate import TrainingContext

logger = logging.getLogger(__name__)


@dataclass
class OptimizationJob:
    prior_kind: str
    prior_parameters: dict[str, float]
    loss: dict[str, Any]
    optimizer: dict[str, Any]
    output: Path
    trace: Path | None = None
    calibration: Path | None = None
    views: dict[str, list[float]] = field(default_factory=dict)


def _resolve(base: Path | None, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() or base is None else base / path


def parse_job(text: str, path: str | Path = "<string>") -> OptimizationJob:
    """Parse and validate a job record.

    Raises:
        ConfigError: on malformed JSON (with its line) or invalid fields.
    """
    source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, source, exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", source)
    base = Path(path).parent if source != "<string>" else None

    prior = data.get("prior")
    if not isinstance(prior, dict) or "kind" not in prior:
        raise ConfigError("prior.kind is required", source)
    try:
        kind = prior_kind(prior["kind"])
    except ValueError as exc:
        raise ConfigError(str(exc), source) from None
    parameters = prior.get("parameters", {})
    unknown = sorted(set(parameters) - set(PRIOR_DEFAULTS[kind]))
    if unknown:
        raise ConfigError(f"prior.parameters: unknown {', '.join(unknown)}", source)
    if "output" not in data:
        raise ConfigError("output path is required", source)

    job = OptimizationJob(
        prior_kind=kind.value,
        prior_parameters={k: float(v) for k, v in parameters.items()},
        loss=dict(data.get("loss", {})),
        optimizer=dict(data.get("optimizer", {})),
        output=_resolve(base, data["output"]),
        trace=_resolve(base, data.get("trace")),
        calibration=_resolve(base, data.get("calibration")),
        views=dict(data.get("views", {})),
    )
    try:
        job_loss_spec(job)
        job_optimizer_config(job)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid loss or optimizer settings: {exc}", source) from exc
    return job


def load_job(path: str | Path) -> OptimizationJob:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read job: {exc.strerror or exc}", str(path)) from exc
    return parse_job(text, path)


def job_loss_spec(job: OptimizationJob) -> LossSpec:
    prior = init_prior(job.prior_kind, **job.prior_parameters)
    settings = dict(job.loss)
    kind = LossKind(settings.pop("kind", "vis"))
    return LossSpec.for_prior(prior, kind, **settings)


def job_optimizer_config(job: OptimizationJob) -> OptimizerConfig:
    view_set = training_views(
        tuple(job.views.get("victim_angles", VICTIM_ANGLES)),
        tuple(job.views.get("nonvictim_angles", NONVICTIM_ANGLES)),
        tuple(job.views.get("distances", DISTANCES)),
    )
    return OptimizerConfig(view_set=view_set, **job.optimizer)


def run_job(
    job: OptimizationJob,
    ctx: TrainingContext | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> OptimizationResult:
    """Optimize, then write the mesh (with its mask sidecar) and the trace."""
    prior = init_prior(job.prior_kind, **job.prior_parameters)
    calibration = load_calibration(job.calibration) if job.calibration else None
    result = optimize(
        prior, job_loss_spec(job), job_optimizer_config(job), ctx, calibration, on_epoch=on_epoch
    )
    job.output.parent.mkdir(parents=True, exist_ok=True)
    save_obj(result.mesh, job.output)
    save_mask(prior.mask, job.output.with_name(job.output.name + ".mask"))
    if job.trace is not None:
        write_trace(result.trace, job.trace)
    logger.info("optimized %s prior: final loss %.6f -> %s", job.prior_kind, result.final_loss, job.output)
    return result

