"""Experiment runs: mesh, deployment, defense replay, reports.

Scenes run concurrently in worker threads, each on its own state; the
reports are reduced afterwards in scene order.
"""

from __future__ import annotations

import asyncio
import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from trustpoison.attack import LossKind, LossSpec, OptimizerConfig, init_prior, optimize
from trustpoison.attack.priors import prior_kind
from trustpoison.config import load_constants
from trustpoison.defenses import DEFENSE_INFO, get_defense
from trustpoison.defenses.made import MadeCalibration, calibrate_made, load_calibration
from trustpoison.defenses.mate import DEFAULT_THRESHOLDS
from trustpoison.deployment import DeploymentPlan, ScoreWeights, candidate_from_scene, plan_deployment
from trustpoison.errors import ConfigError, TrustPoisonError
from trustpoison.geometry.library import car_mesh, resolve_mesh
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.harness.baselines import BaselineKind
from trustpoison.harness.benchmark import SubsetKind, load_benchmark, select_critical_subset
from trustpoison.harness.pipeline import FusionMode, benign_made_samples, run_defense, sense_trajectory
from trustpoison.harness.reports import SceneOutcome, dump_debug, write_reports
from trustpoison.perception.grid import GridSpec
from trustpoison.scene.builder import build_scene

logger = logging.getLogger(__name__)

DEFAULT_WORKERS = 4


@dataclass
class ExperimentConfig:
    scenarios: Path
    prior: str = "hollow"
    loss: str = "vis"
    defense: str = "cad"
    mitigation: bool = False
    seed: int = 0
    output: Path = Path("runs/out")
    fusion: str = "late"
    mesh: Path | None = None
    optimize: bool = False
    epochs: int = 300
    subset: str = "full"
    subset_size: int | None = None
    calibration: Path | None = None
    track_count: int | None = None
    track_sweep: bool = False
    debug: bool = False
    workers: int = DEFAULT_WORKERS

    def labels(self) -> dict[str, Any]:
        return {
            "prior": self.prior,
            "defense": self.defense,
            "mitigation": "on" if self.mitigation else "off",
            "subset": self.subset,
        }


def parse_experiment(data: dict, source: str = "<dict>", base: Path | None = None) -> ExperimentConfig:
    """Validate an experiment record; paths resolve against ``base``.

    Raises:
        ConfigError: on unknown fields or invalid values.
    """
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown experiment fields: {', '.join(unknown)}", source)
    if "scenarios" not in data:
        raise ConfigError("scenarios path is required", source)

    def path(value: Any) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() or base is None else base / p

    values = dict(data)
    for key in ("scenarios", "output", "mesh", "calibration"):
        if key in values:
            values[key] = path(values[key])
    try:
        config = ExperimentConfig(**values)
        prior_kind(config.prior)
        LossKind(config.loss)
        FusionMode(config.fusion)
        SubsetKind(config.subset)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), source) from exc
    if config.defense not in DEFENSE_INFO:
        raise ConfigError(f"Unknown defense '{config.defense}'. Available: {', '.join(DEFENSE_INFO)}", source)
    if config.track_count is not None and config.track_count not in DEFAULT_THRESHOLDS:
        raise ConfigError(f"Unsupported track count {config.track_count}", source)
    if not config.scenarios.exists():
        raise ConfigError("scenarios path does not exist", str(config.scenarios))
    return config


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read experiment: {exc.strerror or exc}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", str(path))
    return parse_experiment(data, str(path), path.parent)


@dataclass
class RunResult:
    output: Path
    summary: dict
    outcomes: list[SceneOutcome] = field(default_factory=list)

    @property
    def failed(self) -> int:
        return sum(not o.ok for o in self.outcomes)


def resolve_object_mesh(config: ExperimentConfig) -> TriangleMesh:
    """The adversarial mesh: a saved OBJ, a fresh optimization or the untouched prior."""
    if config.mesh is not None:
        return resolve_mesh(str(config.mesh))
    prior = init_prior(config.prior)
    if not config.optimize:
        return prior.mesh
    loss = LossSpec.for_prior(prior, LossKind(config.loss))
    result = optimize(prior, loss, OptimizerConfig(epochs=config.epochs, seed=config.seed))
    return result.mesh


def _calibrate(config: ExperimentConfig, scenes: list, spec: GridSpec, constants: dict) -> MadeCalibration:
    if config.calibration is not None:
        return load_calibration(config.calibration)
    made = constants["made"]
    samples, frames = [], 0
    for scene in scenes:
        trajectory = sense_trajectory(scene, spec)
        samples.extend(benign_made_samples(trajectory, config.fusion))
        frames += len(trajectory.frames)
    return calibrate_made(samples, made["beta"], made["quantile"], made["min_benign_frames"], frames)


def _run_scene(
    scene,
    mesh: TriangleMesh,
    config: ExperimentConfig,
    calibration: MadeCalibration | None,
    spec: GridSpec,
    constants: dict,
) -> SceneOutcome:
    outcome = SceneOutcome(scene.name, scene.victim.id)
    try:
        weights = ScoreWeights.from_constants(constants)
        plan = plan_deployment([candidate_from_scene(scene, spec)], weights, spec=spec, constants=constants)
        if not isinstance(plan, DeploymentPlan):
            outcome.error = f"infeasible deployment: {plan.reason}"
            return outcome
        outcome.victim_id = plan.victim_id
        outcome.valid_frame_fraction = plan.valid_frame_fraction
        scene = scene.with_victim(plan.victim_id)
        attacked = sense_trajectory(scene.with_target(mesh, plan.poses), spec)
        benign = sense_trajectory(scene.with_target(car_mesh(), plan.poses), spec)

        def replay(trajectory, track_count=None, perfect=False, mitigation=config.mitigation):
            defense = get_defense(config.defense, constants, calibration, track_count or config.track_count)
            return run_defense(trajectory, defense, mitigation, config.fusion, calibration, perfect, constants)

        outcome.attack = replay(attacked)
        outcome.benign = replay(benign)
        outcome.perfect = replay(benign, perfect=True, mitigation=False)
        if config.track_sweep and config.defense == "mate":
            outcome.sweep = {k: (replay(attacked, k), replay(benign, k)) for k in sorted(DEFAULT_THRESHOLDS)}
        if config.debug:
            dump_debug(config.output / "debug" / scene.name, attacked, outcome.attack)
    except TrustPoisonError as exc:
        logger.error("scene %s failed: %s", scene.name, exc)
        outcome.error = str(exc)
    except (ValueError, ArithmeticError) as exc:
        logger.exception("scene %s failed", scene.name)
        outcome.error = f"{type(exc).__name__}: {exc}"
    return outcome


async def run_experiment(
    config: ExperimentConfig,
    on_scene_done: Callable[[SceneOutcome], None] | None = None,
) -> RunResult:
    """Run every scene of the configured set and write the reports.

    Scenes that fail are reported and excluded from the pooled metrics.
    """
    constants = load_constants()
    spec = GridSpec.from_constants(constants)
    benchmark = load_benchmark(config.scenarios)
    if config.subset != SubsetKind.FULL.value:
        size = config.subset_size or max(1, len(benchmark) // 4)
        benchmark = select_critical_subset(benchmark, config.subset, min(size, len(benchmark)), spec=spec)
    scenes = [build_scene(c) for c in benchmark.scenes]
    mesh = await asyncio.to_thread(resolve_object_mesh, config)
    calibration = None
    if DEFENSE_INFO[config.defense].needs_calibration:
        calibration = await asyncio.to_thread(_calibrate, config, scenes, spec, constants)

    semaphore = asyncio.Semaphore(max(1, config.workers))

    async def one(scene) -> SceneOutcome:
        async with semaphore:
            outcome = await asyncio.to_thread(_run_scene, scene, mesh, config, calibration, spec, constants)
        if on_scene_done:
            on_scene_done(outcome)
        return outcome

    outcomes = list(await asyncio.gather(*(one(s) for s in scenes)))
    labels = {**config.labels(), "fusion": config.fusion, "seed": config.seed, "baseline": BaselineKind.PERFECT_ATTACK.value}
    summary = write_reports(config.output, labels, outcomes)
    logger.info("run finished: %d scenes, %d failed -> %s", len(outcomes), sum(not o.ok for o in outcomes), config.output)
    return RunResult(config.output, summary, outcomes)
