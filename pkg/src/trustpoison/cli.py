"""CLI interface for the trust-poisoning simulator."""

from __future__ import annotations

import asyncio
import json
import logging
from pathlib import Path

import typer
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from trustpoison import __version__
from trustpoison.attack.job import load_job, parse_job, run_job
from trustpoison.attack.priors import PriorKind
from trustpoison.console import console, setup_logging
from trustpoison.defenses import DEFENSE_INFO
from trustpoison.defenses.made import calibrate_made, save_calibration
from trustpoison.deployment import DeploymentPlan, ScoreWeights, candidate_from_scene, plan_deployment, save_plan
from trustpoison.errors import CalibrationError, ConfigError, OptimizationDiverged, ScenarioValidationError
from trustpoison.harness.benchmark import generate_benchmark, load_benchmark, save_benchmark
from trustpoison.harness.pipeline import benign_made_samples, sense_trajectory
from trustpoison.harness.reports import load_summary, summary_table
from trustpoison.harness.runner import ExperimentConfig, load_experiment, parse_experiment, run_experiment
from trustpoison.perception.calibrate import calibrate_confidence, car_samples, write_calibration
from trustpoison.perception.grid import GridSpec
from trustpoison.scene.builder import build_scene, default_lidar

app = typer.Typer(
    name="trustpoison",
    help="Simulate trust-poisoning attacks on multi-agent LiDAR collaborative perception.",
    no_args_is_help=True,
)

EXIT_FAILED_SCENES = 1
EXIT_CONFIG = 2


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log debug details."),
) -> None:
    setup_logging(logging.DEBUG if verbose else logging.INFO)


def _config_error(exc: Exception) -> typer.Exit:
    console.print(f"[red]Config error:[/red] {exc}")
    return typer.Exit(EXIT_CONFIG)


def _spinner() -> Progress:
    return Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console)


@app.command("gen-benchmark")
def gen_benchmark(
    count: int = typer.Option(60, "--count", "-n", min=1, help="Number of scenes to generate."),
    seed: int = typer.Option(0, "--seed", help="Generator seed."),
    frames: int = typer.Option(10, "--frames", min=1, help="Frames per scene."),
    out: Path = typer.Option(Path("benchmark"), "--out", "-o", help="Output directory."),
    skip_visibility: bool = typer.Option(False, "--skip-visibility", help="Check only distance and rear-facing conditions."),
) -> None:
    """Generate the seeded scene benchmark."""
    with _spinner() as progress:
        progress.add_task(f"Generating {count} scenes...", total=None)
        benchmark = generate_benchmark(count, seed, frames, check_visibility=not skip_visibility)
    save_benchmark(benchmark, out)
    console.print(f"[green]Wrote {len(benchmark)} scenes to {out}[/green]")
    if benchmark.skipped:
        console.print(f"[yellow]{len(benchmark.skipped)} scenes skipped (no valid placement)[/yellow]")


@app.command("optimize-mesh")
def optimize_mesh(
    config: Path | None = typer.Option(None, "--config", "-c", help="Optimization job file (JSON)."),
    prior: str = typer.Option("hollow", "--prior", help="Shape prior: " + ", ".join(k.value for k in PriorKind)),
    loss: str = typer.Option("vis", "--loss", help="Task loss: vis, lucia or made."),
    epochs: int = typer.Option(300, "--epochs", min=1),
    seed: int = typer.Option(0, "--seed"),
    out: Path = typer.Option(Path("adversarial.obj"), "--out", "-o", help="Output OBJ path."),
) -> None:
    """Optimize an adversarial mesh from a shape prior."""
    try:
        if config is not None:
            job = load_job(config)
        else:
            record = {
                "prior": {"kind": prior},
                "loss": {"kind": loss},
                "optimizer": {"epochs": epochs, "seed": seed},
                "output": str(out),
                "trace": str(out.with_suffix(".csv")),
            }
            job = parse_job(json.dumps(record))
    except (ConfigError, ValueError) as exc:
        raise _config_error(exc) from exc

    total = int(job.optimizer.get("epochs", 300))
    with Progress(
        SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(), console=console
    ) as progress:
        task = progress.add_task(f"Optimizing {job.prior_kind} prior...", total=total)

        def on_epoch(record) -> None:
            progress.update(task, advance=1, description=f"Epoch {record.epoch}: loss {record.total:.5f}")

        try:
            result = run_job(job, on_epoch=on_epoch)
        except (OptimizationDiverged, CalibrationError) as exc:
            console.print(f"[red]{exc}[/red]")
            raise typer.Exit(EXIT_FAILED_SCENES) from exc
    console.print(f"[green]Saved {job.output} (final loss {result.final_loss:.6f})[/green]")


@app.command("plan-deploy")
def plan_deploy(
    scenarios: list[Path] = typer.Argument(help="Candidate scenario files."),
    out: Path = typer.Option(Path("plan.json"), "--out", "-o", help="Where to write the deployment plan."),
    omega_o: float = typer.Option(1.0, "--omega-o", help="Weight of occlusion density."),
    omega_c: float = typer.Option(1.0, "--omega-c", help="Weight of collaborator count."),
) -> None:
    """Pick the scenario, victim and object poses for deployment."""
    try:
        scenes = [build_scene(p) for p in scenarios]
    except (ConfigError, ScenarioValidationError) as exc:
        raise _config_error(exc) from exc
    base = ScoreWeights.from_constants()
    weights = ScoreWeights(omega_o, omega_c, base.occlusion_scale)
    with _spinner() as progress:
        progress.add_task("Scoring scenarios...", total=None)
        candidates = [candidate_from_scene(s) for s in scenes]
        plan = plan_deployment(candidates, weights)
    if not isinstance(plan, DeploymentPlan):
        console.print(f"[red]Infeasible:[/red] {plan.reason}")
        raise typer.Exit(EXIT_FAILED_SCENES)
    save_plan(plan, out)
    console.print(
        Panel(
            f"Scenario: {plan.scenario_id}\nVictim: {plan.victim_id}\n"
            f"Valid frames: {100 * plan.valid_frame_fraction:.0f}%",
            title="Deployment plan",
            border_style="cyan",
        )
    )


@app.command()
def run(
    config: Path | None = typer.Option(None, "--config", "-c", help="Experiment file (JSON)."),
    scenarios: Path | None = typer.Option(None, "--scenarios", help="Benchmark directory or scenario file."),
    seed: int | None = typer.Option(None, "--seed"),
    defense: str | None = typer.Option(None, "--defense", help="cad, mate, lucia or made."),
    prior: str | None = typer.Option(None, "--prior", help="fromreal, attached, hollow or cuboid."),
    mitigation: str | None = typer.Option(None, "--mitigation", help="on or off."),
    subset: str | None = typer.Option(None, "--subset", help="full, asr or ap."),
    mesh: Path | None = typer.Option(None, "--mesh", help="Optimized OBJ to deploy."),
    out: Path | None = typer.Option(None, "--out", "-o", help="Report directory."),
) -> None:
    """Run an experiment end to end and write its reports."""
    overrides = {
        "scenarios": scenarios,
        "seed": seed,
        "defense": defense,
        "prior": prior,
        "subset": subset,
        "mesh": mesh,
        "output": out,
    }
    if mitigation is not None:
        if mitigation not in ("on", "off"):
            raise _config_error(ValueError(f"--mitigation must be on or off, got '{mitigation}'"))
        overrides["mitigation"] = mitigation == "on"
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        if config is not None:
            base = load_experiment(config)
            record = {k: getattr(base, k) for k in ExperimentConfig.__dataclass_fields__}
            experiment = parse_experiment({**record, **overrides}, str(config))
        else:
            experiment = parse_experiment(overrides, "command line")
    except ConfigError as exc:
        raise _config_error(exc) from exc

    console.print(
        Panel(
            f"Defense: {experiment.defense}\nPrior: {experiment.prior}\n"
            f"Mitigation: {'on' if experiment.mitigation else 'off'}\nSubset: {experiment.subset}",
            title=f"trustpoison {__version__}",
            border_style="cyan",
        )
    )
    with Progress(
        SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(), console=console
    ) as progress:
        task = progress.add_task("Running scenes...", total=None)

        def on_done(outcome) -> None:
            status = "[green]ok[/green]" if outcome.ok else "[red]failed[/red]"
            progress.update(task, advance=1, description=f"{outcome.name}: {status}")

        try:
            result = asyncio.run(run_experiment(experiment, on_scene_done=on_done))
        except (ConfigError, ScenarioValidationError, CalibrationError) as exc:
            raise _config_error(exc) from exc

    console.print(summary_table([result.summary]))
    console.print(f"Reports written to {result.output}")
    if result.failed:
        console.print(f"[red]{result.failed} scene(s) failed[/red]")
        raise typer.Exit(EXIT_FAILED_SCENES)


@app.command()
def report(
    runs: list[Path] = typer.Argument(help="Run directories holding summary.json."),
) -> None:
    """Tabulate finished runs."""
    try:
        summaries = [load_summary(r) for r in runs]
    except (OSError, json.JSONDecodeError) as exc:
        raise _config_error(exc) from exc
    console.print(summary_table(summaries))


@app.command()
def calibrate(
    scenarios: Path = typer.Argument(help="Benign benchmark directory or scenario file."),
    out: Path = typer.Option(Path("made_calibration.json"), "--out", "-o", help="MADE calibration record."),
    detector: Path | None = typer.Option(None, "--detector", help="Also write a recalibrated constants file here."),
) -> None:
    """Calibrate MADE thresholds (and optionally the detector) on benign data."""
    try:
        configs = load_benchmark(scenarios).scenes
        scenes = [build_scene(c) for c in configs]
    except (ConfigError, ScenarioValidationError) as exc:
        raise _config_error(exc) from exc
    samples, frames = [], 0
    with _spinner() as progress:
        progress.add_task("Collecting benign residuals...", total=None)
        for scene in scenes:
            trajectory = sense_trajectory(scene)
            samples.extend(benign_made_samples(trajectory))
            frames += len(trajectory.frames)
    try:
        calib = calibrate_made(samples, frames=frames)
    except CalibrationError as exc:
        raise _config_error(exc) from exc
    save_calibration(calib, out)

    table = Table(title="MADE calibration")
    table.add_column("field")
    table.add_column("value", justify="right")
    table.add_row("frames", str(calib.frames))
    table.add_row("reconstruction threshold", f"{calib.recon_threshold:.6f}")
    table.add_row("match threshold", f"{calib.match_threshold:.6f}")
    console.print(table)

    if detector is not None:
        spec = calibrate_confidence(GridSpec.from_constants(), car_samples(GridSpec.from_constants(), default_lidar()))
        write_calibration(spec, detector)
        console.print(f"[green]Detector constants written to {detector}[/green]")


@app.command()
def defenses() -> None:
    """Show the available defenses."""
    console.print("[bold]Available defenses:[/bold]\n")
    for info in DEFENSE_INFO.values():
        extra = " (temporal)" if info.temporal else ""
        extra += " (needs calibration)" if info.needs_calibration else ""
        console.print(f"  [cyan]{info.name}[/cyan]  {info.description}{extra}")


if __name__ == "__main__":
    app()
