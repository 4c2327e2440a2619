"""Benchmark generation, reference runs and experiment orchestration."""

from trustpoison.harness.baselines import BaselineKind, baseline_kind
from trustpoison.harness.benchmark import BenchmarkSet, SubsetKind, generate_benchmark, load_benchmark, save_benchmark, select_critical_subset
from trustpoison.harness.pipeline import FusionMode, fused_ap_under_defense, run_baseline, run_defense, run_trajectory, sense_trajectory
from trustpoison.harness.runner import ExperimentConfig, RunResult, load_experiment, parse_experiment, run_experiment

__all__ = [
    "BaselineKind",
    "BenchmarkSet",
    "ExperimentConfig",
    "FusionMode",
    "RunResult",
    "SubsetKind",
    "baseline_kind",
    "fused_ap_under_defense",
    "generate_benchmark",
    "load_benchmark",
    "load_experiment",
    "parse_experiment",
    "run_baseline",
    "run_defense",
    "run_experiment",
    "run_trajectory",
    "save_benchmark",
    "select_critical_subset",
    "sense_trajectory",
]
