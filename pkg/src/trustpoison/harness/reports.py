"""Report files and debug dumps.

Every run writes the same three files: ``results.csv`` (one row per
metric and condition), ``scenes.csv`` (one row per scene) and
``summary.json``. Nothing time-dependent goes into them, so identical
runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from rich.table import Table

from trustpoison.defenses.occupancy import occupancy_from_grid
from trustpoison.metrics import AsrReport, FrameRecord, defense_asr, fused_ap, perception_asr

RESULT_COLUMNS = ["prior", "defense", "mitigation", "subset", "condition", "metric", "numerator", "denominator", "value", "unit"]
SCENE_COLUMNS = [
    "scene",
    "status",
    "victim",
    "valid_frame_fraction",
    "victim_view_asr",
    "nonvictim_view_asr",
    "benign_victim_view_asr",
    "defense_asr",
    "benign_defense_asr",
    "ap_benign",
    "ap_attack",
    "ap_perfect",
    "error",
]
BENCHMARK_NOTE = (
    "Scenes come from the seeded synthetic generator, a statistical stand-in for a recorded traffic dataset."
)
DETECTOR_CAVEAT = "Detections come from the cluster-based surrogate detector; absolute rates are not comparable to deep detectors."


@dataclass(eq=False)
class SceneOutcome:
    name: str
    victim_id: str = ""
    error: str = ""
    valid_frame_fraction: float = 0.0
    attack: list[FrameRecord] = field(default_factory=list)
    benign: list[FrameRecord] = field(default_factory=list)
    perfect: list[FrameRecord] = field(default_factory=list)
    sweep: dict[int, tuple[list[FrameRecord], list[FrameRecord]]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.error


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.9f}"


def _asr_row(labels: dict, condition: str, report: AsrReport) -> dict:
    return {
        **labels,
        "condition": condition,
        "metric": report.metric,
        "numerator": report.numerator,
        "denominator": report.denominator,
        "value": _fmt(report.rate),
        "unit": report.unit,
    }


def _ap_row(labels: dict, condition: str, value: float | None) -> dict:
    return {**labels, "condition": condition, "metric": "ap50", "numerator": "", "denominator": "", "value": _fmt(value), "unit": "dataset"}


def _difference(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else round(a - b, 9)


def summarize(outcomes: list[SceneOutcome], defense: str) -> dict:
    """Pooled metrics over the scenes that completed; failures are only counted."""
    done = [o for o in outcomes if o.ok]
    attack = [r for o in done for r in o.attack]
    benign = [r for o in done for r in o.benign]
    perfect = [r for o in done for r in o.perfect]
    victim_view, nonvictim_view = perception_asr(attack)
    benign_view, _ = perception_asr(benign)
    summary = {
        "scenes": {
            "completed": len(done),
            "failed": len(outcomes) - len(done),
            "failed_names": sorted(o.name for o in outcomes if not o.ok),
        },
        "perception": {
            "attack": [victim_view.to_record(), nonvictim_view.to_record()],
            "benign": [benign_view.to_record()],
        },
        "defense": {
            "attack": defense_asr(attack, defense).to_record() if attack else None,
            "benign": defense_asr(benign, defense).to_record() if benign else None,
        },
        "ap": {"benign": fused_ap(benign), "attack": fused_ap(attack), "perfect_attack": fused_ap(perfect)},
    }
    pooled = summary["defense"]
    summary["deltas"] = {
        "victim_view_asr_rise": _difference(victim_view.rate, benign_view.rate if benign else None),
        "defense_asr_rise": _difference(
            pooled["attack"]["rate"] if pooled["attack"] else None,
            pooled["benign"]["rate"] if pooled["benign"] else None,
        ),
        "ap_drop": _difference(summary["ap"]["benign"], summary["ap"]["attack"]),
    }
    sweep_counts = sorted({k for o in done for k in o.sweep})
    if sweep_counts:
        summary["mate_sweep"] = {
            str(k): {
                "attack": defense_asr([r for o in done for r in o.sweep[k][0]], "mate").to_record(),
                "benign": defense_asr([r for o in done for r in o.sweep[k][1]], "mate").to_record(),
            }
            for k in sweep_counts
        }
    return summary


def _scene_row(outcome: SceneOutcome, defense: str) -> dict:
    row = {c: "" for c in SCENE_COLUMNS}
    row.update(scene=outcome.name, status="ok" if outcome.ok else "failed", victim=outcome.victim_id, error=outcome.error)
    if not outcome.ok:
        return row
    victim_view, nonvictim_view = perception_asr(outcome.attack)
    row.update(
        valid_frame_fraction=_fmt(outcome.valid_frame_fraction),
        victim_view_asr=_fmt(victim_view.rate),
        nonvictim_view_asr=_fmt(nonvictim_view.rate),
        benign_victim_view_asr=_fmt(perception_asr(outcome.benign)[0].rate),
        defense_asr=_fmt(defense_asr(outcome.attack, defense).rate),
        benign_defense_asr=_fmt(defense_asr(outcome.benign, defense).rate),
        ap_benign=_fmt(fused_ap(outcome.benign)),
        ap_attack=_fmt(fused_ap(outcome.attack)),
        ap_perfect=_fmt(fused_ap(outcome.perfect)),
    )
    return row


def write_reports(out_dir: str | Path, labels: dict, outcomes: list[SceneOutcome]) -> dict:
    """Write results.csv, scenes.csv and summary.json; return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    defense = labels["defense"]
    summary = summarize(outcomes, defense)

    rows = []
    for condition, records in (("attack", summary["perception"]["attack"]), ("benign", summary["perception"]["benign"])):
        for record in records:
            rows.append(_asr_row(labels, condition, AsrReport(record["metric"], record["numerator"], record["denominator"], record["unit"])))
    for condition in ("attack", "benign"):
        record = summary["defense"][condition]
        if record is not None:
            rows.append(_asr_row(labels, condition, AsrReport(record["metric"], record["numerator"], record["denominator"], record["unit"])))
    for condition, value in summary["ap"].items():
        rows.append(_ap_row(labels, condition, value))
    for metric, value in summary["deltas"].items():
        rows.append({**labels, "condition": "delta", "metric": metric, "numerator": "", "denominator": "", "value": _fmt(value), "unit": "difference"})
    for count, pair in summary.get("mate_sweep", {}).items():
        for condition, record in pair.items():
            report = AsrReport(f"mate_asr_tracks_{count}", record["numerator"], record["denominator"], record["unit"])
            rows.append(_asr_row(labels, condition, report))

    with (out / "results.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    with (out / "scenes.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCENE_COLUMNS)
        writer.writeheader()
        writer.writerows(_scene_row(o, defense) for o in sorted(outcomes, key=lambda o: o.name))

    document = {"note": BENCHMARK_NOTE, "caveat": DETECTOR_CAVEAT, "config": labels, **summary}
    (out / "summary.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return document


def load_summary(run_dir: str | Path) -> dict:
    return json.loads((Path(run_dir) / "summary.json").read_text(encoding="utf-8"))


def summary_table(summaries: list[dict]) -> Table:
    """Prior x defense x mitigation rows with ASR and AP columns."""
    table = Table(title="Trust poisoning results")
    for column in ("prior", "defense", "mitigation", "victim-view", "non-victim-view", "defense ASR", "benign ASR", "AP benign", "AP attack", "AP perfect"):
        table.add_column(column, justify="left" if column in ("prior", "defense", "mitigation") else "right")

    def pct(record: dict | None) -> str:
        return "-" if record is None else f"{100 * record['rate']:.2f}%"

    def ap(value: float | None) -> str:
        return "-" if value is None else f"{value:.4f}"

    for s in summaries:
        config = s["config"]
        victim_view, nonvictim_view = s["perception"]["attack"]
        table.add_row(
            config["prior"],
            config["defense"],
            config["mitigation"],
            pct(victim_view),
            pct(nonvictim_view),
            pct(s["defense"]["attack"]),
            pct(s["defense"]["benign"]),
            ap(s["ap"]["benign"]),
            ap(s["ap"]["attack"]),
            ap(s["ap"]["perfect_attack"]),
        )
    return table


def dump_debug(directory: str | Path, trajectory, records: list[FrameRecord]) -> Path:
    """Clouds as float32 xyz ``.bin``, occupancy maps as ``.npy``, verdicts as JSON."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for sensed in trajectory.frames:
        for agent_id, cloud in sensed.clouds.items():
            cloud.to_world().points.astype(np.float32).tofile(out / f"{agent_id}_f{sensed.frame:02d}.bin")
            np.save(out / f"{agent_id}_f{sensed.frame:02d}_occupancy.npy", occupancy_from_grid(sensed.grids[agent_id]).cells)
    verdicts = [
        {"frame": r.frame_id, "verdicts": [v.to_record() for v in r.verdicts], "masks": [m.to_record() for m in r.masks.values()]}
        for r in records
    ]
    (out / "verdicts.json").write_text(json.dumps(verdicts, indent=2) + "\n", encoding="utf-8")
    return out
