import json
from pathlib import Path

import numpy as np
import pytest

import trustpoison
from trustpoison.defenses import get_defense
from trustpoison.deployment import select_victim
from trustpoison.errors import CalibrationError, ConfigError
from trustpoison.harness import (
    ExperimentConfig,
    SubsetKind,
    baseline_kind,
    generate_benchmark,
    load_benchmark,
    parse_experiment,
    run_baseline,
    run_defense,
    run_experiment,
    save_benchmark,
    select_critical_subset,
    sense_trajectory,
)
from trustpoison.harness.reports import SceneOutcome, load_summary, summary_table, write_reports
from trustpoison.metrics import defense_asr, max_iou
from trustpoison.perception.grid import footprint_cells
from trustpoison.scene.builder import build_scene
from trustpoison.scene.models import Role

MINIMAL = Path(trustpoison.__file__).parent / "scenarios" / "minimal.json"


def _bench(lidar, seed=7, count=2):
    return generate_benchmark(count=count, seed=seed, frames=2, lidar=lidar, check_visibility=False)


def test_benchmark_is_deterministic(lidar):
    a, b = _bench(lidar), _bench(lidar)
    assert a.names == b.names == ["scene_000", "scene_001"]
    assert [c.to_dict() for c in a.scenes] == [c.to_dict() for c in b.scenes]
    assert [c.to_dict() for c in _bench(lidar, seed=8).scenes] != [c.to_dict() for c in a.scenes]
    for config in a.scenes:
        roles = [agent.role for agent in config.agents]
        assert 2 <= len(roles) <= 5
        assert roles.count(Role.VICTIM) == 1
    with pytest.raises(ValueError):
        generate_benchmark(count=0)


def test_benchmark_save_and_load(lidar, tmp_path):
    bench = _bench(lidar)
    out = save_benchmark(bench, tmp_path / "bench")
    again = load_benchmark(out)
    assert again.names == bench.names
    assert again.seed == 7
    assert load_benchmark(out / "scene_001.json").names == ["scene_001"]
    with pytest.raises(ConfigError):
        load_benchmark(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(ConfigError, match="no scenario files"):
        load_benchmark(tmp_path / "empty")


def test_critical_subsets(lidar):
    bench = _bench(lidar, count=3)
    with pytest.raises(ValueError):
        select_critical_subset(bench, "asr", 4)
    assert len(select_critical_subset(bench, "full", 1)) == 3
    for kind in ("asr", "ap"):
        subset = select_critical_subset(bench, kind, 1, lidar=lidar)
        assert len(subset) == 1
        assert subset.label is SubsetKind(kind)
        assert subset.names[0] in bench.names


@pytest.fixture
def sensed(minimal_scene):
    return sense_trajectory(minimal_scene)


def test_sensing_and_plain_fusion(sensed):
    assert len(sensed.frames) == 3
    assert set(sensed.frames[0].boxes) == {"victim", "witness"}
    records = run_defense(sensed, None)
    assert all(not r.verdicts for r in records)
    assert all(max_iou(r.fused, r.target) > 0.0 for r in records)
    assert records[0].trajectory == "minimal"


def test_baselines(minimal_scene, spec):
    with pytest.raises(ValueError, match="Available"):
        baseline_kind("oracle")
    late = sense_trajectory(minimal_scene, baseline="ideal_late_removal")
    assert all(max_iou(f.boxes["victim"], f.target) == 0.0 for f in late.frames)
    points = sense_trajectory(minimal_scene, baseline="ideal_point_removal")
    for frame in points.frames:
        inside = footprint_cells(spec, frame.target)
        assert not np.any(frame.grids["victim"].occupied & inside)
    perfect = run_baseline("perfect_attack", minimal_scene)
    assert all(max_iou(r.fused, r.target) > 0.0 for r in perfect)


@pytest.mark.parametrize("kind", ["cad", "mate", "lucia"])
def test_defense_replay(sensed, kind):
    records = run_defense(sensed, get_defense(kind), mitigation=True)
    assert all(v.defense.value == kind for r in records for v in r.verdicts)
    report = defense_asr(records, kind)
    assert report.denominator == (1 if kind == "mate" else 3)


def test_parse_experiment_errors(tmp_path):
    base = {"scenarios": str(MINIMAL), "output": str(tmp_path)}
    assert parse_experiment(base).defense == "cad"
    for bad in (
        {"colour": "red"},
        {"defense": "firewall"},
        {"prior": "sphere"},
        {"track_count": 4},
        {"fusion": "early"},
        {"scenarios": str(tmp_path / "nowhere")},
    ):
        with pytest.raises(ConfigError):
            parse_experiment({**base, **bad})
    with pytest.raises(ConfigError, match="scenarios"):
        parse_experiment({"output": str(tmp_path)})


async def test_run_experiment_is_byte_deterministic(coarse_constants, tmp_path):
    results = []
    for name in ("a", "b"):
        config = ExperimentConfig(scenarios=MINIMAL, output=tmp_path / name, defense="cad", workers=1)
        results.append(await run_experiment(config))
    assert all(r.failed == 0 for r in results)
    for filename in ("results.csv", "scenes.csv", "summary.json"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()
    summary = load_summary(tmp_path / "a")
    assert summary["scenes"]["completed"] == 1
    assert summary["config"]["defense"] == "cad"
    assert set(summary["deltas"]) == {"victim_view_asr_rise", "defense_asr_rise", "ap_drop"}
    assert "delta" in (tmp_path / "a" / "results.csv").read_text(encoding="utf-8")
    assert summary_table([summary]).row_count == 1


async def test_made_needs_enough_benign_frames(coarse_constants, tmp_path):
    config = ExperimentConfig(scenarios=MINIMAL, output=tmp_path, defense="made", workers=1)
    with pytest.raises(CalibrationError):
        await run_experiment(config)


def test_failed_scenes_are_reported(tmp_path):
    summary = write_reports(tmp_path, {"prior": "hollow", "defense": "cad", "mitigation": "off", "subset": "full"}, [
        SceneOutcome("broken", error="boom")
    ])
    assert summary["scenes"] == {"completed": 0, "failed": 1, "failed_names": ["broken"]}
    assert summary["defense"]["attack"] is None
    assert summary["deltas"] == {"victim_view_asr_rise": None, "defense_asr_rise": None, "ap_drop": None}
    rows = (tmp_path / "scenes.csv").read_text(encoding="utf-8").splitlines()
    assert rows[1].startswith("broken,failed")


@pytest.mark.slow
def test_generated_scenes_pass_placement(lidar):
    bench = generate_benchmark(count=5, seed=1, frames=3, lidar=lidar)
    assert len(bench) + len(bench.skipped) == 5
    for config in bench.scenes:
        scene = build_scene(config, lidar)
        assert scene.victim.id in scene.collaborator_ids


def _scenario(tmp_path, target_yaw=0.0):
    """The witness is labelled victim; only ``behind`` sits in the rear cone."""
    config = {
        "name": "relabelled",
        "frames": 2,
        "agents": [
            {"id": "behind", "role": "non_victim", "poses": [[0, 0, 0]]},
            {"id": "side", "role": "victim", "poses": [[15, 10, -90]]},
        ],
        "target": {"mesh_path": "builtin:car", "poses": [[15, 0, target_yaw]]},
    }
    path = tmp_path / "relabelled.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


async def test_run_experiment_deploys_against_the_selected_victim(coarse_constants, tmp_path):
    path = _scenario(tmp_path)
    scene = build_scene(path)
    selection = select_victim(scene, scene.target_pose(0))
    assert selection.feasible
    assert selection.victim_id == "behind" != scene.victim.id

    result = await run_experiment(ExperimentConfig(scenarios=path, output=tmp_path / "out", workers=1))
    assert result.failed == 0
    outcome = result.outcomes[0]
    assert outcome.victim_id == selection.victim_id
    assert all(r.victim_id == "behind" for r in outcome.attack)


async def test_infeasible_deployment_fails_the_scene(coarse_constants, tmp_path):
    path = _scenario(tmp_path, target_yaw=90.0)
    result = await run_experiment(ExperimentConfig(scenarios=path, output=tmp_path / "out", workers=1))
    assert result.failed == 1
    assert result.outcomes[0].error.startswith("infeasible deployment")
    assert result.summary["scenes"]["failed_names"] == ["relabelled"]
