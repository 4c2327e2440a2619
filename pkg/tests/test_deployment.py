import json
import math

import numpy as np
import pytest

from trustpoison.deployment import (
    DeploymentPlan,
    ScenarioCandidate,
    ScoreWeights,
    VictimSelection,
    candidate_from_scene,
    occlusion_density,
    plan_deployment,
    plan_object_poses,
    save_plan,
    score_scenarios,
    select_victim,
)
from trustpoison.geometry.library import car_mesh
from trustpoison.geometry.pose import Pose
from trustpoison.scene.models import Agent, Role, Scene, SceneObject


def test_candidate_validation():
    with pytest.raises(ValueError, match="at least 2"):
        ScenarioCandidate("solo", 0.5, 1)
    with pytest.raises(ValueError):
        ScenarioCandidate("odd", 1.5, 3)


def test_score_and_ties():
    weights = ScoreWeights()
    a = ScenarioCandidate("a", 0.5, 3)
    b = ScenarioCandidate("b", 0.3, 5)
    assert a.score(weights) == pytest.approx(8.0)
    assert b.score(weights) == pytest.approx(8.0)
    assert score_scenarios([b, a], weights).id == "a"
    assert score_scenarios([a, b, ScenarioCandidate("c", 0.9, 2)], weights).id == "c"
    assert score_scenarios([a, b], ScoreWeights(omega_o=0.0)).id == "b"
    with pytest.raises(ValueError):
        score_scenarios([])


def test_select_victim_in_rear_cone(static_scene):
    scene = static_scene({"peer": (20.0, 10.0, -90.0)})
    selection = select_victim(scene, scene.target_pose(0))
    assert selection.feasible
    assert selection.victim_id == "victim"
    assert set(selection.scores) == {"victim"}


def test_select_victim_without_cone_member(static_scene):
    scene = static_scene({"peer": (20.0, 10.0, -90.0)})
    selection = select_victim(scene, Pose.from_xy(20.0, 0.0, 90.0))
    assert selection == VictimSelection(None, False, "no collaborator inside the vulnerable cone")


def test_select_victim_without_witness(static_scene):
    scene = static_scene({"tail": (-10.0, 0.0, 0.0)})
    selection = select_victim(scene, scene.target_pose(0))
    assert not selection.feasible
    assert selection.victim_id in {"victim", "tail"}
    assert "non-vulnerable" in selection.reason


def test_static_victim_keeps_object_in_place(static_scene):
    scene = static_scene({"peer": (20.0, 10.0, -90.0)})
    initial = Pose.from_xy(15.0, 0.0)
    plan = plan_object_poses(scene, "victim", initial, check_visibility=False)
    assert all(p == initial for p in plan.poses)
    assert plan.valid == (True, True, True)
    assert plan.valid_frame_fraction == 1.0


def _moving_scene(lidar) -> Scene:
    car = car_mesh()
    victim = Agent("victim", Role.VICTIM, [Pose.from_xy(0, 0), Pose.from_xy(3, 3), Pose.from_xy(6, 3)], lidar, car)
    peer = Agent("peer", Role.NON_VICTIM, [Pose.from_xy(20, 10, -90)] * 3, lidar, car)
    return Scene((victim, peer), SceneObject("target", car, [Pose.from_xy(15, 0)] * 3), frame_count=3)


def test_object_follows_within_limits(lidar):
    scene = _moving_scene(lidar)
    plan = plan_object_poses(scene, "victim", Pose.from_xy(15.0, 0.0), check_visibility=False)
    xy = np.array([p.xy for p in plan.poses])
    steps = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    assert np.all(steps <= 2.0 + 1e-9)
    assert np.all(np.abs(xy[:, 1]) <= 1.75 + 1e-9)
    assert all(abs(math.degrees(p.yaw)) <= 5.0 + 1e-9 for p in plan.poses)
    assert xy[2, 0] > xy[1, 0] > xy[0, 0]


def test_plan_deployment(static_scene, tmp_path):
    scene = static_scene({"peer": (20.0, 10.0, -90.0)})
    plan = plan_deployment([ScenarioCandidate("static", 0.2, 2, scene)], check_visibility=False)
    assert isinstance(plan, DeploymentPlan)
    assert plan.victim_id == "victim"
    assert plan.valid_frame_fraction == 1.0
    record = json.loads(save_plan(plan, tmp_path / "plan.json").read_text(encoding="utf-8"))
    assert record["scenario"] == "static"
    assert len(record["poses"]) == 3


def test_plan_deployment_infeasible(static_scene):
    scene = static_scene({"tail": (-10.0, 0.0, 0.0)})
    result = plan_deployment([ScenarioCandidate("static", 0.2, 2, scene)], check_visibility=False)
    assert isinstance(result, VictimSelection)
    assert not result.feasible
    with pytest.raises(ValueError, match="no scene"):
        plan_deployment([ScenarioCandidate("bare", 0.2, 2)])


def test_occlusion_density_bounds(static_scene):
    scene = static_scene({"peer": (20.0, 10.0, -90.0)})
    density = occlusion_density(scene, 0)
    assert 0.0 < density < 1.0
    candidate = candidate_from_scene(scene)
    assert candidate.cav_count == 2
    assert candidate.occlusion_density == pytest.approx(density)
