import dataclasses
import math

import numpy as np
import pytest

from trustpoison.errors import GeometryError, ScenarioValidationError, UnknownEntityError
from trustpoison.geometry.library import car_mesh, wall_mesh
from trustpoison.geometry.pose import Pose
from trustpoison.scene.models import TARGET_KEY, TARGET_SURFACE, Agent, Role, Scene, SceneObject
from trustpoison.scene.placement import (
    PlacementCondition,
    PlacementRules,
    frame_geometry_ok,
    place_adversarial_object,
)
from trustpoison.scene.render import (
    object_surface_returns,
    observer_pose,
    render_agent_view,
    render_world,
    target_box,
    unique_coverage,
    view_angle,
)


def test_view_angle_reference_points():
    obj = Pose.from_xy(10, 0, 0)
    assert view_angle(Pose.from_xy(0, 0), obj) == pytest.approx(0.0)
    assert view_angle(Pose.from_xy(10, 5), obj) == pytest.approx(90.0)
    assert view_angle(Pose.from_xy(10, -5), obj) == pytest.approx(90.0)
    assert view_angle(Pose.from_xy(20, 0), obj) == pytest.approx(180.0)
    with pytest.raises(GeometryError):
        view_angle(obj, obj)


def test_view_angle_matches_atan2():
    rng = np.random.default_rng(5)
    for _ in range(100):
        obj = Pose.from_xy(*rng.uniform(-20, 20, 2), rng.uniform(-180, 180))
        observer = Pose.from_xy(*rng.uniform(-20, 20, 2))
        bearing = math.atan2(*(observer.xy - obj.xy)[::-1])
        rear = obj.yaw + math.pi
        expected = abs(math.degrees(math.remainder(bearing - rear, 2 * math.pi)))
        assert view_angle(observer, obj) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("angle", [0.0, 3.0, -4.5, 30.0, 90.0, -150.0])
def test_observer_pose_inverts_view_angle(angle):
    obj = Pose.from_xy(5, -3, 40)
    observer = observer_pose(obj, 12.0, angle)
    assert view_angle(observer, obj) == pytest.approx(abs(angle), abs=1e-9)
    to_object = obj.xy - observer.xy
    assert np.linalg.norm(to_object) == pytest.approx(12.0)
    np.testing.assert_allclose(observer.heading, to_object / 12.0, atol=1e-12)


def test_scene_validation(lidar):
    car = car_mesh()
    poses = [Pose.from_xy(0, 0)] * 2
    target = SceneObject("target", car, [Pose.from_xy(20, 0)] * 2)
    lone = Agent("a", Role.VICTIM, poses, lidar)
    with pytest.raises(ScenarioValidationError, match="collaborating"):
        Scene((lone,), target, frame_count=2)
    two_victims = (lone, Agent("b", Role.VICTIM, poses, lidar))
    with pytest.raises(ScenarioValidationError, match="one victim"):
        Scene(two_victims, target, frame_count=2)
    short = (lone, Agent("b", Role.NON_VICTIM, poses[:1], lidar))
    with pytest.raises(ScenarioValidationError, match="poses"):
        Scene(short, target, frame_count=2)
    host = Agent("host", Role.ATTACKER_HOST, poses, lidar)
    scene = Scene((lone, Agent("b", Role.NON_VICTIM, poses, lidar), host), target, frame_count=2)
    assert scene.collaborator_ids == ["a", "b"]


def test_lookups_and_role_swap(minimal_scene):
    assert minimal_scene.victim.id == "victim"
    swapped = minimal_scene.with_victim("witness")
    assert swapped.victim.id == "witness"
    assert [a.id for a in swapped.non_victims] == ["victim"]
    with pytest.raises(UnknownEntityError):
        minimal_scene.agent("nobody")
    with pytest.raises(UnknownEntityError):
        minimal_scene.target_pose(minimal_scene.frame_count)


def test_ground_truth_boxes(minimal_scene):
    box = target_box(minimal_scene, 0)
    assert box.center == pytest.approx((15.0, 0.0), abs=1e-6)
    boxes = minimal_scene.ground_truth_boxes[0]
    assert set(boxes) == {"target", "victim", "witness"}


def test_target_is_the_first_surface(minimal_scene):
    surfaces = minimal_scene.surfaces(0, exclude_agent="victim")
    assert surfaces[TARGET_SURFACE].key == TARGET_KEY
    assert [s.index for s in surfaces] == list(range(len(surfaces)))
    assert "victim" not in {s.key for s in surfaces}


def test_render_excludes_own_body(minimal_scene):
    cloud = render_world(minimal_scene, "victim", 0)
    assert len(cloud) > 0
    assert object_surface_returns(cloud) > 0
    own = minimal_scene.victim.poses[0]
    near = np.linalg.norm(cloud.points[:, :2] - own.xy, axis=1) < 1.0
    assert not np.any(near & (cloud.points[:, 2] > 0.1))


def test_sensor_frame_view(minimal_scene):
    world = render_world(minimal_scene, "witness", 1)
    local = render_agent_view(minimal_scene, "witness", 1)
    np.testing.assert_allclose(local.to_world().points, world.points, atol=1e-9)
    np.testing.assert_allclose(local.points[local.surface_ids == -1][:, 2], -1.8, atol=1e-9)


def _walled(scene: Scene) -> Scene:
    wall = SceneObject("wall", wall_mesh(8.0, 0.3, 2.5), [Pose.from_xy(10, 0, 90)] * scene.frame_count)
    return dataclasses.replace(scene, background_objects=(wall,))


def test_wall_occludes_target(static_scene):
    scene = static_scene({"peer": (20.0, 10.0, -90.0)})
    assert object_surface_returns(render_world(scene, "victim", 0)) > 0
    blocked = _walled(scene)
    assert object_surface_returns(render_world(blocked, "victim", 0)) == 0
    assert object_surface_returns(render_world(blocked, "peer", 0)) > 0


def test_mirrored_observers_see_alike(static_scene):
    scene = static_scene({"left": (20.0, 10.0, -90.0), "right": (20.0, -10.0, 90.0)})
    left = object_surface_returns(render_world(scene, "left", 0))
    right = object_surface_returns(render_world(scene, "right", 0))
    assert left > 0
    assert abs(left - right) <= max(2, 0.02 * left)


def test_unique_coverage_counts(minimal_scene, spec):
    victim = unique_coverage(minimal_scene, "victim", 0, spec)
    witness = unique_coverage(minimal_scene, "witness", 0, spec)
    assert victim > 0
    assert witness > 0


def test_geometry_conditions():
    rules = PlacementRules()
    victim = Pose.from_xy(0, 0)
    assert frame_geometry_ok(victim, Pose.from_xy(15, 0), rules)[0] is None
    assert frame_geometry_ok(victim, Pose.from_xy(50, 0), rules)[0] is PlacementCondition.DISTANCE
    assert frame_geometry_ok(victim, Pose.from_xy(15, 5), rules)[0] is PlacementCondition.REAR_FACING
    assert frame_geometry_ok(victim, Pose.from_xy(15, 1), rules)[0] is None


def test_placement_accepts_visible_object(minimal_scene):
    poses = [Pose.from_xy(15, 0)] * minimal_scene.frame_count
    result = place_adversarial_object(minimal_scene, car_mesh(), poses)
    assert result.accepted
    assert result.scene.target_pose(0) == poses[0]


def test_placement_reports_first_failure(minimal_scene):
    far = [Pose.from_xy(15, 0), Pose.from_xy(15, 0), Pose.from_xy(60, 0)]
    result = place_adversarial_object(minimal_scene, car_mesh(), far)
    assert not result.accepted
    assert result.failed_condition is PlacementCondition.DISTANCE
    assert result.frame == 2
    with pytest.raises(ValueError):
        place_adversarial_object(minimal_scene, car_mesh(), far[:2])


def test_placement_rejects_hidden_object(static_scene):
    scene = _walled(static_scene({"peer": (20.0, 10.0, -90.0)}))
    poses = [Pose.from_xy(20, 0)] * scene.frame_count
    result = place_adversarial_object(scene, car_mesh(), poses)
    assert result.failed_condition is PlacementCondition.VISIBILITY
    assert result.frame == 0
    assert place_adversarial_object(scene, car_mesh(), poses, check_visibility=False).accepted
