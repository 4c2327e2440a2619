import math

import numpy as np
import pytest

from trustpoison.errors import ConfigError, GeometryError
from trustpoison.geometry.boxes import OrientedBox, box_from_mesh, box_iou
from trustpoison.geometry.library import car_mesh, cuboid_mesh, rear_mask, resolve_mesh
from trustpoison.geometry.mesh import (
    ConstraintKind,
    ConstraintSet,
    TriangleMesh,
    laplacian_energy,
    merge_meshes,
    project_constraints,
)
from trustpoison.geometry.pose import Pose, normalize_yaw
from trustpoison.geometry.raycast import (
    GROUND_SURFACE,
    NO_SURFACE,
    LidarSpec,
    Ray,
    cast_lidar,
    cast_rays,
    ray_triangle_intersect,
)


def _solve_barycentric(origin, direction, tri):
    """Reference (t, u, v) from the 3x3 linear system o + t d = v0 + u e1 + v e2."""
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    lhs = np.column_stack([-direction, e1, e2])
    return np.linalg.solve(lhs, origin - tri[0])


def test_intersection_matches_linear_solve():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(300):
        tri = rng.uniform(-3, 3, size=(3, 3))
        origin = rng.uniform(-10, 10, size=3)
        target = rng.uniform(-3, 3, size=3)
        ray = Ray.towards(origin, target)
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        if abs(np.cross(ray.direction, e2) @ e1) < 1e-3:
            continue
        t, u, v = _solve_barycentric(ray.origin, ray.direction, tri)
        margins = np.array([u, v, 1 - u - v])
        if np.min(np.abs(margins)) < 1e-6:
            continue
        inside = bool(np.all(margins > 0)) and t > 1e-9
        hit = ray_triangle_intersect(ray, tri)
        assert hit.hit == inside
        if inside:
            assert hit.t == pytest.approx(t, rel=1e-9, abs=1e-9)
            np.testing.assert_allclose(hit.point, ray.origin + t * ray.direction, atol=1e-9)
        checked += 1
    assert checked > 200


def test_intersection_behind_origin_misses():
    tri = np.array([[5.0, -1, -1], [5.0, 1, -1], [5.0, 0, 1]])
    assert ray_triangle_intersect(Ray([0, 0, 0], [1, 0, 0]), tri).t == pytest.approx(5.0)
    assert not ray_triangle_intersect(Ray([0, 0, 0], [-1, 0, 0]), tri).hit


def test_degenerate_triangle_is_flagged():
    tri = np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    result = ray_triangle_intersect(Ray([0, 0, 0], [1, 0, 0]), tri)
    assert result.degenerate
    assert not result.hit


def test_ray_needs_unit_direction():
    with pytest.raises(GeometryError):
        Ray([0, 0, 0], [2, 0, 0])


def test_cast_rays_agrees_with_single_ray_test():
    mesh = cuboid_mesh()
    pose = Pose.from_xy(8.0, 1.0, 30.0)
    world = mesh.transformed(pose)
    origin = np.array([0.0, 0.0, 1.0])
    spec = LidarSpec(channel_count=8, vertical_fov=(-10.0, 10.0), horizontal_step=2.0)
    dirs = spec.beam_directions()
    hits = cast_rays(origin, dirs, [(world, mesh.faces)], 70.0, ground=False)
    for k, direction in enumerate(dirs):
        ray = Ray(origin, direction)
        best = min(
            (r.t for r in (ray_triangle_intersect(ray, world[f]) for f in mesh.faces) if r.hit),
            default=None,
        )
        if best is None:
            assert hits.surface[k] == NO_SURFACE
        else:
            assert hits.surface[k] == 0
            assert hits.t[k] == pytest.approx(best, abs=1e-9)


def test_ground_return_distance():
    spec = LidarSpec(channel_count=1, vertical_fov=(-10.5, -9.5), horizontal_step=90.0)
    cloud = cast_lidar([], Pose.from_xy(0, 0).raised(1.8), spec)
    assert len(cloud) == 4
    assert np.all(cloud.surface_ids == GROUND_SURFACE)
    ranges = np.linalg.norm(cloud.points - cloud.origin, axis=1)
    np.testing.assert_allclose(ranges, 1.8 / math.sin(math.radians(10.0)), rtol=1e-6)
    np.testing.assert_allclose(cloud.points[:, 2], 0.0, atol=1e-9)


def test_out_of_range_ground_is_dropped():
    spec = LidarSpec(channel_count=1, vertical_fov=(-1.0, -0.5), horizontal_step=90.0, max_range=20.0)
    assert len(cast_lidar([], Pose.from_xy(0, 0).raised(1.8), spec)) == 0


def test_sensor_below_ground_rejected():
    with pytest.raises(GeometryError):
        cast_lidar([], Pose.from_xy(0, 0), LidarSpec())


def test_box_iou_cases():
    a = OrientedBox((0, 0), (4, 2))
    assert box_iou(a, a) == pytest.approx(1.0)
    assert box_iou(a, OrientedBox((10, 0), (4, 2))) == 0.0
    assert box_iou(a, OrientedBox((0, 0), (0, 2))) == 0.0
    assert box_iou(a, OrientedBox((2, 0), (4, 2))) == pytest.approx(1 / 3)


def test_rotated_square_iou_is_inverse_sqrt_two():
    square = OrientedBox((0, 0), (2, 2))
    rotated = OrientedBox((0, 0), (2, 2), math.pi / 4)
    assert box_iou(square, rotated) == pytest.approx(math.sqrt(2) / 2, abs=1e-9)


def test_box_iou_monte_carlo():
    a = OrientedBox((0.3, -0.2), (4.4, 1.8), 0.4)
    b = OrientedBox((1.0, 0.5), (3.0, 2.5), -0.7)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-4, 4, size=(400_000, 2))
    in_a, in_b = a.contains(pts), b.contains(pts)
    estimate = np.sum(in_a & in_b) / np.sum(in_a | in_b)
    assert box_iou(a, b) == pytest.approx(estimate, abs=1e-2)


def test_box_iou_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = OrientedBox(rng.uniform(-2, 2, 2), rng.uniform(0.5, 5, 2), rng.uniform(-3, 3))
        b = OrientedBox(rng.uniform(-2, 2, 2), rng.uniform(0.5, 5, 2), rng.uniform(-3, 3))
        iou = box_iou(a, b)
        assert 0.0 <= iou <= 1.0
        assert iou == pytest.approx(box_iou(b, a), abs=1e-12)


def test_box_from_car_mesh():
    box = box_from_mesh(car_mesh(), Pose.from_xy(10, 2, 90))
    assert box.size[0] == pytest.approx(4.4, abs=1e-6)
    assert box.size[1] == pytest.approx(1.8, abs=1e-6)
    assert box.center == pytest.approx((10.0, 2.0), abs=1e-6)
    assert box.yaw == pytest.approx(math.pi / 2)


def test_pose_round_trip_and_wrap():
    pose = Pose.from_xy(3.0, -4.0, 270.0, z=1.0)
    assert pose.yaw == pytest.approx(-math.pi / 2)
    pts = np.random.default_rng(1).normal(size=(20, 3))
    np.testing.assert_allclose(pose.to_local(pose.to_world(pts)), pts, atol=1e-12)
    assert normalize_yaw(-math.pi) == pytest.approx(math.pi)
    assert normalize_yaw(3 * math.pi) == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        Pose((float("nan"), 0.0))


def test_laplacian_gradient_matches_finite_differences():
    mesh = cuboid_mesh()
    rng = np.random.default_rng(4)
    mesh = mesh.with_vertices(mesh.vertices + rng.normal(scale=0.05, size=mesh.vertices.shape))
    _, grad = laplacian_energy(mesh)
    h = 1e-6
    for _ in range(10):
        i, k = rng.integers(mesh.vertex_count), rng.integers(3)
        plus, minus = mesh.vertices.copy(), mesh.vertices.copy()
        plus[i, k] += h
        minus[i, k] -= h
        numeric = (laplacian_energy(mesh.with_vertices(plus))[0] - laplacian_energy(mesh.with_vertices(minus))[0]) / (2 * h)
        assert grad[i, k] == pytest.approx(numeric, rel=1e-4, abs=1e-6)


def test_isolated_vertex_adds_no_energy():
    tri = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    energy, _ = laplacian_energy(tri)
    assert energy > 0
    isolated = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]]), np.array([[0, 1, 2]]))
    assert laplacian_energy(isolated)[0] == pytest.approx(energy)


def _displaced(mesh, scale, seed=0):
    rng = np.random.default_rng(seed)
    return mesh.with_vertices(mesh.vertices + rng.normal(scale=scale, size=mesh.vertices.shape))


def test_projection_clips_and_is_idempotent():
    mesh = _displaced(cuboid_mesh(), 0.5)
    constraints = ConstraintSet(
        {ConstraintKind.VERTEX_BOUND, ConstraintKind.TRANSLATION_BOUND},
        vertex_bound=0.1,
        translation_bound=0.5,
    )
    once, trans = project_constraints(mesh, constraints, np.array([3.0, 4.0, 0.0]))
    assert np.max(np.abs(once.displacement())) <= 0.1 + 1e-12
    assert np.linalg.norm(trans) == pytest.approx(0.5)
    np.testing.assert_allclose(trans, [0.3, 0.4, 0.0])
    twice, trans2 = project_constraints(once, constraints, trans)
    np.testing.assert_array_equal(twice.vertices, once.vertices)
    np.testing.assert_array_equal(trans2, trans)
    assert np.all(np.abs(once.displacement()) <= np.abs(mesh.displacement()) + 1e-12)


def test_projection_respects_mask_and_size():
    mesh = car_mesh()
    mask = rear_mask(mesh)
    moved = _displaced(mesh, 0.3, seed=2)
    constraints = ConstraintSet(
        {ConstraintKind.MASK_ONLY, ConstraintKind.SIZE_BOUND}, size_bound=(4.6, 2.0, 1.7), mask=mask
    )
    projected, _ = project_constraints(moved, constraints)
    np.testing.assert_array_equal(projected.vertices[~mask], mesh.vertices[~mask])
    assert np.all(projected.extents() <= np.array([4.6, 2.0, 1.7]) + 1e-9)


def test_smooth_projection_stays_inside_bound():
    mesh = _displaced(cuboid_mesh(), 2.0)
    constraints = ConstraintSet({ConstraintKind.VERTEX_BOUND}, vertex_bound=0.1)
    projected, _ = project_constraints(mesh, constraints, smooth=True)
    assert np.max(np.abs(projected.displacement())) < 0.1


def test_mask_constraint_requires_mask():
    with pytest.raises(GeometryError):
        ConstraintSet({ConstraintKind.MASK_ONLY})


def test_mesh_validation_and_merge():
    with pytest.raises(GeometryError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    a = cuboid_mesh()
    merged = merge_meshes([a, a])
    assert merged.vertex_count == 2 * a.vertex_count
    assert merged.faces.max() == 2 * a.vertex_count - 1


def test_resolve_builtin_meshes():
    wall = resolve_mesh("builtin:wall:8x0.3x2.5")
    np.testing.assert_allclose(wall.extents(), [8.0, 0.3, 2.5], atol=1e-9)
    car = resolve_mesh("builtin:car")
    assert car.extents()[0] == pytest.approx(4.4, abs=1e-6)
    with pytest.raises(ConfigError):
        resolve_mesh("builtin:spaceship")
