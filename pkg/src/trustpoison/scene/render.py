"""Per-agent LiDAR rendering and view geometry."""

from __future__ import annotations

import math

import numpy as np

from trustpoison.errors import GeometryError
from trustpoison.geometry.boxes import OrientedBox
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import PointCloud, cast_lidar
from trustpoison.perception.grid import GridSpec, bev_feature
from trustpoison.scene.models import TARGET_KEY, TARGET_SURFACE, Scene


def render_world(scene: Scene, agent_id: str, frame: int) -> PointCloud:
    """One sweep of ``agent_id`` at ``frame``, in the world frame.

    Surface ids index ``scene.surfaces(frame, exclude_agent=agent_id)``;
    the target is always surface 0. The agent's own body is not rendered.
    """
    agent = scene.agent(agent_id)
    scene.check_frame(frame)
    surfaces = scene.surfaces(frame, exclude_agent=agent_id)
    return cast_lidar(
        [(s.mesh, s.pose) for s in surfaces],
        agent.sensor_pose(frame),
        agent.lidar,
        frame_id=frame,
        agent_id=agent_id,
    )


def render_agent_view(scene: Scene, agent_id: str, frame: int) -> PointCloud:
    """The agent's sweep expressed in its own sensor frame."""
    return render_world(scene, agent_id, frame).to_sensor()


def view_angle(observer: Pose, obj: Pose) -> float:
    """Angle in degrees between the object's rear axis and the bearing to the observer.

    0 means straight behind the object, 90 abeam, 180 straight ahead.
    """
    bearing = observer.xy - obj.xy
    norm = float(np.hypot(*bearing))
    if norm < 1e-9:
        raise GeometryError("view_angle is undefined for coincident positions")
    rear = -obj.heading
    cross = rear[0] * bearing[1] - rear[1] * bearing[0]
    dot = rear[0] * bearing[0] + rear[1] * bearing[1]
    return math.degrees(math.atan2(abs(cross), dot))


def observer_pose(obj: Pose, distance: float, angle_deg: float) -> Pose:
    """Observer ``distance`` m from ``obj`` at signed view angle, facing the object.

    Positive angles sit on the object's left.
    """
    theta = math.radians(angle_deg)
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    local = np.array([-math.cos(theta), math.sin(theta)]) * distance
    offset = np.array([c * local[0] - s * local[1], s * local[0] + c * local[1]])
    x, y = obj.xy + offset
    yaw = math.atan2(-offset[1], -offset[0])
    return Pose((x, y, 0.0), yaw)


def object_region_returns(
    cloud: PointCloud, box: OrientedBox, margin: float = 0.2, surface: int = TARGET_SURFACE
) -> int:
    """Returns on the object surface or inside its footprint dilated by ``margin``."""
    world = cloud.to_world()
    on_surface = world.surface_ids == surface
    near = box.contains(world.points[:, :2], margin)
    return int(np.count_nonzero(on_surface | near))


def object_surface_returns(cloud: PointCloud, surface: int = TARGET_SURFACE) -> int:
    return int(np.count_nonzero(cloud.surface_ids == surface))


def coverage_masks(scene: Scene, frame: int, spec: GridSpec) -> dict[str, np.ndarray]:
    """Cells holding at least one return, per collaborator."""
    return {
        agent_id: bev_feature(render_world(scene, agent_id, frame), spec).covered
        for agent_id in scene.collaborator_ids
    }


def unique_coverage(
    scene: Scene,
    agent_id: str,
    frame: int,
    spec: GridSpec | None = None,
    coverage: dict[str, np.ndarray] | None = None,
) -> int:
    """Cells covered by ``agent_id`` and by no other collaborator.

    ``coverage`` may carry precomputed :func:`coverage_masks` output.
    """
    scene.agent(agent_id)
    spec = spec or GridSpec.from_constants()
    if coverage is None:
        coverage = coverage_masks(scene, frame, spec)
    if agent_id not in coverage:
        coverage = {**coverage, agent_id: bev_feature(render_world(scene, agent_id, frame), spec).covered}
    others = np.zeros(spec.shape, dtype=bool)
    for other, cells in coverage.items():
        if other != agent_id:
            others |= cells
    return int(np.count_nonzero(coverage[agent_id] & ~others))


def target_box(scene: Scene, frame: int) -> OrientedBox:
    return scene.ground_truth_boxes[scene.check_frame(frame)][TARGET_KEY]
