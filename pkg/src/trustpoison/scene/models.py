"""Data models for multi-agent scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from trustpoison.errors import ScenarioValidationError, UnknownEntityError
from trustpoison.geometry.boxes import OrientedBox, box_from_mesh
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import LidarSpec

MIN_COLLABORATORS = 2
MAX_COLLABORATORS = 5
TARGET_KEY = "target"
TARGET_SURFACE = 0


class Role(str, Enum):
    """What part an agent plays in the attack."""

    VICTIM = "victim"
    NON_VICTIM = "non_victim"
    ATTACKER_HOST = "attacker_host"  # carries an Attached object, never collaborates


@dataclass(frozen=True, eq=False)
class Agent:
    """A connected vehicle with one pose per frame."""

    id: str
    role: Role
    poses: tuple[Pose, ...]
    lidar: LidarSpec = field(default_factory=LidarSpec)
    body: TriangleMesh | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "poses", tuple(self.poses))

    @property
    def collaborates(self) -> bool:
        return self.role is not Role.ATTACKER_HOST

    def sensor_pose(self, frame: int) -> Pose:
        return self.poses[frame].raised(self.lidar.mount_height)


@dataclass(frozen=True, eq=False)
class SceneObject:
    name: str
    mesh: TriangleMesh
    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))


@dataclass(frozen=True)
class Surface:
    """One posed mesh as seen by the ray caster; ``index`` is its surface id."""

    index: int
    key: str
    mesh: TriangleMesh
    pose: Pose


@dataclass(frozen=True, eq=False)
class Scene:
    """Frame-indexed scenario: agents, background objects and the target.

    Ground-truth boxes are derived from the meshes: ``ground_truth_boxes[t]``
    maps ``"target"``, each background object's name and each agent id
    with a body to its tight oriented box at frame ``t``.
    """

    agents: tuple[Agent, ...]
    target_object: SceneObject
    background_objects: tuple[SceneObject, ...] = ()
    frame_count: int = 10
    name: str = "scene"
    ground_truth_boxes: tuple[dict[str, OrientedBox], ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "background_objects", tuple(self.background_objects))
        self._validate()
        object.__setattr__(
            self, "ground_truth_boxes", tuple(self._boxes_at(t) for t in range(self.frame_count))
        )

    def _validate(self) -> None:
        if self.frame_count < 1:
            raise ScenarioValidationError("frame_count must be >= 1")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioValidationError(f"duplicate agent ids in {ids}")
        collaborators = [a for a in self.agents if a.collaborates]
        if not MIN_COLLABORATORS <= len(collaborators) <= MAX_COLLABORATORS:
            raise ScenarioValidationError(
                f"a scenario needs {MIN_COLLABORATORS}-{MAX_COLLABORATORS} collaborating agents, "
                f"got {len(collaborators)}"
            )
        victims = [a for a in self.agents if a.role is Role.VICTIM]
        if len(victims) != 1:
            raise ScenarioValidationError(f"exactly one victim required, got {len(victims)}")
        for agent in self.agents:
            if len(agent.poses) != self.frame_count:
                raise ScenarioValidationError(
                    f"agent '{agent.id}' has {len(agent.poses)} poses for {self.frame_count} frames"
                )
        for obj in (self.target_object, *self.background_objects):
            if len(obj.poses) != self.frame_count:
                raise ScenarioValidationError(
                    f"object '{obj.name}' has {len(obj.poses)} poses for {self.frame_count} frames"
                )

    def _boxes_at(self, frame: int) -> dict[str, OrientedBox]:
        boxes = {TARGET_KEY: box_from_mesh(self.target_object.mesh, self.target_object.poses[frame])}
        for obj in self.background_objects:
            boxes[obj.name] = box_from_mesh(obj.mesh, obj.poses[frame])
        for agent in self.agents:
            if agent.body is not None:
                boxes[agent.id] = box_from_mesh(agent.body, agent.poses[frame])
        return boxes

    # -- lookups -------------------------------------------------------------

    def agent(self, agent_id: str) -> Agent:
        for agent in self.agents:
            if agent.id == agent_id:
                return agent
        raise UnknownEntityError(f"unknown agent '{agent_id}' in scene '{self.name}'")

    def check_frame(self, frame: int) -> int:
        if not 0 <= frame < self.frame_count:
            raise UnknownEntityError(f"frame {frame} outside 0..{self.frame_count - 1}")
        return frame

    @property
    def victim(self) -> Agent:
        return next(a for a in self.agents if a.role is Role.VICTIM)

    @property
    def collaborators(self) -> list[Agent]:
        return [a for a in self.agents if a.collaborates]

    @property
    def non_victims(self) -> list[Agent]:
        return [a for a in self.agents if a.role is Role.NON_VICTIM]

    @property
    def collaborator_ids(self) -> list[str]:
        return [a.id for a in self.collaborators]

    def target_pose(self, frame: int) -> Pose:
        return self.target_object.poses[self.check_frame(frame)]

    def surfaces(self, frame: int, exclude_agent: str | None = None) -> list[Surface]:
        """Everything a sensor can hit at ``frame``; the target is surface 0."""
        self.check_frame(frame)
        posed: list[tuple[str, TriangleMesh, Pose]] = [
            (TARGET_KEY, self.target_object.mesh, self.target_object.poses[frame])
        ]
        posed += [(obj.name, obj.mesh, obj.poses[frame]) for obj in self.background_objects]
        posed += [
            (a.id, a.body, a.poses[frame])
            for a in self.agents
            if a.body is not None and a.id != exclude_agent
        ]
        return [Surface(i, key, mesh, pose) for i, (key, mesh, pose) in enumerate(posed)]

    # -- edits ---------------------------------------------------------------

    def with_target(self, mesh: TriangleMesh, poses: list[Pose] | tuple[Pose, ...]) -> Scene:
        return replace(self, target_object=SceneObject(TARGET_KEY, mesh, tuple(poses)))

    def with_agents(self, agents: list[Agent]) -> Scene:
        return replace(self, agents=tuple(agents))

    def with_victim(self, victim_id: str) -> Scene:
        """Reassign roles so ``victim_id`` is the only victim."""
        self.agent(victim_id)
        agents = []
        for agent in self.agents:
            if not agent.collaborates:
                agents.append(agent)
            else:
                role = Role.VICTIM if agent.id == victim_id else Role.NON_VICTIM
                agents.append(replace(agent, role=role))
        return self.with_agents(agents)


@dataclass(frozen=True)
class ViewSet:
    """Sampled training views inside the vulnerable cone and outside it."""

    vulnerable_half_angle: float = 5.0
    nonvulnerable_min_separation: float = 20.0
    sampled_victim_views: tuple[Pose, ...] = ()
    sampled_nonvictim_views: tuple[Pose, ...] = ()

    def __post_init__(self) -> None:
        if self.vulnerable_half_angle <= 0:
            raise ValueError("vulnerable_half_angle must be positive")
        if self.nonvulnerable_min_separation < self.vulnerable_half_angle:
            raise ValueError("non-vulnerable views must start outside the vulnerable cone")
        object.__setattr__(self, "sampled_victim_views", tuple(self.sampled_victim_views))
        object.__setattr__(self, "sampled_nonvictim_views", tuple(self.sampled_nonvictim_views))

    def in_vulnerable(self, angle_deg: float) -> bool:
        return angle_deg <= self.vulnerable_half_angle

    def in_nonvulnerable(self, angle_deg: float) -> bool:
        return angle_deg >= self.nonvulnerable_min_separation
