"""Scenario files: JSON trees describing agents, objects and the target.

A single pose is broadcast over every frame, so static scenes stay short::

    {"frames": 10,
     "agents": [{"id": "ego", "role": "victim", "poses": [[0, 0, 0]], "body": "builtin:car"}],
     "objects": [{"name": "parked", "mesh_path": "builtin:car", "poses": [[20, 4, 0]]}],
     "target": {"mesh_path": "builtin:hollow", "poses": [[25, 0, 0]]}}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from trustpoison.errors import ConfigError
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import LidarSpec
from trustpoison.scene.models import Role


@dataclass
class AgentConfig:
    id: str
    role: Role
    poses: list[Pose]
    lidar: LidarSpec | None = None
    body: str | None = "builtin:car"


@dataclass
class ObjectConfig:
    mesh_path: str
    poses: list[Pose]
    name: str = ""


@dataclass
class ScenarioConfig:
    """A parsed scenario, before meshes are resolved."""

    frames: int
    agents: list[AgentConfig]
    target: ObjectConfig
    objects: list[ObjectConfig] = field(default_factory=list)
    name: str = "scene"
    base_dir: Path | None = None

    def to_dict(self) -> dict[str, Any]:
        def agent_record(agent: AgentConfig) -> dict[str, Any]:
            record: dict[str, Any] = {
                "id": agent.id,
                "role": agent.role.value,
                "poses": [p.to_record() for p in agent.poses],
                "body": agent.body,
            }
            if agent.lidar is not None:
                record["lidar"] = agent.lidar.to_dict()
            return record

        return {
            "name": self.name,
            "frames": self.frames,
            "agents": [agent_record(a) for a in self.agents],
            "objects": [
                {"name": o.name, "mesh_path": o.mesh_path, "poses": [p.to_record() for p in o.poses]}
                for o in self.objects
            ],
            "target": {
                "mesh_path": self.target.mesh_path,
                "poses": [p.to_record() for p in self.target.poses],
            },
        }


def _require(data: dict, key: str, where: str, path: str) -> Any:
    if key not in data:
        raise ConfigError(f"{where}: missing required field '{key}'", path)
    return data[key]


def _poses(raw: Any, frames: int, where: str, path: str) -> list[Pose]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}.poses must be a non-empty list of [x, y, yaw_deg]", path)
    poses = []
    for i, item in enumerate(raw):
        if not isinstance(item, list) or len(item) not in (2, 3):
            raise ConfigError(f"{where}.poses[{i}] must be [x, y] or [x, y, yaw_deg]", path)
        try:
            x, y, *rest = (float(v) for v in item)
            poses.append(Pose.from_xy(x, y, rest[0] if rest else 0.0))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.poses[{i}]: {exc}", path) from exc
    if len(poses) == 1:
        return poses * frames
    if len(poses) != frames:
        raise ConfigError(f"{where} has {len(poses)} poses for {frames} frames", path)
    return poses


def parse_scenario(text: str, path: str | Path = "<string>") -> ScenarioConfig:
    """Parse scenario JSON text.

    Raises:
        ConfigError: with the file and line of a syntax error, or the field
            path of a structural one.
    """
    source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, source, exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", source)

    frames = data.get("frames", 10)
    if not isinstance(frames, int) or frames < 1:
        raise ConfigError(f"frames must be a positive integer, got {frames!r}", source)

    agents = []
    for i, raw in enumerate(_require(data, "agents", "scenario", source)):
        where = f"agents[{i}]"
        try:
            role = Role(_require(raw, "role", where, source))
        except ValueError:
            valid = ", ".join(r.value for r in Role)
            raise ConfigError(f"{where}.role must be one of: {valid}", source) from None
        lidar = LidarSpec.from_dict(raw["lidar"]) if raw.get("lidar") else None
        agents.append(
            AgentConfig(
                id=str(_require(raw, "id", where, source)),
                role=role,
                poses=_poses(_require(raw, "poses", where, source), frames, where, source),
                lidar=lidar,
                body=raw.get("body", "builtin:car"),
            )
        )

    objects = []
    for i, raw in enumerate(data.get("objects", [])):
        where = f"objects[{i}]"
        objects.append(
            ObjectConfig(
                mesh_path=str(_require(raw, "mesh_path", where, source)),
                poses=_poses(_require(raw, "poses", where, source), frames, where, source),
                name=str(raw.get("name") or f"object-{i}"),
            )
        )

    raw_target = _require(data, "target", "scenario", source)
    target = ObjectConfig(
        mesh_path=str(_require(raw_target, "mesh_path", "target", source)),
        poses=_poses(_require(raw_target, "poses", "target", source), frames, "target", source),
        name="target",
    )

    base_dir = Path(path).parent if source != "<string>" else None
    return ScenarioConfig(
        frames=frames,
        agents=agents,
        target=target,
        objects=objects,
        name=str(data.get("name") or (Path(path).stem if base_dir else "scene")),
        base_dir=base_dir,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror or exc}", str(path)) from exc
    return parse_scenario(text, path)


def save_scenario(config: ScenarioConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


BUNDLED_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``minimal``."""
    path = BUNDLED_DIR / f"{name.removesuffix('.json')}.json"
    if not path.exists():
        available = ", ".join(sorted(p.stem for p in BUNDLED_DIR.glob("*.json")))
        raise ConfigError(f"Unknown bundled scenario '{name}'. Available: {available}")
    return path
