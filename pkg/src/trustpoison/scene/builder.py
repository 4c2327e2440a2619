"""Turn scenario configs into immutable scenes."""

from __future__ import annotations

import logging
from pathlib import Path

from trustpoison.config import load_constants
from trustpoison.geometry.library import resolve_mesh
from trustpoison.geometry.mesh import TriangleMesh
from trustpoison.geometry.raycast import LidarSpec
from trustpoison.parsers.scenario import ScenarioConfig, load_scenario
from trustpoison.scene.models import TARGET_KEY, Agent, Scene, SceneObject

logger = logging.getLogger(__name__)


def default_lidar() -> LidarSpec:
    return LidarSpec.from_dict(load_constants()["lidar"])


def build_scene(config: ScenarioConfig | str | Path, lidar: LidarSpec | None = None) -> Scene:
    """Resolve meshes and poses into a Scene.

    Args:
        config: A parsed config or the path of a scenario file.
        lidar: Sensor used by agents whose config names none (defaults to
            the constants file).
    """
    if not isinstance(config, ScenarioConfig):
        config = load_scenario(config)
    lidar = lidar or default_lidar()
    meshes: dict[str, TriangleMesh] = {}

    def mesh(reference: str) -> TriangleMesh:
        if reference not in meshes:
            meshes[reference] = resolve_mesh(reference, config.base_dir)
        return meshes[reference]

    agents = [
        Agent(
            id=a.id,
            role=a.role,
            poses=tuple(a.poses),
            lidar=a.lidar or lidar,
            body=mesh(a.body) if a.body else None,
        )
        for a in config.agents
    ]
    objects = [SceneObject(o.name, mesh(o.mesh_path), tuple(o.poses)) for o in config.objects]
    target = SceneObject(TARGET_KEY, mesh(config.target.mesh_path), tuple(config.target.poses))

    scene = Scene(
        agents=tuple(agents),
        target_object=target,
        background_objects=tuple(objects),
        frame_count=config.frames,
        name=config.name,
    )
    logger.debug(
        "built scene '%s': %d agents, %d background objects, %d frames",
        scene.name,
        len(agents),
        len(objects),
        scene.frame_count,
    )
    return scene
