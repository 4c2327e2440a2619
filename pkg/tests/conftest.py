"""Shared fixtures: a coarse sensor, small grids and tiny scenes."""

from __future__ import annotations

import json
from collections.abc import Callable

import numpy as np
import pytest

from trustpoison.config import CONSTANTS_ENV
from trustpoison.geometry.library import car_mesh
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import LidarSpec
from trustpoison.parsers.scenario import bundled_scenario
from trustpoison.perception.grid import BevGrid, GridSpec
from trustpoison.scene.builder import build_scene
from trustpoison.scene.models import Agent, Role, Scene, SceneObject

COARSE_LIDAR = {"channel_count": 32, "vertical_fov": [-25.0, 5.0], "horizontal_step": 0.5, "max_range": 70.0, "mount_height": 1.8}


@pytest.fixture
def lidar() -> LidarSpec:
    return LidarSpec.from_dict(COARSE_LIDAR)


@pytest.fixture
def spec() -> GridSpec:
    return GridSpec.from_constants()


@pytest.fixture
def small_spec() -> GridSpec:
    """10 x 10 cells of 0.4 m around the origin."""
    return GridSpec(extent=(-2.0, 2.0, -2.0, 2.0), resolution=0.4, min_cluster_cells=2)


@pytest.fixture
def make_grid(small_spec) -> Callable[..., BevGrid]:
    """Grid from boolean occupied/observed masks on ``small_spec``."""

    def build(occupied, observed=None, agent_id: str = "", origin=(0.0, 0.0, 1.8)) -> BevGrid:
        occupied = np.asarray(occupied, dtype=bool)
        observed = np.ones(small_spec.shape, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
        return BevGrid(
            small_spec,
            occupied.astype(np.float64),
            occupied * 1.5,
            occupied.astype(np.float64),
            observed | occupied,
            origins=(tuple(origin),),
            agent_id=agent_id,
        )

    return build


@pytest.fixture
def coarse_constants(tmp_path, monkeypatch):
    """Route every ``load_constants()`` call through a coarse-sensor override."""
    path = tmp_path / "coarse_constants.json"
    path.write_text(json.dumps({"lidar": COARSE_LIDAR}), encoding="utf-8")
    monkeypatch.setenv(CONSTANTS_ENV, str(path))
    return path


@pytest.fixture
def minimal_scene(lidar) -> Scene:
    return build_scene(bundled_scenario("minimal"), lidar)


@pytest.fixture
def canonical_scene(lidar) -> Scene:
    return build_scene(bundled_scenario("canonical_hollow"), lidar)


@pytest.fixture
def static_scene(lidar) -> Callable[..., Scene]:
    """Static scene with the victim at the origin and a car target ahead."""

    def build(others: dict[str, tuple[float, float, float]], target=(20.0, 0.0, 0.0), frames: int = 3) -> Scene:
        car = car_mesh()
        agents = [Agent("victim", Role.VICTIM, [Pose.from_xy(0.0, 0.0)] * frames, lidar, car)]
        agents += [
            Agent(agent_id, Role.NON_VICTIM, [Pose.from_xy(*pose)] * frames, lidar, car)
            for agent_id, pose in others.items()
        ]
        target_obj = SceneObject("target", car, [Pose.from_xy(*target)] * frames)
        return Scene(tuple(agents), target_obj, frame_count=frames, name="static")

    return build
