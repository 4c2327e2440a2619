"""Seeded traffic benchmark and its critical subsets.

Each scene is a short straight-road trajectory: collaborating vehicles and
parked or moving background cars on three lanes. One background car sits
ahead of the victim in its lane; that car is the target slot the
adversarial object later replaces.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from trustpoison.config import load_constants
from trustpoison.deployment import occlusion_density
from trustpoison.errors import ConfigError
from trustpoison.geometry.pose import Pose
from trustpoison.geometry.raycast import LidarSpec
from trustpoison.parsers.scenario import AgentConfig, ObjectConfig, ScenarioConfig, load_scenario, save_scenario
from trustpoison.perception.grid import GridSpec
from trustpoison.scene.builder import build_scene
from trustpoison.scene.models import Role, Scene
from trustpoison.scene.placement import PlacementRules, place_adversarial_object
from trustpoison.scene.render import unique_coverage, view_angle

logger = logging.getLogger(__name__)

LANES = (-3.5, 0.0, 3.5)
MAX_RETRIES = 100
MIN_SPACING = 6.0
DEFAULT_COUNT = 60
INDEX_FILE = "index.json"


class SubsetKind(str, Enum):
    FULL = "full"
    ASR = "asr"
    AP = "ap"


@dataclass
class BenchmarkSet:
    scenes: list[ScenarioConfig]
    label: SubsetKind = SubsetKind.FULL
    seed: int = 0
    skipped: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.scenes]


def _free_slot(
    rng: np.random.Generator, taken: list[tuple[float, float]], x_range: tuple[float, float], blocked=None
) -> tuple[float, float] | None:
    for _ in range(20):
        lane = float(rng.choice(LANES))
        x = float(rng.uniform(*x_range))
        if blocked is not None and blocked(x, lane):
            continue
        if all(np.hypot(x - tx, lane - ty) >= MIN_SPACING for tx, ty in taken):
            return x, lane
    return None


def _track(x: float, y: float, speed: float, frames: int) -> list[Pose]:
    return [Pose.from_xy(x + speed * t, y) for t in range(frames)]


def _sample_config(rng: np.random.Generator, name: str, frames: int) -> ScenarioConfig | None:
    n_cavs = int(rng.integers(2, 6))
    victim_slot = int(rng.integers(n_cavs))
    speed = float(rng.uniform(0.0, 1.5))
    victim_lane = float(rng.choice(LANES))
    gap = float(rng.uniform(12.0, 30.0))
    taken = [(0.0, victim_lane), (gap, victim_lane)]

    def in_line_of_sight(x: float, lane: float) -> bool:
        return lane == victim_lane and -MIN_SPACING < x < gap + MIN_SPACING

    positions = []
    for _ in range(n_cavs - 1):
        slot = _free_slot(rng, taken, (-10.0, 45.0), in_line_of_sight)
        if slot is None:
            return None
        taken.append(slot)
        positions.append(slot)
    background = []
    for _ in range(int(rng.integers(1, 4))):
        slot = _free_slot(rng, taken, (-30.0, 60.0), in_line_of_sight)
        if slot is not None:
            taken.append(slot)
            background.append(slot)

    agents = []
    others = iter(positions)
    for k in range(n_cavs):
        if k == victim_slot:
            agents.append(AgentConfig(f"cav{k}", Role.VICTIM, _track(0.0, victim_lane, speed, frames)))
        else:
            x, y = next(others)
            agents.append(AgentConfig(f"cav{k}", Role.NON_VICTIM, _track(x, y, speed, frames)))
    objects = [
        ObjectConfig("builtin:car", _track(x, y, speed, frames), f"car{j}") for j, (x, y) in enumerate(background)
    ]
    target = ObjectConfig("builtin:car", _track(gap, victim_lane, speed, frames), "target")
    return ScenarioConfig(frames, agents, target, objects, name=name)


def _acceptable(scene: Scene, rules: PlacementRules, separation: float, check_visibility: bool) -> bool:
    target = scene.target_object
    result = place_adversarial_object(scene, target.mesh, target.poses, rules, check_visibility)
    if not result.accepted:
        return False
    return all(
        any(view_angle(a.poses[t], target.poses[t]) >= separation for a in scene.non_victims)
        for t in range(scene.frame_count)
    )


def generate_benchmark(
    count: int = DEFAULT_COUNT,
    seed: int = 0,
    frames: int = 10,
    lidar: LidarSpec | None = None,
    check_visibility: bool = True,
    constants: dict | None = None,
) -> BenchmarkSet:
    """Deterministic scenes with 2-5 collaborators and a valid target slot.

    Scene ``i`` draws from ``default_rng([seed, i])``; a scene that fails
    the placement protocol 100 times is skipped.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    constants = constants or load_constants()
    rules = PlacementRules.from_constants(constants)
    separation = constants["views"]["nonvulnerable_min_separation"]
    scenes, skipped = [], []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        name = f"scene_{i:03d}"
        for _ in range(MAX_RETRIES):
            config = _sample_config(rng, name, frames)
            if config is not None and _acceptable(build_scene(config, lidar), rules, separation, check_visibility):
                scenes.append(config)
                break
        else:
            logger.warning("%s: no valid placement after %d attempts, skipped", name, MAX_RETRIES)
            skipped.append(i)
    return BenchmarkSet(scenes, SubsetKind.FULL, seed, skipped)


def save_benchmark(benchmark: BenchmarkSet, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for config in benchmark.scenes:
        save_scenario(config, out / f"{config.name}.json")
    index = {
        "seed": benchmark.seed,
        "label": benchmark.label.value,
        "scenes": benchmark.names,
        "skipped": benchmark.skipped,
    }
    (out / INDEX_FILE).write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")
    return out


def load_benchmark(path: str | Path) -> BenchmarkSet:
    """A benchmark directory (with its index), a directory of scenario files, or one file."""
    path = Path(path)
    if path.is_file():
        return BenchmarkSet([load_scenario(path)])
    if not path.is_dir():
        raise ConfigError("benchmark path does not exist", str(path))
    index_path = path / INDEX_FILE
    if index_path.exists():
        try:
            index = json.loads(index_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, str(index_path), exc.lineno) from exc
        scenes = [load_scenario(path / f"{name}.json") for name in index["scenes"]]
        return BenchmarkSet(scenes, SubsetKind(index.get("label", "full")), int(index.get("seed", 0)))
    files = sorted(p for p in path.glob("*.json"))
    if not files:
        raise ConfigError("no scenario files found", str(path))
    return BenchmarkSet([load_scenario(p) for p in files])


def _separation(scene: Scene) -> float:
    target = scene.target_pose(0)
    return max(view_angle(a.poses[0], target) for a in scene.non_victims)


def select_critical_subset(
    benchmark: BenchmarkSet,
    kind: SubsetKind | str,
    size: int,
    lidar: LidarSpec | None = None,
    spec: GridSpec | None = None,
) -> BenchmarkSet:
    """Top-``size`` scenes by attack leverage, in benchmark order.

    ``asr`` ranks by victim/non-victim angular separation (degrees / 180)
    plus occlusion density plus collaborator count / 5; ``ap`` by the
    victim's unique coverage at frame 0.
    """
    kind = SubsetKind(kind)
    if not 0 <= size <= len(benchmark):
        raise ValueError(f"subset size {size} outside 0..{len(benchmark)}")
    if kind is SubsetKind.FULL or size == len(benchmark):
        return BenchmarkSet(list(benchmark.scenes), kind, benchmark.seed)
    spec = spec or GridSpec.from_constants()
    scores = {}
    for config in benchmark.scenes:
        scene = build_scene(config, lidar)
        if kind is SubsetKind.ASR:
            scores[config.name] = (
                _separation(scene) / 180.0
                + occlusion_density(scene, 0, spec)
                + len(scene.collaborators) / 5.0
            )
        else:
            scores[config.name] = float(unique_coverage(scene, scene.victim.id, 0, spec))
    chosen = set(sorted(scores, key=lambda n: (-scores[n], n))[:size])
    return BenchmarkSet([c for c in benchmark.scenes if c.name in chosen], kind, benchmark.seed)
