"""Simulated world state: farm, manipulator scene, robot states, virtual clock."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from one4all.simworld import quat
from one4all.simworld.farm import FarmModel, load_farm

DEFAULT_REACH = 0.9
HOME_POSITION = (0.25, 0.0, 0.3)


@dataclass(frozen=True)
class SceneObject:
    id: str
    class_name: str
    color: str
    position: tuple[float, float, float]  # meters, arm base frame


def load_scene(text: str | bytes) -> tuple[SceneObject, ...]:
    """Parse a JSON list of scene objects."""
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ValueError("scene must be a JSON list of objects")
    objects = []
    for i, item in enumerate(raw):
        try:
            pos = tuple(float(v) for v in item["position"])
            obj = SceneObject(str(item["id"]), str(item["class_name"]), str(item.get("color", "")), pos)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"scene object {i} is malformed: {exc}") from exc
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"scene object {obj.id}: position needs 3 finite numbers")
        objects.append(obj)
    ids = [o.id for o in objects]
    if len(set(ids)) != len(ids):
        raise ValueError("scene object ids must be unique")
    return tuple(objects)


@dataclass
class RoverState:
    position: tuple[float, float]  # (lat, lon)
    speed: float = 1.0  # m/s

    def __post_init__(self) -> None:
        if self.speed <= 0:
            raise ValueError("rover speed must be positive")


@dataclass
class ArmState:
    ee_position: np.ndarray
    ee_orientation: np.ndarray
    home_position: np.ndarray
    home_orientation: np.ndarray
    reach: float = DEFAULT_REACH
    gripper_holding: str | None = None

    @classmethod
    def at_home(cls, home=HOME_POSITION, orientation=quat.IDENTITY, reach: float = DEFAULT_REACH) -> "ArmState":
        pos = np.asarray(home, dtype=float)
        q = quat.normalize(orientation)
        return cls(pos.copy(), q.copy(), pos.copy(), q.copy(), reach)

    def forward(self) -> np.ndarray:
        return quat.rotate(self.ee_orientation, quat.FORWARD)


@dataclass
class SimWorld:
    """Everything a robot backend reads or mutates.

    Owned by one executing mission at a time; use :meth:`clone` for an
    independent copy. Randomness comes only from ``rng`` (seeded).
    """

    farm: FarmModel | None = None
    scene: tuple[SceneObject, ...] = ()
    seed: int = 0
    rover: RoverState | None = None
    arm: ArmState | None = None
    clock: float = 0.0
    rng: np.random.Generator = field(init=False, repr=False)
    located: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    last_seen: dict[str, str] = field(default_factory=dict)
    point_clouds: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    artifacts: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def create(cls, farm: FarmModel | None = None, scene=(), seed: int = 0,
               rover_speed: float = 1.0, reach: float = DEFAULT_REACH) -> "SimWorld":
        rover = None
        if farm is not None:
            start = farm.props.get("rover_start")
            pos = (float(start[1]), float(start[0])) if start else farm.center()
            rover = RoverState(pos, rover_speed)
        return cls(farm=farm, scene=tuple(scene), seed=seed, rover=rover, arm=ArmState.at_home(reach=reach))

    def clone(self) -> "SimWorld":
        return copy.deepcopy(self)

    def object(self, object_id: str) -> SceneObject | None:
        for obj in self.scene:
            if obj.id == object_id:
                return obj
        return None

    def new_artifact(self, kind: str) -> str:
        ref = f"{kind}_{len(self.artifacts) + 1:04d}"
        self.artifacts.append(ref)
        return ref

    def snapshot(self, robot_id: str | None = None) -> dict[str, Any]:
        """JSON-ready view of the robot state(s) for the trace."""
        snap: dict[str, Any] = {"clock": self.clock}
        if self.rover is not None and robot_id in (None, "husky"):
            snap["rover"] = {"lat": self.rover.position[0], "lon": self.rover.position[1]}
        if self.arm is not None and robot_id in (None, "kortex"):
            snap["arm"] = {
                "position": [float(v) for v in self.arm.ee_position],
                "orientation": [float(v) for v in self.arm.ee_orientation],
                "holding": self.arm.gripper_holding,
            }
        return snap


def load_world(context_dir: str | Path, seed: int = 0, scene_file: str = "scene.json") -> SimWorld:
    """Build a world from ``<context>/worlds/farm.geojson`` and the scene file, if present."""
    worlds = Path(context_dir) / "worlds"
    farm_path = worlds / "farm.geojson"
    scene_path = Path(scene_file) if Path(scene_file).is_absolute() else worlds / scene_file
    farm = load_farm(farm_path.read_bytes()) if farm_path.exists() else None
    scene = load_scene(scene_path.read_bytes()) if scene_path.exists() else ()
    return SimWorld.create(farm, scene, seed)
