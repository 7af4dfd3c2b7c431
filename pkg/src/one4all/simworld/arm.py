"""Manipulator actions: pose moves, geometric detection, next-best-view, pick."""

from __future__ import annotations

import math

import numpy as np

from one4all.outcome import TaskOutcome
from one4all.simworld import quat
from one4all.simworld.world import SceneObject, SimWorld

FOV_HALF_ANGLE_DEG = 35.0
DETECTION_RANGE_M = 1.5
GRASP_TOLERANCE_M = 0.1
RANDOM_SHELL_MIN_M = 0.2
RANDOM_SHELL_FRACTION = 0.8
CLOUD_SIGMA_M = 0.02
CLOUD_POINTS_PER_VIEW = 500
LINEAR_SPEED = 0.2  # m/s
ANGULAR_SPEED = 1.0  # rad/s
DETECT_SECONDS = 0.5
CAPTURE_SECONDS = 0.2


def _arm(world: SimWorld):
    if world.arm is None:
        raise RuntimeError("world has no arm")
    return world.arm


def _travel(world: SimWorld, position, orientation) -> float:
    """Put the end effector at a pose and return the simulated move time."""
    arm = _arm(world)
    dist = float(np.linalg.norm(np.asarray(position) - arm.ee_position))
    turn = quat.angle_between(arm.ee_orientation, orientation)
    arm.ee_position = np.asarray(position, dtype=float).copy()
    arm.ee_orientation = quat.normalize(orientation)
    return dist / LINEAR_SPEED + turn / ANGULAR_SPEED


def _pose_json(world: SimWorld) -> dict:
    arm = _arm(world)
    return {"position": [float(v) for v in arm.ee_position],
            "orientation": [float(v) for v in arm.ee_orientation]}


def move_pose(world: SimWorld, pose, mode: str = "absolute") -> TaskOutcome:
    """Absolute: go to *pose*. Relative: offset in the end-effector frame, q_new = q_cur ⊗ q_rel."""
    arm = _arm(world)
    pose = tuple(float(v) for v in pose)
    offset, q = np.array(pose[:3]), quat.normalize(pose[3:])
    if mode == "absolute":
        position, orientation = offset, q
    elif mode == "relative":
        position = arm.ee_position + quat.rotate(arm.ee_orientation, offset)
        orientation = quat.normalize(quat.multiply(arm.ee_orientation, q))
    else:
        return TaskOutcome("", "failure", {"reason": f"unknown mode {mode!r}"})
    if np.linalg.norm(position) > arm.reach:
        return TaskOutcome("", "failure", {"reason": "target pose is out of reach",
                                           "target": [float(v) for v in position]})
    duration = _travel(world, position, orientation)
    return TaskOutcome("", "success", _pose_json(world), duration)


def visible_objects(world: SimWorld, class_name: str | None = None, color: str | None = None,
                    object_id: str | None = None) -> list[tuple[float, SceneObject]]:
    """Matching objects inside the camera cone, sorted nearest first (ties by id)."""
    arm = _arm(world)
    fwd = arm.forward()
    cos_limit = math.cos(math.radians(FOV_HALF_ANGLE_DEG))
    hits = []
    for obj in world.scene:
        if obj.id == arm.gripper_holding:
            continue
        if object_id is not None and obj.id != object_id:
            continue
        if class_name is not None and obj.class_name.lower() != class_name.lower():
            continue
        if color and obj.color.lower() != color.lower():
            continue
        d = np.asarray(obj.position) - arm.ee_position
        dist = float(np.linalg.norm(d))
        if dist == 0.0 or dist > DETECTION_RANGE_M:
            continue
        if float(np.dot(d, fwd)) / dist < cos_limit:
            continue
        hits.append((dist, obj))
    hits.sort(key=lambda h: (h[0], h[1].id))
    return hits


def _remember(world: SimWorld, obj: SceneObject) -> None:
    world.located[obj.id] = obj.position
    world.last_seen[obj.class_name.lower()] = obj.id


def detect_object(world: SimWorld, class_name: str, color: str | None = None) -> TaskOutcome:
    hits = visible_objects(world, class_name, color)
    if not hits:
        return TaskOutcome("", "failure", {"reason": f"no {class_name} in view"}, DETECT_SECONDS)
    dist, obj = hits[0]
    _remember(world, obj)
    return TaskOutcome("", "success", {"object_id": obj.id, "class_name": obj.class_name, "color": obj.color,
                                       "position": list(obj.position), "distance_m": dist}, DETECT_SECONDS)


def locate(world: SimWorld, target: str) -> SceneObject | None:
    """Resolve an object id or class name, looking with the camera if it was never seen."""
    arm = _arm(world)
    obj = world.object(target)
    if obj is not None:
        if obj.id == arm.gripper_holding:
            return None
        if obj.id in world.located:
            return obj
        hits = visible_objects(world, object_id=obj.id)
    else:
        seen = world.last_seen.get(target.lower())
        if seen is not None and seen != arm.gripper_holding:
            return world.object(seen)
        hits = visible_objects(world, class_name=target)
    if not hits:
        return None
    _remember(world, hits[0][1])
    return hits[0][1]


def nbv_viewpoints(center, k: int = 6, radius: float = 0.3) -> list[tuple[np.ndarray, np.ndarray]]:
    """k poses evenly spaced on a horizontal circle around *center*, each looking at it.

    The first viewpoint sits on the +x side of the object (azimuth 0).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    center = np.asarray(center, dtype=float)
    views = []
    for i in range(k):
        az = 2.0 * math.pi * i / k
        pos = center + radius * np.array([math.cos(az), math.sin(az), 0.0])
        views.append((pos, quat.look_at(pos, center)))
    return views


def _cloud_slice(world: SimWorld, center, position, orientation) -> np.ndarray:
    """Synthetic point cloud of the object in the camera frame."""
    pts = world.rng.normal(loc=center, scale=CLOUD_SIGMA_M, size=(CLOUD_POINTS_PER_VIEW, 3))
    rot = quat.to_matrix(orientation)
    return (pts - position) @ rot


def nbv(world: SimWorld, target_object: str, k: int = 6, radius: float = 0.3) -> TaskOutcome:
    arm = _arm(world)
    obj = locate(world, target_object)
    if obj is None:
        return TaskOutcome("", "failure", {"reason": f"object {target_object!r} could not be located"},
                           DETECT_SECONDS)
    duration = 0.0
    slices = []
    for position, orientation in nbv_viewpoints(obj.position, k, radius):
        if np.linalg.norm(position) > arm.reach:
            continue
        duration += _travel(world, position, orientation) + CAPTURE_SECONDS
        cam = _cloud_slice(world, obj.position, position, orientation)
        # back to the base frame for merging
        slices.append(cam @ quat.to_matrix(orientation).T + position)
    merged = np.concatenate(slices) if slices else np.empty((0, 3))
    world.point_clouds[obj.id] = merged
    label = "success" if len(slices) >= math.ceil(k / 2) else "failure"
    return TaskOutcome("", label, {"object_id": obj.id, "viewpoints": k, "captured": len(slices),
                                   "points": int(merged.shape[0]), "cloud": world.new_artifact("cloud")},
                       duration)


def pick(world: SimWorld, target_object: str) -> TaskOutcome:
    arm = _arm(world)
    if arm.gripper_holding is not None:
        return TaskOutcome("", "failure", {"reason": f"gripper already holds {arm.gripper_holding}"})
    obj = locate(world, target_object)
    if obj is None:
        return TaskOutcome("", "failure", {"reason": f"object {target_object!r} could not be located"},
                           DETECT_SECONDS)
    target = np.asarray(obj.position, dtype=float)
    if np.linalg.norm(target) > arm.reach:
        return TaskOutcome("", "failure", {"reason": f"{obj.id} is out of reach"})
    duration = _travel(world, target, arm.ee_orientation)
    if np.linalg.norm(arm.ee_position - target) > GRASP_TOLERANCE_M:
        return TaskOutcome("", "failure", {"reason": "approach ended too far from the object"}, duration)
    arm.gripper_holding = obj.id
    return TaskOutcome("", "success", {"object_id": obj.id}, duration)


def random_move(world: SimWorld) -> TaskOutcome:
    """Uniform sample in the reach shell [0.2 m, 0.8 * reach] (upper half), camera facing outward."""
    arm = _arm(world)
    inner, outer = RANDOM_SHELL_MIN_M, RANDOM_SHELL_FRACTION * arm.reach
    direction = world.rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    direction[2] = abs(direction[2])
    r = (world.rng.uniform() * (outer ** 3 - inner ** 3) + inner ** 3) ** (1.0 / 3.0)
    position = r * direction
    yaw = math.atan2(position[1], position[0])
    duration = _travel(world, position, quat.from_yaw(yaw))
    return TaskOutcome("", "success", _pose_json(world), duration)


def go_home(world: SimWorld) -> TaskOutcome:
    arm = _arm(world)
    duration = _travel(world, arm.home_position, arm.home_orientation)
    return TaskOutcome("", "success", _pose_json(world), duration)


def capture_image(world: SimWorld) -> TaskOutcome:
    ref = world.new_artifact("image")
    return TaskOutcome("", "success", {"artifact": ref, **_pose_json(world)}, CAPTURE_SECONDS)
