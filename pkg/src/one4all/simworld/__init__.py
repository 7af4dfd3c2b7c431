"""Simulated farm world with a wheeled rover and a 6-DOF manipulator."""

from one4all.simworld.backends import SimBackend, arm_backend, backend_for, rover_backend
from one4all.simworld.farm import FarmModel, Feature, GeoJsonError, load_farm
from one4all.simworld.world import ArmState, RoverState, SceneObject, SimWorld, load_scene, load_world

__all__ = [
    "ArmState", "FarmModel", "Feature", "GeoJsonError", "RoverState", "SceneObject", "SimBackend",
    "SimWorld", "arm_backend", "backend_for", "load_farm", "load_scene", "load_world", "rover_backend",
]
