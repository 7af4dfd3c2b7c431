"""Wheeled-rover actions: drive to GPS points and read on-board sensors."""

from __future__ import annotations

from one4all.outcome import TaskOutcome
from one4all.simworld.geo import haversine
from one4all.simworld.world import SimWorld

ARRIVAL_TOLERANCE_M = 0.5
SENSOR_RADIUS_M = 5.0
AMBIENT_TEMPERATURE_C = 20.0
AMBIENT_CO2_FLUX = 0.5  # umol m-2 s-1, bare soil
TEMPERATURE_SECONDS = 2.0
CO2_SECONDS = 30.0
THERMAL_SECONDS = 1.0


def _rover(world: SimWorld):
    if world.rover is None or world.farm is None:
        raise RuntimeError("world has no rover/farm")
    return world.rover


def goto_gps(world: SimWorld, lat: float, lon: float) -> TaskOutcome:
    rover = _rover(world)
    if not world.farm.contains(lat, lon):
        return TaskOutcome("", "failure", {"reason": f"target {lat},{lon} is outside the farm boundary"})
    distance = haversine(*rover.position, lat, lon)
    duration = distance / rover.speed
    # the simulated drive ends exactly on target, well inside the arrival tolerance
    rover.position = (lat, lon)
    return TaskOutcome("", "success", {"distance_m": distance, "position": [lat, lon]}, duration)


def _classify(value: float, low: float | None, high: float | None) -> str:
    if low is not None and value < low:
        return "low"
    if high is not None and value > high:
        return "high"
    return "success"


def _reading(world: SimWorld, prop: str, ambient: float) -> tuple[float, str | None]:
    rover = _rover(world)
    hit = world.farm.nearest(*rover.position, SENSOR_RADIUS_M, prop=prop)
    if hit is None:
        return ambient, None
    return float(hit[0].props[prop]), hit[0].id


def read_temperature(world: SimWorld, low: float | None = None, high: float | None = None) -> TaskOutcome:
    value, source = _reading(world, "temperature", AMBIENT_TEMPERATURE_C)
    return TaskOutcome("", _classify(value, low, high), {"temperature_c": value, "feature": source},
                       TEMPERATURE_SECONDS)


def measure_co2(world: SimWorld, low: float | None = None, high: float | None = None) -> TaskOutcome:
    value, source = _reading(world, "co2_flux", AMBIENT_CO2_FLUX)
    return TaskOutcome("", _classify(value, low, high), {"co2_flux": value, "feature": source}, CO2_SECONDS)


def take_thermal_image(world: SimWorld) -> TaskOutcome:
    rover = _rover(world)
    ref = world.new_artifact("thermal")
    return TaskOutcome("", "success", {"artifact": ref, "position": list(rover.position)}, THERMAL_SECONDS)
