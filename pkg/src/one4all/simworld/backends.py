"""Robot backends: bind each schema action name to a simulated handler."""

from __future__ import annotations

from typing import Any, Callable, Mapping

from one4all.outcome import TaskOutcome
from one4all.schema import ActionPool, builtin_pool
from one4all.simworld import arm, rover
from one4all.simworld.world import SimWorld

Handler = Callable[..., TaskOutcome]


class SimBackend:
    """Dispatches actions to handlers and advances the world's virtual clock."""

    def __init__(self, pool: ActionPool, handlers: Mapping[str, Handler]):
        missing = sorted(set(pool.actions) - set(handlers))
        if missing:
            raise ValueError(f"no handler for actions: {', '.join(missing)}")
        self.robot_id = pool.robot_id
        self.pool = pool
        self.handlers = dict(handlers)

    def execute(self, action: str, params: Mapping[str, Any], world: SimWorld) -> TaskOutcome:
        outcome = self.handlers[action](world, **params)
        declared = self.pool.actions[action].outcomes
        if outcome.label not in declared:
            raise ValueError(f"handler for {action} returned undeclared outcome {outcome.label!r}")
        world.clock += outcome.duration
        return outcome


def rover_backend(pool: ActionPool | None = None) -> SimBackend:
    return SimBackend(pool or builtin_pool("husky"), {
        "goto_gps": rover.goto_gps,
        "read_temperature": rover.read_temperature,
        "measure_co2": rover.measure_co2,
        "take_thermal_image": rover.take_thermal_image,
    })


def arm_backend(pool: ActionPool | None = None) -> SimBackend:
    return SimBackend(pool or builtin_pool("kortex"), {
        "move_pose": arm.move_pose,
        "detect_object": arm.detect_object,
        "capture_image": arm.capture_image,
        "nbv": arm.nbv,
        "pick": arm.pick,
        "random_move": arm.random_move,
        "go_home": arm.go_home,
    })


BACKENDS: dict[str, Callable[[ActionPool | None], SimBackend]] = {
    "husky": rover_backend,
    "kortex": arm_backend,
}


def backend_for(pool: ActionPool) -> SimBackend:
    try:
        factory = BACKENDS[pool.robot_id]
    except KeyError:
        raise ValueError(f"no simulated backend for robot {pool.robot_id!r}") from None
    return factory(pool)

