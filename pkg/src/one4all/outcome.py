"""Result type shared by the executor and robot backends."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class TaskOutcome:
    """What one dispatched action produced.

    ``value`` must be JSON-serializable; it ends up in the execution trace.
    ``duration`` is simulated seconds.
    """

    task_id: str
    label: str
    value: Any = None
    duration: float = 0.0

    def to_json(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "label": self.label, "value": self.value,
                "duration": self.duration}
