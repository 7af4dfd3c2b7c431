"""Behavior-tree execution of approved plans against a robot backend.

Semantics (single pass, no re-ticking):

* Sequence runs children left to right and fails at the first failed child.
* Task dispatches its action and stores the outcome label. It fails only when
  the label is ``failure`` and no Conditional in the plan branches on it.
* Conditional looks up the referenced task's label and runs the matching
  branch, else the ``else`` branch, else succeeds without running anything.

This module must not import the planner or any LLM gateway: plans are
generated once, before execution, and nothing here can ask for a new one.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from one4all.outcome import TaskOutcome
from one4all.plan import BTNode, Conditional, MissionPlan, Sequence, Task, consumed_task_ids, walk
from one4all.schema import ActionPool, coerce_params

DEFAULT_TASK_TIMEOUT = 60.0


class BackendFault(RuntimeError):
    """A backend handler crashed while executing an action."""


class MissingOutcome(RuntimeError):
    """A Conditional referenced a task that has not been dispatched."""


class Status(str, Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class RobotBackend(Protocol):
    robot_id: str
    pool: ActionPool

    def execute(self, action: str, params: Mapping[str, Any], world: Any) -> TaskOutcome: ...


@dataclass
class RunContext:
    """Outcome store plus the hook that actually dispatches a task.

    ``dispatch(path, task)`` returns the outcome label.
    """

    dispatch: Callable[[str, Task], str]
    consumed: frozenset[str] = frozenset()
    paths: dict[int, str] = field(default_factory=dict)
    outcomes: dict[str, str] = field(default_factory=dict)
    decisions: list[dict[str, Any]] = field(default_factory=list)


def interpret(node: BTNode, ctx: RunContext) -> Status:
    if isinstance(node, Sequence):
        for child in node.children:
            if interpret(child, ctx) is Status.FAILED:
                return Status.FAILED
        return Status.SUCCEEDED
    if isinstance(node, Task):
        label = ctx.dispatch(ctx.paths.get(id(node), ""), node)
        ctx.outcomes[node.id] = label
        if label == "failure" and node.id not in ctx.consumed:
            return Status.FAILED
        return Status.SUCCEEDED
    if node.on not in ctx.outcomes:
        raise MissingOutcome(f"conditional on {node.on!r} reached before that task ran")
    label = ctx.outcomes[node.on]
    if label in node.branches:
        taken, branch = label, node.branches[label]
    elif node.else_branch is not None:
        taken, branch = "else", node.else_branch
    else:
        taken, branch = None, None
    ctx.decisions.append({"path": ctx.paths.get(id(node), ""), "on": node.on, "label": label, "taken": taken})
    return Status.SUCCEEDED if branch is None else interpret(branch, ctx)


def context_for(plan: MissionPlan, dispatch: Callable[[str, Task], str]) -> RunContext:
    return RunContext(dispatch, consumed_task_ids(plan), {id(n): p for p, n in walk(plan)})


# -- traces --------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    path: str
    task_id: str
    action: str
    params: dict[str, str]
    outcome: TaskOutcome
    state: dict[str, Any]
    timestamp: float  # virtual clock, seconds since mission start

    def to_json(self) -> dict[str, Any]:
        return {"type": "entry", "path": self.path, "task_id": self.task_id, "action": self.action,
                "params": self.params, "outcome": self.outcome.to_json(), "state": self.state,
                "timestamp": self.timestamp}

    @classmethod
    def from_json(cls, rec: Mapping[str, Any]) -> "TraceEntry":
        o = rec["outcome"]
        outcome = TaskOutcome(o["task_id"], o["label"], o.get("value"), o.get("duration", 0.0))
        return cls(rec["path"], rec["task_id"], rec["action"], dict(rec["params"]), outcome,
                   dict(rec.get("state") or {}), rec["timestamp"])


@dataclass
class ExecutionTrace:
    mission_id: str
    robot_id: str
    seed: int | None = None
    entries: list[TraceEntry] = field(default_factory=list)
    decisions: list[dict[str, Any]] = field(default_factory=list)
    final_status: str | None = None  # "completed" | "failed"
    fault: str | None = None

    def dispatched(self) -> list[str]:
        return [e.task_id for e in self.entries]

    def labels(self) -> list[str]:
        return [e.outcome.label for e in self.entries]

    def to_records(self) -> list[dict[str, Any]]:
        recs: list[dict[str, Any]] = [{"type": "header", "mission_id": self.mission_id,
                                       "robot_id": self.robot_id, "seed": self.seed}]
        recs.extend(e.to_json() for e in self.entries)
        recs.extend({"type": "decision", **d} for d in self.decisions)
        recs.append({"type": "status", "final_status": self.final_status, "fault": self.fault})
        return recs

    @classmethod
    def from_records(cls, records: list[Mapping[str, Any]]) -> "ExecutionTrace":
        if not records or records[0].get("type") != "header" or records[-1].get("type") != "status":
            raise ValueError("trace must start with a header record and end with a status record")
        head, tail = records[0], records[-1]
        trace = cls(head["mission_id"], head["robot_id"], head.get("seed"),
                    final_status=tail.get("final_status"), fault=tail.get("fault"))
        for rec in records[1:-1]:
            if rec.get("type") == "entry":
                trace.entries.append(TraceEntry.from_json(rec))
            elif rec.get("type") == "decision":
                trace.decisions.append({k: v for k, v in rec.items() if k != "type"})
            else:
                raise ValueError(f"unknown trace record type {rec.get('type')!r}")
        return trace

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in self.to_records())

    @classmethod
    def from_ndjson(cls, text: str) -> "ExecutionTrace":
        return cls.from_records([json.loads(line) for line in text.splitlines() if line.strip()])

    def write(self, out_dir: str | Path) -> Path:
        """Write ``<out_dir>/traces/<mission_id>.ndjson`` and return its path."""
        path = Path(out_dir) / "traces" / f"{self.mission_id}.ndjson"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ndjson(), encoding="utf-8")
        return path


# -- running -------------------------------------------------------------------

def apply_timeout(outcome: TaskOutcome, limit: float) -> TaskOutcome:
    if outcome.duration <= limit:
        return outcome
    value = {"reason": f"timed out after {limit:g} s", "result": outcome.value}
    return dataclasses.replace(outcome, label="failure", value=value, duration=limit)


def run(plan: MissionPlan, backend: RobotBackend, world: Any, *,
        task_timeout: float = DEFAULT_TASK_TIMEOUT) -> ExecutionTrace:
    """Execute an approved plan; returns the trace (never raises on task failure).

    A crashing handler is recorded as a failed entry with the fault text and
    ends the mission as failed.
    """
    if backend.robot_id != plan.robot_id:
        raise ValueError(f"plan is for {plan.robot_id!r} but backend drives {backend.robot_id!r}")
    trace = ExecutionTrace(plan.mission_id, plan.robot_id, getattr(world, "seed", None))

    def snapshot() -> dict[str, Any]:
        snap = getattr(world, "snapshot", None)
        return snap(plan.robot_id) if snap is not None else {}

    def dispatch(path: str, task: Task) -> str:
        spec = backend.pool.actions[task.action]
        try:
            outcome = backend.execute(task.action, coerce_params(spec, task.params), world)
        except Exception as exc:  # noqa: BLE001 - any handler crash is a fault
            trace.fault = f"{task.id}: {type(exc).__name__}: {exc}"
            outcome = TaskOutcome(task.id, "failure", {"fault": trace.fault})
            trace.entries.append(TraceEntry(path, task.id, task.action, dict(task.params), outcome,
                                            snapshot(), getattr(world, "clock", 0.0)))
            raise BackendFault(trace.fault) from exc
        outcome = apply_timeout(dataclasses.replace(outcome, task_id=task.id), task_timeout)
        trace.entries.append(TraceEntry(path, task.id, task.action, dict(task.params), outcome,
                                        snapshot(), getattr(world, "clock", 0.0)))
        return outcome.label

    ctx = context_for(plan, dispatch)
    try:
        status = interpret(plan.root, ctx)
    except BackendFault:
        status = Status.FAILED
    trace.decisions = ctx.decisions
    trace.final_status = "completed" if status is Status.SUCCEEDED else "failed"
    return trace


class ScriptedBackend:
    """Backend that returns pre-set labels instead of simulating anything.

    ``labels`` is either a list consumed in dispatch order (used for replay) or
    a mapping from action name to a list consumed per action. When a list runs
    out, ``default`` is returned.
    """

    def __init__(self, pool: ActionPool, labels: list[str] | Mapping[str, list[str]] | None = None,
                 default: str = "success", expect_actions: list[str] | None = None):
        self.robot_id = pool.robot_id
        self.pool = pool
        self.default = default
        self.calls: list[tuple[str, dict[str, Any]]] = []
        self._expect = list(expect_actions) if expect_actions is not None else None
        if labels is None or isinstance(labels, list):
            self._ordered = list(labels or [])
            self._per_action: dict[str, list[str]] = {}
        else:
            self._ordered = []
            self._per_action = {k: list(v) for k, v in labels.items()}

    def execute(self, action: str, params: Mapping[str, Any], world: Any) -> TaskOutcome:
        n = len(self.calls)
        self.calls.append((action, dict(params)))
        if self._expect is not None and (n >= len(self._expect) or self._expect[n] != action):
            raise RuntimeError(f"replay diverged at dispatch {n}: got {action}")
        queue = self._per_action.get(action) if self._per_action else self._ordered
        label = queue.pop(0) if queue else self.default
        return TaskOutcome("", label)


def replay(plan: MissionPlan, trace: ExecutionTrace, pool: ActionPool) -> ExecutionTrace:
    """Re-run *plan* feeding back the labels recorded in *trace*."""
    backend = ScriptedBackend(pool, trace.labels(), expect_actions=[e.action for e in trace.entries])
    return run(plan, backend, None)
