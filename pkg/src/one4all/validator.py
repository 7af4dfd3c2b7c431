"""Approval stage: check a candidate plan against the robots' action pools.

All problems are collected (no fail-fast) in document order so the rewrite
request carries the full error log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence as Seq

from one4all.plan import (
    Conditional,
    MissionPlan,
    PlanError,
    Sequence,
    Task,
    XmlSyntaxError,
    parse_tree,
    walk,
)
from one4all.schema import ActionPool, ParamRangeError, ParamValueError, coerce_param


class ErrorCode(str, Enum):
    UNKNOWN_ROBOT = "UNKNOWN_ROBOT"
    UNKNOWN_ACTION = "UNKNOWN_ACTION"
    MISSING_PARAM = "MISSING_PARAM"
    UNKNOWN_PARAM = "UNKNOWN_PARAM"
    BAD_PARAM_TYPE = "BAD_PARAM_TYPE"
    PARAM_OUT_OF_RANGE = "PARAM_OUT_OF_RANGE"
    UNKNOWN_OUTCOME = "UNKNOWN_OUTCOME"
    FORWARD_REFERENCE = "FORWARD_REFERENCE"
    DUPLICATE_TASK_ID = "DUPLICATE_TASK_ID"
    XML_SYNTAX = "XML_SYNTAX"


@dataclass(frozen=True)
class ValidationError:
    path: str
    code: ErrorCode
    message: str

    def __post_init__(self) -> None:
        if not self.path and self.code not in (ErrorCode.XML_SYNTAX, ErrorCode.UNKNOWN_ROBOT):
            raise ValueError(f"{self.code.value} errors need a node path")


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[ValidationError, ...] = field(default_factory=tuple)

    def approved(self) -> bool:
        return not self.errors

    def codes(self) -> list[ErrorCode]:
        return [e.code for e in self.errors]


def render_error_log(report: ValidationReport) -> str:
    """One line per error: ``<code> at <path>: <message>``."""
    if report.approved():
        raise ValueError("an approved report has no error log")
    return "\n".join(f"{e.code.value} at {e.path or '/'}: {e.message}" for e in report.errors)


def _guaranteed_before(plan: MissionPlan) -> dict[int, frozenset[str]]:
    """Map id(conditional) -> ids of tasks certain to have run when it is reached.

    A Sequence only advances past a child that succeeded, and a child that
    succeeded ran every task reachable from it through Sequences alone. Tasks
    inside an earlier Conditional's branches are therefore not guaranteed.
    """
    out: dict[int, frozenset[str]] = {}

    def unconditional(node) -> list[str]:
        if isinstance(node, Task):
            return [node.id]
        if isinstance(node, Sequence):
            return [tid for child in node.children for tid in unconditional(child)]
        return []

    def visit(node, done: frozenset[str]) -> None:
        if isinstance(node, Sequence):
            acc = set(done)
            for child in node.children:
                visit(child, frozenset(acc))
                acc.update(unconditional(child))
        elif isinstance(node, Conditional):
            out[id(node)] = done
            for child in node.branches.values():
                visit(child, done)
            if node.else_branch is not None:
                visit(node.else_branch, done)

    visit(plan.root, frozenset())
    return out


def check_plan(plan: MissionPlan, pool: ActionPool | None) -> list[ValidationError]:
    """Check a parsed plan. With ``pool=None`` only tree-shape rules run."""
    errors: list[ValidationError] = []
    guaranteed = _guaranteed_before(plan)
    seen: dict[str, Task] = {}
    for path, node in walk(plan):
        if isinstance(node, Task):
            if node.id in seen:
                errors.append(ValidationError(path, ErrorCode.DUPLICATE_TASK_ID,
                                              f"task id {node.id!r} is already used by an earlier task"))
            else:
                seen[node.id] = node
            if pool is not None:
                errors.extend(_check_task(path, node, pool))
        elif isinstance(node, Conditional):
            ref = seen.get(node.on)
            if ref is None:
                errors.append(ValidationError(path, ErrorCode.FORWARD_REFERENCE,
                                              f"conditional refers to task {node.on!r}, which is not defined before it"))
                continue
            if node.on not in guaranteed[id(node)]:
                errors.append(ValidationError(path, ErrorCode.FORWARD_REFERENCE,
                                              f"task {node.on!r} sits inside another conditional branch and may not "
                                              "have run when this conditional is reached"))
            spec = pool.actions.get(ref.action) if pool is not None else None
            if spec is not None:
                for label in node.branches:
                    if label not in spec.outcomes:
                        errors.append(ValidationError(
                            f"{path}/branch[{label}]", ErrorCode.UNKNOWN_OUTCOME,
                            f"action {ref.action!r} (task {ref.id!r}) never reports outcome {label!r}; "
                            f"declared outcomes: {', '.join(spec.outcomes)}"))
    return errors


def _check_task(path: str, task: Task, pool: ActionPool) -> list[ValidationError]:
    spec = pool.actions.get(task.action)
    if spec is None:
        return [ValidationError(path, ErrorCode.UNKNOWN_ACTION,
                                f"robot {pool.robot_id!r} has no action {task.action!r}; "
                                f"available: {', '.join(sorted(pool.actions))}")]
    errors = []
    for name, text in task.params.items():
        ppath = f"{path}/param[{name}]"
        pspec = spec.param(name)
        if pspec is None:
            errors.append(ValidationError(ppath, ErrorCode.UNKNOWN_PARAM,
                                          f"action {task.action!r} has no parameter {name!r}"))
            continue
        try:
            coerce_param(pspec, text)
        except ParamRangeError as exc:
            errors.append(ValidationError(ppath, ErrorCode.PARAM_OUT_OF_RANGE, f"{name}: {exc}"))
        except ParamValueError as exc:
            errors.append(ValidationError(ppath, ErrorCode.BAD_PARAM_TYPE,
                                          f"{name} must be {pspec.kind.value}: {exc}"))
    for pspec in spec.params:
        if pspec.required and pspec.name not in task.params:
            errors.append(ValidationError(path, ErrorCode.MISSING_PARAM,
                                          f"action {task.action!r} requires parameter {pspec.name!r}"))
    return errors


def validate(xml: str | bytes, pools: Seq[ActionPool]) -> tuple[MissionPlan | None, ValidationReport]:
    """Validate plan XML against the pools; the plan is returned only if approved."""
    if not pools:
        raise ValueError("validate needs at least one action pool")
    try:
        plan = parse_tree(xml)
    except XmlSyntaxError as exc:
        return None, ValidationReport((ValidationError("", ErrorCode.XML_SYNTAX, str(exc)),))
    except PlanError as exc:
        return None, ValidationReport((ValidationError(exc.path, ErrorCode.XML_SYNTAX, exc.message),))

    errors: list[ValidationError] = []
    matches = [p for p in pools if p.robot_id == plan.robot_id]
    pool = matches[0] if len(matches) == 1 else None
    if pool is None:
        known = ", ".join(sorted(p.robot_id for p in pools))
        why = "matches several pools" if matches else "is not a known robot"
        errors.append(ValidationError("/mission", ErrorCode.UNKNOWN_ROBOT,
                                      f"robot {plan.robot_id!r} {why}; known robots: {known}"))
    errors.extend(check_plan(plan, pool))
    report = ValidationReport(tuple(errors))
    return (plan if report.approved() else None), report
