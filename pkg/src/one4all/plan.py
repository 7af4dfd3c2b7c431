"""Mission plans as behavior trees, and their XML form.

Plan grammar::

    <mission id="m1" robot="kortex">
      <query>original request text</query>            (optional)
      <sequence>
        <task id="find" action="detect_object">
          <param name="class_name">pistachio</param>
        </task>
        <conditional on="find">
          <branch outcome="success"> ...one node... </branch>
          <else> ...one node... </else>
        </conditional>
      </sequence>
    </mission>

The mission, each branch and each else hold exactly one node. Param values
stay strings here; typing happens during validation.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from xml.parsers.expat import ErrorString
from dataclasses import dataclass, field
from typing import Iterator, Union

from defusedxml import DefusedXmlException
from defusedxml.ElementTree import fromstring as _safe_fromstring

from one4all.schema import IDENT_RE, OUTCOME_RE


class PlanError(ValueError):
    def __init__(self, message: str, path: str = ""):
        self.message = message
        self.path = path
        super().__init__(f"{message} at {path}" if path else message)


class XmlSyntaxError(PlanError):
    """Input is not well-formed XML, or uses DTDs/entities."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class TreeShapeError(PlanError):
    """XML is well-formed but is not a valid behavior tree."""

    def __init__(self, message: str, path: str = "", kind: str = "shape"):
        self.kind = kind
        super().__init__(message, path)


@dataclass(frozen=True)
class Sequence:
    children: tuple["BTNode", ...] = ()


@dataclass(frozen=True)
class Task:
    id: str
    action: str
    params: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Conditional:
    on: str
    branches: dict[str, "BTNode"] = field(default_factory=dict)
    else_branch: "BTNode | None" = None


BTNode = Union[Sequence, Task, Conditional]


@dataclass(frozen=True)
class MissionPlan:
    mission_id: str
    robot_id: str
    root: BTNode
    source_query: str = ""


# -- traversal -----------------------------------------------------------------

def _child_segments(node: BTNode) -> Iterator[tuple[str, BTNode]]:
    if isinstance(node, Sequence):
        seen: dict[str, int] = {}
        for child in node.children:
            tag = _tag(child)
            seen[tag] = seen.get(tag, 0) + 1
            yield f"{tag}[{seen[tag]}]", child
    elif isinstance(node, Conditional):
        for label, child in node.branches.items():
            yield f"branch[{label}]/{_tag(child)}", child
        if node.else_branch is not None:
            yield f"else/{_tag(node.else_branch)}", node.else_branch


def _tag(node: BTNode) -> str:
    if isinstance(node, Sequence):
        return "sequence"
    if isinstance(node, Task):
        return "task"
    return "conditional"


def walk(plan: MissionPlan) -> Iterator[tuple[str, BTNode]]:
    """Yield ``(path, node)`` pairs in pre-order (depth first, left to right).

    Paths look like ``/mission/sequence/task[2]`` or
    ``/mission/sequence/conditional[1]/branch[success]/task``.
    """
    stack = [(f"/mission/{_tag(plan.root)}", plan.root)]
    while stack:
        path, node = stack.pop()
        yield path, node
        children = [(f"{path}/{seg}", child) for seg, child in _child_segments(node)]
        stack.extend(reversed(children))


def pre_order(plan: MissionPlan) -> list[BTNode]:
    return [node for _, node in walk(plan)]


def count_nodes(plan: MissionPlan) -> tuple[int, int]:
    """Return ``(tasks, conditionals)``; the plan's size is their sum."""
    tasks = conditionals = 0
    for node in pre_order(plan):
        if isinstance(node, Task):
            tasks += 1
        elif isinstance(node, Conditional):
            conditionals += 1
    return tasks, conditionals


def tasks_by_id(plan: MissionPlan) -> dict[str, Task]:
    return {n.id: n for n in pre_order(plan) if isinstance(n, Task)}


def consumed_task_ids(plan: MissionPlan) -> frozenset[str]:
    """Ids of tasks whose outcome some Conditional branches on."""
    return frozenset(n.on for n in pre_order(plan) if isinstance(n, Conditional))


def shape_violations(plan: MissionPlan) -> list[tuple[str, str, str]]:
    """Check BTNode invariants; return ``(kind, path, message)`` in document order.

    kind is ``duplicate_id`` or ``forward_reference``.
    """
    problems = []
    seen: set[str] = set()
    for path, node in walk(plan):
        if isinstance(node, Task):
            if node.id in seen:
                problems.append(("duplicate_id", path, f"task id {node.id!r} is already used"))
            seen.add(node.id)
        elif isinstance(node, Conditional) and node.on not in seen:
            problems.append(("forward_reference", path,
                             f"conditional refers to task {node.on!r}, which does not appear before it"))
    return problems


# -- parsing -------------------------------------------------------------------

def _parse_root(xml: str | bytes) -> ET.Element:
    if isinstance(xml, bytes):
        try:
            xml = xml.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise XmlSyntaxError(f"plan is not valid UTF-8: {exc.reason}") from exc
    if not xml.strip():
        raise XmlSyntaxError("empty document")
    try:
        return _safe_fromstring(xml, forbid_dtd=True)
    except ET.ParseError as exc:
        line, col = exc.position
        raise XmlSyntaxError(f"malformed XML: {ErrorString(exc.code)}", line, col) from exc
    except DefusedXmlException as exc:
        raise XmlSyntaxError(f"DTDs and entities are not allowed ({type(exc).__name__})") from exc


def _require(elem: ET.Element, attr: str, path: str, pattern=IDENT_RE) -> str:
    value = elem.get(attr)
    if value is None:
        raise TreeShapeError(f"<{elem.tag}> is missing attribute {attr!r}", path)
    if not pattern.match(value):
        raise TreeShapeError(f"<{elem.tag}> attribute {attr}={value!r} is not a valid identifier", path)
    return value


def _no_text(elem: ET.Element, path: str) -> None:
    if elem.text and elem.text.strip():
        raise TreeShapeError(f"unexpected text inside <{elem.tag}>", path)
    for child in elem:
        if child.tail and child.tail.strip():
            raise TreeShapeError(f"unexpected text after <{child.tag}>", path)


def _single_node(elem: ET.Element, path: str) -> BTNode:
    _no_text(elem, path)
    children = list(elem)
    if len(children) != 1:
        raise TreeShapeError(f"<{elem.tag}> must contain exactly one node, found {len(children)}", path)
    child = children[0]
    return _build(child, f"{path}/{child.tag}")


def _build(elem: ET.Element, path: str) -> BTNode:
    if elem.tag == "sequence":
        _no_text(elem, path)
        children = []
        seen: dict[str, int] = {}
        for child in elem:
            seen[child.tag] = seen.get(child.tag, 0) + 1
            children.append(_build(child, f"{path}/{child.tag}[{seen[child.tag]}]"))
        return Sequence(tuple(children))
    if elem.tag == "task":
        task_id = _require(elem, "id", path)
        action = _require(elem, "action", path)
        _no_text(elem, path)
        params: dict[str, str] = {}
        for child in elem:
            if child.tag != "param":
                raise TreeShapeError(f"unexpected element <{child.tag}> inside <task>", path)
            if len(child):
                raise TreeShapeError("<param> must contain only text", path)
            name = _require(child, "name", path)
            if name in params:
                raise TreeShapeError(f"parameter {name!r} given twice", path)
            params[name] = child.text or ""
        return Task(task_id, action, params)
    if elem.tag == "conditional":
        on = _require(elem, "on", path)
        _no_text(elem, path)
        branches: dict[str, BTNode] = {}
        else_branch = None
        for child in elem:
            if child.tag == "branch":
                label = _require(child, "outcome", path, OUTCOME_RE)
                if label in branches:
                    raise TreeShapeError(f"outcome {label!r} has two branches", path)
                branches[label] = _single_node(child, f"{path}/branch[{label}]")
            elif child.tag == "else":
                if else_branch is not None:
                    raise TreeShapeError("conditional has two <else> elements", path)
                else_branch = _single_node(child, f"{path}/else")
            else:
                raise TreeShapeError(f"unexpected element <{child.tag}> inside <conditional>", path)
        if not branches and else_branch is None:
            raise TreeShapeError("conditional needs at least one <branch> or an <else>", path)
        return Conditional(on, branches, else_branch)
    raise TreeShapeError(f"unknown element <{elem.tag}>", path)


def parse_tree(xml: str | bytes) -> MissionPlan:
    """Parse plan XML into a tree without checking cross-node invariants.

    Grammar problems raise; duplicate ids and forward references do not (see
    :func:`shape_violations`). The validator uses this to report every problem.
    """
    root = _parse_root(xml)
    if root.tag != "mission":
        raise TreeShapeError(f"root element must be <mission>, got <{root.tag}>", "/" + root.tag)
    mission_id = _require(root, "id", "/mission")
    robot_id = _require(root, "robot", "/mission")
    _no_text(root, "/mission")
    query = ""
    nodes = []
    for child in root:
        if child.tag == "query":
            if len(child):
                raise TreeShapeError("<query> must contain only text", "/mission/query")
            query = child.text or ""
        else:
            nodes.append(child)
    if len(nodes) != 1:
        raise TreeShapeError(f"<mission> must contain exactly one root node, found {len(nodes)}", "/mission")
    body = _build(nodes[0], f"/mission/{nodes[0].tag}")
    return MissionPlan(mission_id, robot_id, body, query)


def parse_plan(xml: str | bytes) -> MissionPlan:
    """Parse and check a plan. Raises XmlSyntaxError or TreeShapeError."""
    plan = parse_tree(xml)
    problems = shape_violations(plan)
    if problems:
        kind, path, message = problems[0]
        raise TreeShapeError(message, path, kind)
    return plan


# -- serialization ---------------------------------------------------------------

def _to_element(node: BTNode, parent: ET.Element) -> None:
    if isinstance(node, Sequence):
        elem = ET.SubElement(parent, "sequence")
        for child in node.children:
            _to_element(child, elem)
    elif isinstance(node, Task):
        elem = ET.SubElement(parent, "task", id=node.id, action=node.action)
        for name, value in node.params.items():
            ET.SubElement(elem, "param", name=name).text = value
    else:
        elem = ET.SubElement(parent, "conditional", on=node.on)
        for label, child in node.branches.items():
            _to_element(child, ET.SubElement(elem, "branch", outcome=label))
        if node.else_branch is not None:
            _to_element(node.else_branch, ET.SubElement(elem, "else"))


def serialize_plan(plan: MissionPlan) -> str:
    root = ET.Element("mission", id=plan.mission_id, robot=plan.robot_id)
    if plan.source_query:
        ET.SubElement(root, "query").text = plan.source_query
    _to_element(plan.root, root)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"
