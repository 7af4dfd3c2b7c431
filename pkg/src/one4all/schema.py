"""Robot capability schemas (action pools).

An action pool lists the atomic actions one robot can perform, each with typed
parameters and the outcome labels it can report. Pools are loaded from a small
XML dialect::

    <actionpool robot="husky" version="1.0">
      <action name="goto_gps" doc="Drive to a GPS coordinate.">
        <param name="lat" kind="float" required="true" min="-90" max="90"/>
        <outcome>success</outcome>
        <outcome>failure</outcome>
      </action>
    </actionpool>

Enum parameters list their values as ``<value>`` children of ``<param>``.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from xml.parsers.expat import ErrorString
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from defusedxml import DefusedXmlException
from defusedxml.ElementTree import fromstring as _safe_fromstring

IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*\Z")
OUTCOME_RE = re.compile(r"^[a-z_][a-z0-9_]*\Z")
MANDATORY_OUTCOMES = ("success", "failure")
CORPUS_DIR = Path(__file__).resolve().parent / "corpus"
QUAT_TOLERANCE = 1e-6


class SchemaError(ValueError):
    """Base class for action-pool loading errors."""


class SchemaSyntaxError(SchemaError):
    """The schema document is not well-formed XML (or uses DTDs/entities)."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class SchemaSemanticError(SchemaError):
    """The schema document parses but describes an invalid pool."""


class ParamValueError(ValueError):
    """A textual parameter value cannot be coerced to its declared kind."""


class ParamRangeError(ValueError):
    """A parameter value has the right type but lies outside its bounds."""


class ParamKind(str, Enum):
    STRING = "string"
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    ENUM = "enum"
    GPS_POINT = "gps_point"
    POSE6D = "pose6d"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: ParamKind
    required: bool = True
    allowed_values: tuple[str, ...] | None = None
    min: float | None = None
    max: float | None = None

    def __post_init__(self) -> None:
        if not IDENT_RE.match(self.name):
            raise SchemaSemanticError(f"invalid parameter name {self.name!r}")
        if self.kind is ParamKind.ENUM:
            if not self.allowed_values:
                raise SchemaSemanticError(f"enum parameter {self.name!r} declares no values")
        elif self.allowed_values:
            raise SchemaSemanticError(f"parameter {self.name!r} lists values but is not an enum")
        if self.min is not None or self.max is not None:
            if self.kind not in (ParamKind.INT, ParamKind.FLOAT):
                raise SchemaSemanticError(f"bounds on non-numeric parameter {self.name!r}")
            if self.min is not None and self.max is not None and self.min > self.max:
                raise SchemaSemanticError(f"parameter {self.name!r} has min > max")


@dataclass(frozen=True)
class ActionSpec:
    name: str
    params: tuple[ParamSpec, ...] = ()
    outcomes: tuple[str, ...] = MANDATORY_OUTCOMES
    doc: str = ""

    def __post_init__(self) -> None:
        if not IDENT_RE.match(self.name):
            raise SchemaSemanticError(f"invalid action name {self.name!r}")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SchemaSemanticError(f"action {self.name!r} has duplicate parameter names")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise SchemaSemanticError(f"action {self.name!r} has duplicate outcomes")
        for label in self.outcomes:
            if not OUTCOME_RE.match(label):
                raise SchemaSemanticError(f"outcome label {label!r} is not a lower-case identifier")
        for label in MANDATORY_OUTCOMES:
            if label not in self.outcomes:
                raise SchemaSemanticError(f"action {self.name!r} must declare outcome {label!r}")

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class ActionPool:
    robot_id: str
    actions: Mapping[str, ActionSpec] = field(default_factory=dict)
    schema_version: str = "1.0"

    def __post_init__(self) -> None:
        if not self.robot_id or not IDENT_RE.match(self.robot_id):
            raise SchemaSemanticError(f"invalid robot id {self.robot_id!r}")
        for key, spec in self.actions.items():
            if key != spec.name:
                raise SchemaSemanticError(f"action key {key!r} does not match spec name {spec.name!r}")


def lookup(pool: ActionPool, name: str) -> ActionSpec | None:
    return pool.actions.get(name)


def _parse_xml(source: str | bytes) -> ET.Element:
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaSyntaxError(f"schema is not valid UTF-8: {exc}") from exc
    if not source.strip():
        raise SchemaSyntaxError("empty schema document")
    try:
        return _safe_fromstring(source, forbid_dtd=True)
    except ET.ParseError as exc:
        line, col = exc.position
        raise SchemaSyntaxError(f"malformed schema: {ErrorString(exc.code)}", line, col) from exc
    except DefusedXmlException as exc:
        raise SchemaSyntaxError(f"DTDs and entities are not allowed: {exc}") from exc


def _float_attr(elem: ET.Element, name: str) -> float | None:
    raw = elem.get(name)
    if raw is None:
        return None
    try:
        value = float(raw)
    except ValueError as exc:
        raise SchemaSemanticError(f"attribute {name}={raw!r} is not a number") from exc
    if not math.isfinite(value):
        raise SchemaSemanticError(f"attribute {name}={raw!r} is not finite")
    return value


def _load_param(elem: ET.Element, action: str) -> ParamSpec:
    name = elem.get("name")
    if not name:
        raise SchemaSemanticError(f"parameter of action {action!r} has no name")
    try:
        kind = ParamKind(elem.get("kind", ""))
    except ValueError as exc:
        raise SchemaSemanticError(f"parameter {action}.{name} has unknown kind {elem.get('kind')!r}") from exc
    required_raw = elem.get("required", "true")
    if required_raw not in ("true", "false"):
        raise SchemaSemanticError(f"parameter {action}.{name}: required must be true|false")
    values = tuple((v.text or "").strip() for v in elem.findall("value"))
    return ParamSpec(
        name=name,
        kind=kind,
        required=required_raw == "true",
        allowed_values=values or None,
        min=_float_attr(elem, "min"),
        max=_float_attr(elem, "max"),
    )


def load_pool(source: str | bytes) -> ActionPool:
    """Parse a schema document into an :class:`ActionPool`."""
    root = _parse_xml(source)
    if root.tag != "actionpool":
        raise SchemaSemanticError(f"root element must be <actionpool>, got <{root.tag}>")
    robot = root.get("robot", "")
    actions: dict[str, ActionSpec] = {}
    for child in root:
        if child.tag != "action":
            raise SchemaSemanticError(f"unexpected element <{child.tag}> in <actionpool>")
        name = child.get("name", "")
        if name in actions:
            raise SchemaSemanticError(f"duplicate action {name!r}")
        params = []
        outcomes = []
        for sub in child:
            if sub.tag == "param":
                params.append(_load_param(sub, name))
            elif sub.tag == "outcome":
                outcomes.append((sub.text or "").strip())
            else:
                raise SchemaSemanticError(f"unexpected element <{sub.tag}> in action {name!r}")
        actions[name] = ActionSpec(name, tuple(params), tuple(outcomes), child.get("doc", ""))
    return ActionPool(robot, actions, root.get("version", "1.0"))


def _fmt_num(value: float) -> str:
    return repr(float(value))


def serialize_pool(pool: ActionPool) -> str:
    root = ET.Element("actionpool", robot=pool.robot_id, version=pool.schema_version)
    for spec in pool.actions.values():
        action = ET.SubElement(root, "action", name=spec.name)
        if spec.doc:
            action.set("doc", spec.doc)
        for p in spec.params:
            pe = ET.SubElement(action, "param", name=p.name, kind=p.kind.value,
                               required="true" if p.required else "false")
            if p.min is not None:
                pe.set("min", _fmt_num(p.min))
            if p.max is not None:
                pe.set("max", _fmt_num(p.max))
            for v in p.allowed_values or ():
                ET.SubElement(pe, "value").text = v
        for label in spec.outcomes:
            ET.SubElement(action, "outcome").text = label
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def _describe_param(p: ParamSpec) -> str:
    parts = [p.kind.value]
    if p.kind is ParamKind.ENUM:
        parts.append("one of " + "|".join(p.allowed_values or ()))
    if p.min is not None or p.max is not None:
        lo = "-inf" if p.min is None else f"{p.min:g}"
        hi = "inf" if p.max is None else f"{p.max:g}"
        parts.append(f"range [{lo}, {hi}]")
    if p.kind is ParamKind.GPS_POINT:
        parts.append('written "lat,lon" in degrees')
    if p.kind is ParamKind.POSE6D:
        parts.append('written "x,y,z,qw,qx,qy,qz" (meters, unit quaternion)')
    parts.append("required" if p.required else "optional")
    return f"{p.name} ({', '.join(parts)})"


def render_context(pools: Sequence[ActionPool]) -> str:
    """Render pools as a stable plain-text capability listing for the prompt."""
    if not pools:
        raise ValueError("render_context needs at least one action pool")
    lines: list[str] = []
    for pool in sorted(pools, key=lambda p: p.robot_id):
        lines.append(f"ROBOT {pool.robot_id} (schema version {pool.schema_version})")
        for name in sorted(pool.actions):
            spec = pool.actions[name]
            lines.append(f"  ACTION {name}: {spec.doc}".rstrip())
            if spec.params:
                for p in spec.params:
                    lines.append(f"    param {_describe_param(p)}")
            else:
                lines.append("    (no parameters)")
            lines.append(f"    outcomes: {', '.join(spec.outcomes)}")
        lines.append("")
    return "\n".join(lines)


# -- parameter coercion -------------------------------------------------------

_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


def _floats(text: str, n: int, what: str) -> list[float]:
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != n:
        raise ParamValueError(f"{what} needs {n} comma-separated numbers, got {len(parts)}")
    try:
        values = [float(s) for s in parts]
    except ValueError as exc:
        raise ParamValueError(f"{what} contains a non-numeric component: {text!r}") from exc
    if not all(math.isfinite(v) for v in values):
        raise ParamValueError(f"{what} contains a non-finite component: {text!r}")
    return values


def coerce_param(spec: ParamSpec, text: str) -> Any:
    """Convert a plan's string value to the typed value *spec* declares.

    Raises ParamValueError for type mismatches and ParamRangeError for values
    outside declared or intrinsic bounds (WGS84 ranges, unit quaternions).
    """
    raw = text.strip()
    kind = spec.kind
    if kind is ParamKind.STRING:
        if not raw:
            raise ParamValueError("empty string")
        return text
    if kind is ParamKind.BOOL:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ParamValueError(f"expected a boolean, got {text!r}")
    if kind is ParamKind.ENUM:
        if raw not in (spec.allowed_values or ()):
            raise ParamValueError(f"expected one of {', '.join(spec.allowed_values or ())}, got {text!r}")
        return raw
    if kind is ParamKind.INT:
        if not re.fullmatch(r"[+-]?\d+", raw):
            raise ParamValueError(f"expected an integer, got {text!r}")
        value: Any = int(raw)
    elif kind is ParamKind.FLOAT:
        try:
            value = float(raw)
        except ValueError as exc:
            raise ParamValueError(f"expected a number, got {text!r}") from exc
        if not math.isfinite(value):
            raise ParamValueError(f"expected a finite number, got {text!r}")
    elif kind is ParamKind.GPS_POINT:
        lat, lon = _floats(raw, 2, "gps_point")
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise ParamRangeError(f"gps_point ({lat}, {lon}) outside WGS84 range")
        return (lat, lon)
    else:
        pose = _floats(raw, 7, "pose6d")
        norm = math.sqrt(sum(q * q for q in pose[3:]))
        if abs(norm - 1.0) > QUAT_TOLERANCE:
            raise ParamRangeError(f"pose6d quaternion norm {norm:.9f} is not 1")
        return tuple(pose)
    if spec.min is not None and value < spec.min:
        raise ParamRangeError(f"{value} is below minimum {spec.min:g}")
    if spec.max is not None and value > spec.max:
        raise ParamRangeError(f"{value} is above maximum {spec.max:g}")
    return value


def coerce_params(spec: ActionSpec, params: Mapping[str, str]) -> dict[str, Any]:
    """Coerce every declared parameter present in *params*; unknown names raise."""
    out = {}
    for name, text in params.items():
        p = spec.param(name)
        if p is None:
            raise ParamValueError(f"action {spec.name!r} has no parameter {name!r}")
        out[name] = coerce_param(p, text)
    return out


def builtin_pool(robot: str) -> ActionPool:
    """Load one of the schemas shipped with the package (``husky`` or ``kortex``)."""
    return load_pool((CORPUS_DIR / "schemas" / f"{robot}.xml").read_bytes())


def load_pools(paths: Iterable) -> list[ActionPool]:
    pools = []
    for path in paths:
        with open(path, "rb") as fh:
            pools.append(load_pool(fh.read()))
    return pools
