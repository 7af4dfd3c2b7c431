"""Plan generation: context + query -> prompt -> LLM -> approval loop."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Union

from defusedxml import DefusedXmlException
from defusedxml.ElementTree import fromstring as _safe_fromstring

from one4all.gateway import (
    ERRORS_END,
    ERRORS_START,
    GatewayConfig,
    LlmGateway,
)
from one4all.plan import MissionPlan
from one4all.schema import ActionPool, render_context
from one4all.simworld.farm import FarmModel
from one4all.validator import ValidationReport, render_error_log, validate

PROMPT_TEMPLATE = Path(__file__).resolve().parent / "prompts" / "mission_prompt.txt"
DEFAULT_REFUSAL = "The planner could not produce a mission for this request."


@dataclass(frozen=True)
class ContextBundle:
    pools: tuple[ActionPool, ...]
    farm: FarmModel | None = None
    extra_docs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.pools:
            raise ValueError("a context bundle needs at least one action pool")


@dataclass(frozen=True)
class Approved:
    plan: MissionPlan
    attempts_used: int
    xml: str = ""


@dataclass(frozen=True)
class Refused:
    explanation: str

    def __post_init__(self) -> None:
        if not self.explanation.strip():
            raise ValueError("a refusal needs an explanation")


@dataclass(frozen=True)
class Exhausted:
    last_report: ValidationReport


Outcome = Union[Approved, Refused, Exhausted]


@dataclass
class PlanningResult:
    outcome: Outcome
    transcript: list[tuple[str, str]] = field(default_factory=list)

    @property
    def approved(self) -> bool:
        return isinstance(self.outcome, Approved)


def build_prompt(bundle: ContextBundle, query: str, prior_error_log: str | None = None) -> str:
    if not query.strip():
        raise ValueError("query must not be empty")
    farm = ""
    if bundle.farm is not None:
        farm = f"\n=== FARM ===\n{bundle.farm.summary()}\n=== END FARM ===\n"
    extra = "".join(f"\n=== DOCUMENT {name} ===\n{text.rstrip()}\n=== END DOCUMENT {name} ===\n"
                    for name, text in bundle.extra_docs)
    rewrite = ""
    if prior_error_log is not None:
        rewrite = ("\nYour previous plan was rejected by the validator. Rewrite the whole plan so that "
                   f"it fixes every error below.\n{ERRORS_START}\n{prior_error_log}\n{ERRORS_END}\n")
    template = Template(PROMPT_TEMPLATE.read_text(encoding="utf-8"))
    return template.substitute(robots=render_context(bundle.pools).rstrip(), farm=farm, extra=extra,
                               query=query, rewrite=rewrite)


_FENCE = re.compile(r"```(?:xml)?\s*(.*?)```", re.DOTALL)


def extract_xml(response: str) -> str:
    """Pull the XML document out of a reply that may carry fences or chatter."""
    m = _FENCE.search(response)
    text = m.group(1) if m else response
    for tag in ("mission", "no_mission"):
        start = text.find(f"<{tag}")
        end = text.rfind(f"</{tag}>")
        if start >= 0 and end > start:
            return text[start:end + len(tag) + 3].strip()
    return text.strip()


def refusal_explanation(xml: str) -> str | None:
    """The explanation if *xml* is a ``<no_mission>`` sentinel, else None."""
    if "<no_mission" not in xml:
        return None
    try:
        root = _safe_fromstring(xml, forbid_dtd=True)
    except (ET.ParseError, DefusedXmlException):
        return None
    if root.tag != "no_mission":
        return None
    return " ".join("".join(root.itertext()).split()) or DEFAULT_REFUSAL


def plan(bundle: ContextBundle, query: str, gateway: LlmGateway, config: GatewayConfig) -> PlanningResult:
    """Ask for a plan and request rewrites until it validates or attempts run out."""
    transcript: list[tuple[str, str]] = []
    error_log: str | None = None
    report = ValidationReport()
    for attempt in range(1, config.max_attempts + 1):
        prompt = build_prompt(bundle, query, error_log)
        response = gateway.complete(prompt)
        transcript.append((prompt, response))
        xml = extract_xml(response)
        explanation = refusal_explanation(xml)
        if explanation is not None:
            return PlanningResult(Refused(explanation), transcript)
        mission, report = validate(xml, bundle.pools)
        if mission is not None:
            return PlanningResult(Approved(mission, attempt, xml), transcript)
        error_log = render_error_log(report)
    return PlanningResult(Exhausted(report), transcript)
