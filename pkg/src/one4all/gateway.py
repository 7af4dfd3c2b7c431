"""LLM gateways: a deterministic scripted mock and a live chat-completion client."""

from __future__ import annotations

import json
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

QUERY_START = "=== MISSION QUERY ==="
QUERY_END = "=== END MISSION QUERY ==="
ERRORS_START = "=== VALIDATION ERRORS FROM YOUR PREVIOUS ATTEMPT ==="
ERRORS_END = "=== END VALIDATION ERRORS ==="
API_KEY_ENV = "ONE4ALL_API_KEY"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
REFUSAL_TEXT = "<no_mission>I do not understand this request well enough to plan a mission. " \
               "Please name the robot or describe the task in more detail.</no_mission>"


class GatewayError(RuntimeError):
    pass


class ScriptExhausted(GatewayError):
    """The mock has no unused script entry matching the query."""


class GatewayUnavailable(GatewayError):
    """The live endpoint could not be reached (after retries)."""


class AuthError(GatewayError):
    """Missing or rejected credentials."""


class LlmGateway(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass(frozen=True)
class GatewayConfig:
    model: str = "gpt-4o-2024-11-20"
    temperature: float = 0.2
    max_tokens: int = 4096
    max_attempts: int = 3
    endpoint: str = DEFAULT_ENDPOINT

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")


def _between(text: str, start: str, end: str) -> str | None:
    i = text.find(start)
    if i < 0:
        return None
    j = text.find(end, i + len(start))
    return text[i + len(start): j if j >= 0 else len(text)].strip()


def extract_query(prompt: str) -> str | None:
    return _between(prompt, QUERY_START, QUERY_END)


def extract_error_log(prompt: str) -> str | None:
    return _between(prompt, ERRORS_START, ERRORS_END)


# -- mock --------------------------------------------------------------------

# fault tag -> validator code whose presence in a rewrite request makes the
# mock "repair" its answer
FAULT_CODES = {
    "malformed_xml": "XML_SYNTAX",
    "prose": "XML_SYNTAX",
    "unknown_action": "UNKNOWN_ACTION",
    "missing_param": "MISSING_PARAM",
    "unknown_robot": "UNKNOWN_ROBOT",
    "refuse": None,
}

_FALLBACK_PLAN = '<mission id="scripted" robot="kortex"><sequence><task id="t1" action="capture_image"/></sequence></mission>'


def apply_fault(fault: str, xml: str | None) -> str:
    """Corrupt a plan the way a sloppy model might."""
    base = xml or _FALLBACK_PLAN
    if fault == "malformed_xml":
        return base[: max(1, len(base) // 2)]
    if fault == "prose":
        return "Sure! The robot should look for the object and then scan it."
    if fault == "unknown_action":
        return re.sub(r'action="[^"]*"', 'action="fly"', base, count=1)
    if fault == "missing_param":
        return re.sub(r"<param\b[^>]*>[^<]*</param>|<param\b[^>]*/>", "", base, count=1)
    if fault == "unknown_robot":
        return re.sub(r'robot="[^"]*"', 'robot="drone"', base, count=1)
    if fault == "refuse":
        return REFUSAL_TEXT
    raise ValueError(f"unknown fault tag {fault!r}")


@dataclass
class ScriptEntry:
    """One scripted reply.

    ``match`` is a substring of the mission query (``*`` matches anything).
    With only ``response`` the plan text is returned; with only ``fault`` a
    corrupted answer is returned; with both, the corrupted answer is returned
    until a rewrite request quotes the error code the fault provokes, then
    the clean response ("repair mode") and only then is the entry used up.
    ``repeat`` entries are never used up.
    """

    match: str
    response: str | None = None
    fault: str | None = None
    repeat: bool = False

    def __post_init__(self) -> None:
        if self.response is None and self.fault is None:
            raise ValueError(f"script entry {self.match!r} needs a response or a fault")
        if self.fault is not None and self.fault not in FAULT_CODES:
            raise ValueError(f"unknown fault tag {self.fault!r}")

    def matches(self, query: str) -> bool:
        return self.match == "*" or self.match in query

    def repaired(self, error_log: str | None) -> bool:
        code = FAULT_CODES.get(self.fault or "")
        return self.response is not None and bool(error_log and code and code in error_log)

    def reply(self, error_log: str | None) -> str:
        if self.fault is None:
            return self.response or ""
        if self.repaired(error_log):
            return self.response or ""
        return apply_fault(self.fault, self.response)

    def spent_by(self, error_log: str | None) -> bool:
        """Whether answering now uses the entry up; repair entries last until repaired."""
        if self.repeat:
            return False
        if self.fault is not None and self.response is not None:
            return self.repaired(error_log)
        return True


@dataclass
class MockGateway:
    """Deterministic stand-in for the LLM, driven by a script."""

    entries: list[ScriptEntry]
    calls: list[str] = field(default_factory=list)
    _used: set[int] = field(default_factory=set, repr=False)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockGateway":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        raw = data["entries"] if isinstance(data, dict) else data
        entries = []
        for item in raw:
            response = None
            if item.get("response") is not None:
                response = (path.parent / item["response"]).read_text(encoding="utf-8")
            elif item.get("text") is not None:
                response = item["text"]
            entries.append(ScriptEntry(item["match"], response, item.get("fault"), bool(item.get("repeat", False))))
        return cls(entries)

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        self.calls.append(prompt)
        query = extract_query(prompt)
        query = prompt if query is None else query
        error_log = extract_error_log(prompt)
        for i, entry in enumerate(self.entries):
            if i in self._used or not entry.matches(query):
                continue
            if entry.spent_by(error_log):
                self._used.add(i)
            return entry.reply(error_log)
        raise ScriptExhausted(f"no script entry left for query {query[:80]!r}")


# -- live --------------------------------------------------------------------

class LiveGateway:
    """One chat completion per call against an OpenAI-compatible endpoint."""

    def __init__(self, config: GatewayConfig, *, api_key_env: str = API_KEY_ENV,
                 retries: int = 2, timeout: float = 120.0, backoff: float = 2.0):
        self.config = config
        self.api_key_env = api_key_env
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self.exchanges: list[dict[str, Any]] = []

    def _api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "").strip()
        if not key:
            raise AuthError(f"set {self.api_key_env} to use the live gateway")
        return key

    def request_body(self, prompt: str) -> dict[str, Any]:
        return {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        key = self._api_key()
        body = self.request_body(prompt)
        record: dict[str, Any] = {"endpoint": self.config.endpoint, "request": body,
                                  "headers": {"Authorization": "Bearer ***", "Content-Type": "application/json"}}
        self.exchanges.append(record)
        req = urllib.request.Request(
            self.config.endpoint, data=json.dumps(body).encode("utf-8"), method="POST",
            headers={"Authorization": f"Bearer {key}", "Content-Type": "application/json"})
        payload = None
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                break
            except urllib.error.HTTPError as exc:
                if exc.code in (401, 403):
                    record["error"] = f"HTTP {exc.code}"
                    raise AuthError(f"endpoint rejected credentials (HTTP {exc.code})") from exc
                last_error = exc
                if exc.code < 500 and exc.code != 429:
                    break
            except (OSError, json.JSONDecodeError) as exc:
                last_error = exc
            if attempt < self.retries:
                time.sleep(self.backoff * (attempt + 1))
        if payload is None:
            record["error"] = str(last_error)
            raise GatewayUnavailable(f"chat completion failed: {last_error}")
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            record["error"] = "malformed response"
            raise GatewayUnavailable("chat completion response has no message content") from exc
        record["response"] = text
        return text
