"""Command-line entry point: plan, validate, execute, serve, e2e.

Exit codes: 0 ok, 1 config/IO error, 2 planner refused, 3 rewrite attempts
exhausted, 4 plan failed validation, 5 mission failed, 6 transport error.
"""

from __future__ import annotations

import argparse
import json
import re
import signal
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from one4all.executor import ExecutionTrace, run
from one4all.gateway import (
    API_KEY_ENV,
    DEFAULT_ENDPOINT,
    AuthError,
    GatewayConfig,
    GatewayUnavailable,
    LiveGateway,
    MockGateway,
    ScriptExhausted,
)
from one4all.plan import serialize_plan
from one4all.planner import Approved, ContextBundle, Refused, plan
from one4all.schema import CORPUS_DIR, ActionPool, SchemaError, load_pools
from one4all.service import ExecutorService
from one4all.simworld import GeoJsonError, backend_for, load_farm, load_world
from one4all.validator import render_error_log, validate
from one4all.wire import Client, WireError, parse_addr

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_REFUSED = 2
EXIT_EXHAUSTED = 3
EXIT_INVALID = 4
EXIT_MISSION_FAILED = 5
EXIT_TRANSPORT = 6

DEFAULTS: dict[str, Any] = {
    "context": str(CORPUS_DIR),
    "scene": "scene.json",
    "gateway": "mock",
    "script": None,
    "endpoint": DEFAULT_ENDPOINT,
    "model": GatewayConfig.model,
    "temperature": GatewayConfig.temperature,
    "max_tokens": GatewayConfig.max_tokens,
    "max_attempts": GatewayConfig.max_attempts,
    "seed": 0,
    "addr": "127.0.0.1:7447",
    "output": "out",
    "wait": 30.0,
    "task_timeout": 60.0,
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    context: Path
    scene: str
    gateway: str
    script: Path | None
    endpoint: str
    model: str
    temperature: float
    max_tokens: int
    max_attempts: int
    seed: int
    addr: str
    output: Path
    wait: float
    task_timeout: float

    def gateway_config(self) -> GatewayConfig:
        try:
            return GatewayConfig(self.model, self.temperature, self.max_tokens, self.max_attempts, self.endpoint)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def pools(self) -> list[ActionPool]:
        schema_dir = self.context / "schemas"
        paths = sorted(schema_dir.glob("*.xml")) if schema_dir.is_dir() else []
        if not paths:
            raise ConfigError(f"no schema files under {schema_dir}")
        try:
            return load_pools(paths)
        except (OSError, SchemaError) as exc:
            raise ConfigError(f"cannot load schemas: {exc}") from None

    def bundle(self) -> ContextBundle:
        farm_path = self.context / "worlds" / "farm.geojson"
        farm = None
        if farm_path.exists():
            try:
                farm = load_farm(farm_path.read_bytes())
            except (OSError, GeoJsonError) as exc:
                raise ConfigError(f"cannot load farm: {exc}") from None
        return ContextBundle(tuple(self.pools()), farm)

    def world(self):
        try:
            return load_world(self.context, self.seed, self.scene)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load world: {exc}") from None

    def make_gateway(self):
        if self.gateway == "mock":
            script = self.script or self.context / "scripts" / "mock.json"
            try:
                return MockGateway.from_file(script)
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot load mock script {script}: {exc}") from None
        if self.gateway == "live":
            if not self.endpoint:
                raise ConfigError("live mode needs --endpoint")
            gw = LiveGateway(self.gateway_config())
            try:
                gw._api_key()
            except AuthError as exc:
                raise ConfigError(str(exc)) from None
            return gw
        raise ConfigError(f"unknown gateway mode {self.gateway!r}")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values: dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                file_values = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = sorted(set(file_values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(DEFAULTS)
    merged.update(file_values)
    merged.update({k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None})
    try:
        return RunConfig(
            context=Path(merged["context"]), scene=str(merged["scene"]), gateway=str(merged["gateway"]),
            script=Path(merged["script"]) if merged["script"] else None, endpoint=str(merged["endpoint"]),
            model=str(merged["model"]), temperature=float(merged["temperature"]),
            max_tokens=int(merged["max_tokens"]), max_attempts=int(merged["max_attempts"]),
            seed=int(merged["seed"]), addr=str(merged["addr"]), output=Path(merged["output"]),
            wait=float(merged["wait"]), task_timeout=float(merged["task_timeout"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_")[:48].lower() or "query"


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def summarize(trace: ExecutionTrace) -> str:
    lines = [f"mission {trace.mission_id} on {trace.robot_id} (seed {trace.seed})"]
    for e in trace.entries:
        lines.append(f"  task {e.task_id} [{e.action}] -> {e.outcome.label}  t={e.timestamp:.2f}s")
    for d in trace.decisions:
        lines.append(f"  branch on {d['on']}={d['label']} -> {d['taken'] or 'none'}")
    if trace.fault:
        lines.append(f"  fault: {trace.fault}")
    lines.append(f"tasks run: {len(trace.entries)}, branches taken: {len(trace.decisions)}, "
                 f"final status: {trace.final_status}")
    return "\n".join(lines)


def _write_transcript(cfg: RunConfig, name: str, transcript: list[tuple[str, str]]) -> Path:
    path = cfg.output / "transcripts" / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([{"prompt": p, "response": r} for p, r in transcript], indent=2) + "\n",
                    encoding="utf-8")
    return path


def _plan(cfg: RunConfig, query: str) -> tuple[int, Any]:
    """Run the planner; returns (exit code, Approved outcome or None)."""
    bundle = cfg.bundle()
    gateway = cfg.make_gateway()
    try:
        result = plan(bundle, query, gateway, cfg.gateway_config())
    except ScriptExhausted as exc:
        raise ConfigError(str(exc)) from None
    except AuthError as exc:
        raise ConfigError(str(exc)) from None
    except GatewayUnavailable as exc:
        _err(f"gateway unavailable: {exc}")
        return EXIT_TRANSPORT, None
    outcome = result.outcome
    name = outcome.plan.mission_id if isinstance(outcome, Approved) else _slug(query)
    _write_transcript(cfg, name, result.transcript)
    if isinstance(outcome, Approved):
        return EXIT_OK, outcome
    if isinstance(outcome, Refused):
        _err(f"no mission: {outcome.explanation}")
        return EXIT_REFUSED, None
    _err(f"no valid plan after {cfg.max_attempts} attempts; last errors:")
    _err(render_error_log(outcome.last_report))
    return EXIT_EXHAUSTED, None


def cmd_plan(args, cfg: RunConfig) -> int:
    code, approved = _plan(cfg, args.query)
    if approved is not None:
        print(serialize_plan(approved.plan))
    return code


def _read_plan(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read plan {path}: {exc}") from None


def cmd_validate(args, cfg: RunConfig) -> int:
    xml = _read_plan(args.plan_file)
    mission, report = validate(xml, cfg.pools())
    if mission is None:
        print(render_error_log(report))
        return EXIT_INVALID
    print(f"approved: mission {mission.mission_id} for {mission.robot_id}")
    return EXIT_OK


def cmd_execute(args, cfg: RunConfig) -> int:
    xml = _read_plan(args.plan_file)
    pools = cfg.pools()
    mission, report = validate(xml, pools)
    if mission is None:
        print(render_error_log(report))
        return EXIT_INVALID
    pool = next(p for p in pools if p.robot_id == mission.robot_id)
    trace = run(mission, backend_for(pool), cfg.world(), task_timeout=cfg.task_timeout)
    path = trace.write(cfg.output)
    print(summarize(trace))
    print(f"trace: {path}")
    return EXIT_OK if trace.final_status == "completed" else EXIT_MISSION_FAILED


def _service(cfg: RunConfig) -> ExecutorService:
    pools = cfg.pools()
    template = cfg.world()
    return ExecutorService(pools, lambda _plan: template.clone(), backend_for, out_dir=cfg.output,
                           task_timeout=cfg.task_timeout)


def cmd_serve(args, cfg: RunConfig) -> int:
    service = _service(cfg)
    host, port = parse_addr(cfg.addr)
    try:
        server = service.serve(host, port)
    except OSError as exc:
        _err(f"cannot listen on {cfg.addr}: {exc}")
        return EXIT_CONFIG
    _err(f"executor listening on {host}:{server.port}")
    stop = threading.Event()
    previous = {sig: signal.signal(sig, lambda *_: stop.set()) for sig in (signal.SIGINT, signal.SIGTERM)}
    try:
        while not stop.wait(0.2):
            pass
    finally:
        for sig, handler in previous.items():
            signal.signal(sig, handler)
        server.stop()
        service.close()
    return EXIT_OK


def cmd_e2e(args, cfg: RunConfig) -> int:
    code, approved = _plan(cfg, args.query)
    if approved is None:
        return code
    server = service = None
    host, port = parse_addr(cfg.addr)
    if args.spawn:
        service = _service(cfg)
        try:
            server = service.serve("127.0.0.1", 0)
        except OSError as exc:
            _err(f"cannot start executor: {exc}")
            return EXIT_CONFIG
        host, port = "127.0.0.1", server.port
    try:
        with Client(host, port) as client:
            ack = client.submit(approved.plan)
            if not ack.accepted:
                _err(f"executor rejected mission {ack.mission_id}: {ack.reason}")
                return EXIT_INVALID
            deadline = time.monotonic() + cfg.wait
            report = client.fetch_report(ack.mission_id)
            while report.status == "unknown":
                if time.monotonic() > deadline:
                    _err(f"no report for {ack.mission_id} within {cfg.wait:g} s")
                    return EXIT_TRANSPORT
                time.sleep(0.02)
                report = client.fetch_report(ack.mission_id)
    except WireError as exc:
        _err(f"transport error: {type(exc).__name__}: {exc}")
        return EXIT_TRANSPORT
    finally:
        if server is not None:
            server.stop()
        if service is not None:
            service.close()
    trace = ExecutionTrace.from_records(report.trace)
    path = trace.write(cfg.output)
    print(f"report: {report.status}")
    print(summarize(trace))
    print(f"trace: {path}")
    return EXIT_OK if report.status == "completed" else EXIT_MISSION_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with defaults for any of these options")
    common.add_argument("--context", help="directory holding schemas/, worlds/ and scripts/")
    common.add_argument("--scene", help="scene file name under <context>/worlds (or absolute path)")
    common.add_argument("--output", help="directory for transcripts and traces")
    common.add_argument("--seed", type=int)
    common.add_argument("--task-timeout", dest="task_timeout", type=float)

    gw = argparse.ArgumentParser(add_help=False)
    gw.add_argument("--gateway", choices=["mock", "live"])
    gw.add_argument("--script", help="mock gateway script (JSON)")
    gw.add_argument("--endpoint")
    gw.add_argument("--model")
    gw.add_argument("--temperature", type=float)
    gw.add_argument("--max-tokens", dest="max_tokens", type=int)
    gw.add_argument("--max-attempts", dest="max_attempts", type=int)

    net = argparse.ArgumentParser(add_help=False)
    net.add_argument("--addr", help="executor HOST:PORT (default 127.0.0.1:7447)")

    parser = argparse.ArgumentParser(prog="one4all", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plan", parents=[common, gw], help="turn a query into an approved plan")
    p.add_argument("query")
    p.set_defaults(func=cmd_plan)
    p = sub.add_parser("validate", parents=[common], help="check a plan file against the schemas")
    p.add_argument("plan_file")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("execute", parents=[common], help="run a plan file in the local simulator")
    p.add_argument("plan_file")
    p.set_defaults(func=cmd_execute)
    p = sub.add_parser("serve", parents=[common, net], help="run the executor service")
    p.set_defaults(func=cmd_serve)
    p = sub.add_parser("e2e", parents=[common, gw, net], help="plan, submit over TCP, fetch the report")
    p.add_argument("query")
    p.add_argument("--spawn", action="store_true", help="start an in-process executor on a free port")
    p.add_argument("--wait", type=float, help="seconds to wait for the mission report")
    p.set_defaults(func=cmd_e2e)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
