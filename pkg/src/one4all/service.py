"""Executor service: accepts plans over the wire, runs them, keeps reports.

Missions for the same robot run strictly one after another on that robot's
worker thread; different robots run side by side. Status is assigned only
when a mission finishes, so in-flight and unknown ids both report
``unknown``.
"""

from __future__ import annotations

import logging
import queue
import threading
from pathlib import Path
from typing import Any, Callable, Sequence

from one4all.executor import DEFAULT_TASK_TIMEOUT, RobotBackend, run
from one4all.plan import MissionPlan
from one4all.schema import ActionPool
from one4all.validator import render_error_log, validate
from one4all.wire import Ack, FetchReport, Message, Report, SubmitPlan, WireServer

log = logging.getLogger(__name__)

WorldFactory = Callable[[MissionPlan], Any]
BackendFactory = Callable[[ActionPool], RobotBackend]


class ExecutorService:
    def __init__(self, pools: Sequence[ActionPool], world_factory: WorldFactory,
                 backend_factory: BackendFactory, *, out_dir: str | Path | None = None,
                 task_timeout: float = DEFAULT_TASK_TIMEOUT):
        self.pools = list(pools)
        self._pool_by_robot = {p.robot_id: p for p in self.pools}
        self.world_factory = world_factory
        self.backend_factory = backend_factory
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.task_timeout = task_timeout
        self._lock = threading.Lock()
        self._seen: set[str] = set()
        self._reports: dict[str, Report] = {}
        self._queues: dict[str, queue.Queue] = {}
        self._workers: dict[str, threading.Thread] = {}
        self._idle = threading.Condition(self._lock)
        self._pending = 0

    # -- message handling --------------------------------------------------------

    def respond(self, msg: Message) -> Message:
        if isinstance(msg, SubmitPlan):
            return self.submit(msg)
        if isinstance(msg, FetchReport):
            return self.report(msg.mission_id)
        raise TypeError(f"service does not answer {type(msg).__name__}")

    def submit(self, msg: SubmitPlan) -> Ack:
        plan, report = validate(msg.plan_xml, self.pools)
        if plan is None:
            return Ack(msg.mission_id, False, render_error_log(report))
        if plan.mission_id != msg.mission_id:
            return Ack(msg.mission_id, False,
                       f"mission id {msg.mission_id!r} does not match plan id {plan.mission_id!r}")
        with self._lock:
            if msg.mission_id in self._seen:
                return Ack(msg.mission_id, False, f"duplicate mission id {msg.mission_id!r}")
            self._seen.add(msg.mission_id)
            self._pending += 1
            self._queue_for(plan.robot_id).put(plan)
        return Ack(msg.mission_id, True, None)

    def report(self, mission_id: str) -> Report:
        with self._lock:
            return self._reports.get(mission_id) or Report(mission_id, "unknown", [])

    # -- workers -----------------------------------------------------------------

    def _queue_for(self, robot_id: str) -> queue.Queue:
        # caller holds self._lock
        q = self._queues.get(robot_id)
        if q is None:
            q = self._queues[robot_id] = queue.Queue()
            t = threading.Thread(target=self._work, args=(robot_id, q), name=f"executor-{robot_id}", daemon=True)
            self._workers[robot_id] = t
            t.start()
        return q

    def _work(self, robot_id: str, q: queue.Queue) -> None:
        pool = self._pool_by_robot[robot_id]
        while True:
            plan = q.get()
            if plan is None:
                return
            try:
                report = self._execute(plan, pool)
            except Exception as exc:  # noqa: BLE001 - keep the worker alive
                log.exception("mission %s crashed", plan.mission_id)
                report = Report(plan.mission_id, "failed", [
                    {"type": "header", "mission_id": plan.mission_id, "robot_id": robot_id, "seed": None},
                    {"type": "status", "final_status": "failed", "fault": f"{type(exc).__name__}: {exc}"}])
            with self._lock:
                self._reports[plan.mission_id] = report
                self._pending -= 1
                self._idle.notify_all()

    def _execute(self, plan: MissionPlan, pool: ActionPool) -> Report:
        trace = run(plan, self.backend_factory(pool), self.world_factory(plan), task_timeout=self.task_timeout)
        if self.out_dir is not None:
            trace.write(self.out_dir)
        return Report(plan.mission_id, trace.final_status or "failed", trace.to_records())

    def wait_idle(self, timeout: float | None = None) -> bool:
        with self._lock:
            return self._idle.wait_for(lambda: self._pending == 0, timeout)

    def close(self) -> None:
        with self._lock:
            for q in self._queues.values():
                q.put(None)
            workers = list(self._workers.values())
        for t in workers:
            t.join(timeout=5)

    def serve(self, host: str, port: int) -> WireServer:
        """Bind and start answering on a background thread."""
        return WireServer((host, port), self.respond).start()
