import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import PLAN_DIR, POOL, TreeGen, reference_run
from one4all.executor import (
    ExecutionTrace,
    MissingOutcome,
    ScriptedBackend,
    Status,
    context_for,
    interpret,
    replay,
    run,
)
from one4all.outcome import TaskOutcome
from one4all.plan import Conditional, MissionPlan, Sequence, Task, parse_plan
from one4all.schema import CORPUS_DIR
from one4all.simworld import arm_backend, load_world

KORTEX = POOL["kortex"]
PISTACHIO = parse_plan((PLAN_DIR / "pistachio_nbv_conditionals.xml").read_text())


def _plan(*children) -> MissionPlan:
    return MissionPlan("m", "kortex", Sequence(tuple(children)))


def _cap(tid):
    return Task(tid, "capture_image")


def _interp(plan, labels):
    dispatched = []

    def dispatch(path, task):
        dispatched.append(task.id)
        return labels[task.id]

    status = interpret(plan.root, context_for(plan, dispatch))
    return status, dispatched


def test_sequence_all_success():
    status, seen = _interp(_plan(_cap("a"), _cap("b")), {"a": "success", "b": "success"})
    assert status is Status.SUCCEEDED and seen == ["a", "b"]


def test_unhandled_failure_stops_sequence():
    status, seen = _interp(_plan(_cap("a"), _cap("b")), {"a": "failure", "b": "success"})
    assert status is Status.FAILED and seen == ["a"]


def test_conditional_without_match_succeeds_vacuously():
    plan = _plan(_cap("a"), Conditional("a", {"success": _cap("b")}), _cap("c"))
    status, seen = _interp(plan, {"a": "failure", "b": "success", "c": "success"})
    assert status is Status.SUCCEEDED and seen == ["a", "c"]


def test_else_branch_and_branch_status_propagates():
    plan = _plan(_cap("a"), Conditional("a", {"success": _cap("b")}, _cap("e")), _cap("c"))
    status, seen = _interp(plan, {"a": "failure", "b": "success", "e": "failure", "c": "success"})
    assert status is Status.FAILED and seen == ["a", "e"]


def test_missing_outcome_asserted():
    plan = _plan(Conditional("zz", {"success": _cap("b")}))
    with pytest.raises(MissingOutcome):
        _interp(plan, {"b": "success"})


def _exhaustive_check(root):
    tasks = [n for n in _iter_tasks(root)]
    plan = MissionPlan("m", "kortex", root)
    for combo in itertools.product(("success", "failure"), repeat=len(tasks)):
        labels = dict(zip([t.id for t in tasks], combo))
        status, seen = _interp(plan, labels)
        ok, expected = reference_run(root, labels)
        assert seen == expected, (root, labels)
        assert (status is Status.SUCCEEDED) == ok


def _iter_tasks(node):
    if isinstance(node, Task):
        yield node
    elif isinstance(node, Sequence):
        for c in node.children:
            yield from _iter_tasks(c)
    else:
        for c in node.branches.values():
            yield from _iter_tasks(c)
        if node.else_branch is not None:
            yield from _iter_tasks(node.else_branch)


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_interpreter_matches_reference_evaluator(rng):
    _exhaustive_check(TreeGen(rng).tree())


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False), st.data())
def test_run_trace_matches_reference_and_replays(rng, data):
    root = TreeGen(rng).tree()
    plan = MissionPlan("m", "kortex", root)
    ids = [t.id for t in _iter_tasks(root)]
    labels = {i: data.draw(st.sampled_from(["success", "failure"])) for i in ids}
    ok, expected = reference_run(root, labels)
    backend = ScriptedBackend(KORTEX, [labels[i] for i in expected])
    trace = run(plan, backend, None)
    assert trace.dispatched() == expected
    assert trace.final_status == ("completed" if ok else "failed")
    again = replay(plan, trace, KORTEX)
    assert again.dispatched() == trace.dispatched() and again.decisions == trace.decisions


def test_pistachio_mission_hand_trace_all_success():
    trace = run(PISTACHIO, ScriptedBackend(KORTEX), None)
    # detect -> (no failure branch) -> nbv -> success branch: pick -> random move -> pick leaf -> home
    assert trace.dispatched() == ["find_pistachio", "scan_pistachio", "pick_pistachio", "wander_again",
                                  "grab_leaf", "return_home"]
    assert trace.final_status == "completed"


def test_pistachio_mission_first_detect_fails():
    backend = ScriptedBackend(KORTEX, {"detect_object": ["failure"]})
    trace = run(PISTACHIO, backend, None)
    assert trace.dispatched()[:4] == ["find_pistachio", "wander", "scan_pistachio", "pick_pistachio"]
    taken = [(d["on"], d["taken"]) for d in trace.decisions]
    assert taken[:2] == [("find_pistachio", "failure"), ("scan_pistachio", "success")]


def test_pistachio_mission_in_simulation_is_deterministic():
    world = load_world(CORPUS_DIR, seed=7)
    a = run(PISTACHIO, arm_backend(), world.clone())
    b = run(PISTACHIO, arm_backend(), world.clone())
    assert a.to_ndjson() == b.to_ndjson()
    # one gripper: the leaf pick fails while the pistachio is held; the plan consumes that failure
    assert a.dispatched() == ["find_pistachio", "scan_pistachio", "pick_pistachio", "wander_again", "grab_leaf"]
    assert a.labels()[-1] == "failure" and a.final_status == "completed"


def test_empty_plan():
    trace = run(_plan(), ScriptedBackend(KORTEX), None)
    assert trace.entries == [] and trace.final_status == "completed"


def test_backend_crash_is_recorded():
    class Crashy(ScriptedBackend):
        def execute(self, action, params, world):
            if action == "pick":
                raise RuntimeError("gripper jammed")
            return super().execute(action, params, world)

    plan = _plan(_cap("a"), Task("b", "pick", {"target_object": "x"}), _cap("c"))
    trace = run(plan, Crashy(KORTEX), None)
    assert trace.final_status == "failed"
    assert trace.dispatched() == ["a", "b"]
    assert "gripper jammed" in trace.fault


def test_timeout_maps_to_failure():
    class Slow(ScriptedBackend):
        def execute(self, action, params, world):
            return TaskOutcome("", "success", None, 100.0)

    trace = run(_plan(_cap("a"), _cap("b")), Slow(KORTEX), None, task_timeout=60.0)
    assert trace.labels() == ["failure"] and trace.entries[0].outcome.duration == 60.0


def test_robot_mismatch_rejected():
    with pytest.raises(ValueError):
        run(MissionPlan("m", "husky", Sequence()), ScriptedBackend(KORTEX), None)


def test_trace_ndjson_round_trip(tmp_path):
    trace = run(PISTACHIO, arm_backend(), load_world(CORPUS_DIR, seed=3))
    text = trace.to_ndjson()
    back = ExecutionTrace.from_ndjson(text)
    assert back.to_ndjson() == text
    lines = text.splitlines()
    assert '"type": "header"' in lines[0] and '"type": "status"' in lines[-1]
    path = trace.write(tmp_path)
    assert path == tmp_path / "traces" / f"{PISTACHIO.mission_id}.ndjson"
    assert path.read_text() == text


def test_trace_entries_have_state_and_increasing_time():
    trace = run(PISTACHIO, arm_backend(), load_world(CORPUS_DIR, seed=1))
    times = [e.timestamp for e in trace.entries]
    assert times == sorted(times)
    assert all("arm" in e.state for e in trace.entries)


def test_exhaustive_on_seeded_trees():
    rng = random.Random(2024)
    for _ in range(50):
        _exhaustive_check(TreeGen(rng).tree())
