"""Shared test utilities: generators, an independent reference evaluator, mutators."""

from __future__ import annotations

import math
import random
from dataclasses import replace

from one4all.plan import Conditional, MissionPlan, Sequence, Task, walk
from one4all.schema import CORPUS_DIR, ActionPool, ParamKind, ParamSpec, builtin_pool

POOLS = (builtin_pool("husky"), builtin_pool("kortex"))
POOL = {p.robot_id: p for p in POOLS}
PLAN_DIR = CORPUS_DIR / "plans"
PLAN_FILES = sorted(PLAN_DIR.glob("*.xml"))


# -- reference evaluator ---------------------------------------------------------
# Written from the textual semantics only; shares nothing with the executor.

def reference_run(root, labels):
    """Return (succeeded, dispatched task ids) for outcome *labels* (id -> label)."""
    consumed = set()

    def scan(n):
        if isinstance(n, Conditional):
            consumed.add(n.on)
            kids = list(n.branches.values()) + ([n.else_branch] if n.else_branch is not None else [])
        else:
            kids = n.children if isinstance(n, Sequence) else ()
        for k in kids:
            scan(k)

    scan(root)
    seen, out = {}, []

    def ev(n):
        if isinstance(n, Task):
            out.append(n.id)
            seen[n.id] = labels[n.id]
            return labels[n.id] != "failure" or n.id in consumed
        if isinstance(n, Sequence):
            return all(ev(c) for c in n.children)
        b = n.branches.get(seen[n.on], n.else_branch)
        return True if b is None else ev(b)

    return ev(root), out


# -- generators ------------------------------------------------------------------

def _unconditional(node):
    if isinstance(node, Task):
        return [node.id]
    if isinstance(node, Sequence):
        return [t for c in node.children for t in _unconditional(c)]
    return []


class TreeGen:
    """Random behavior trees whose conditionals only reference tasks sure to have run."""

    def __init__(self, rng: random.Random, pool: ActionPool | None = None,
                 max_tasks: int = 6, max_conds: int = 3, weird_text: bool = False):
        self.rng = rng
        self.pool = pool
        self.tasks_left = max_tasks
        self.conds_left = max_conds
        self.weird_text = weird_text
        self.n = 0
        self.actions: dict[str, str] = {}

    def tree(self) -> Sequence:
        return self.sequence(0, frozenset())

    def sequence(self, depth: int, done: frozenset) -> Sequence:
        children = []
        acc = set(done)
        for _ in range(self.rng.randint(0, 4)):
            child = self.node(depth + 1, frozenset(acc))
            if child is None:
                break
            children.append(child)
            acc.update(_unconditional(child))
        return Sequence(tuple(children))

    def node(self, depth: int, done: frozenset):
        options = []
        if self.tasks_left:
            options += ["task"] * 3
        if self.conds_left and done:
            options += ["cond"] * 2
        if depth < 4:
            options.append("seq")
        if not options:
            return None
        kind = self.rng.choice(options)
        if kind == "task":
            return self.task()
        if kind == "seq":
            return self.sequence(depth, done)
        self.conds_left -= 1
        on = self.rng.choice(sorted(done))
        labels = self.outcomes(on)
        chosen = [l for l in labels if self.rng.random() < 0.5]
        branches = {l: self.branch(depth, done) for l in chosen}
        else_branch = self.branch(depth, done) if (not branches or self.rng.random() < 0.4) else None
        return Conditional(on, branches, else_branch)

    def branch(self, depth: int, done: frozenset):
        if self.tasks_left and self.rng.random() < 0.5:
            return self.task()
        return self.sequence(depth, done)

    def outcomes(self, task_id: str):
        if self.pool is None:
            return ["success", "failure"]
        return list(self.pool.actions[self.actions[task_id]].outcomes)

    def task(self) -> Task:
        self.tasks_left -= 1
        self.n += 1
        tid = f"t{self.n}"
        if self.pool is None:
            return Task(tid, "capture_image", {})
        action = self.rng.choice(sorted(self.pool.actions))
        self.actions[tid] = action
        spec = self.pool.actions[action]
        params = {}
        for p in spec.params:
            if p.required or self.rng.random() < 0.5:
                params[p.name] = self.value(p)
        return Task(tid, action, params)

    def value(self, p: ParamSpec) -> str:
        r = self.rng
        lo = p.min if p.min is not None else -1e3
        hi = p.max if p.max is not None else 1e3
        if p.kind is ParamKind.FLOAT:
            return repr(r.uniform(lo, hi))
        if p.kind is ParamKind.INT:
            return str(r.randint(math.ceil(lo), math.floor(hi)))
        if p.kind is ParamKind.BOOL:
            return r.choice(["true", "false"])
        if p.kind is ParamKind.ENUM:
            return r.choice(list(p.allowed_values))
        if p.kind is ParamKind.GPS_POINT:
            return f"{r.uniform(-90, 90)!r},{r.uniform(-180, 180)!r}"
        if p.kind is ParamKind.POSE6D:
            q = [r.gauss(0, 1) for _ in range(4)]
            n = math.sqrt(sum(v * v for v in q)) or 1.0
            vals = [r.uniform(-0.5, 0.5) for _ in range(3)] + [v / n for v in q]
            return ",".join(repr(v) for v in vals)
        alphabet = "abcdefghij klmnop_-" + ("<>&\"'éü\t" if self.weird_text else "")
        return "".join(r.choice(alphabet) for _ in range(r.randint(1, 12))).strip() or "x"


def random_plan(rng: random.Random, robot: str | None = None, **kw) -> MissionPlan:
    robot = robot or rng.choice(sorted(POOL))
    gen = TreeGen(rng, POOL[robot], **kw)
    root = gen.tree()
    query = rng.choice(["", "Find pistachio and take NBV", "check <trees> & report"])
    return MissionPlan(f"m{rng.randrange(10**6)}", robot, root, query)


# -- independent soundness checker -------------------------------------------------

def naive_check(plan: MissionPlan, pool: ActionPool) -> list[str]:
    """Deliberately simple re-implementation of the approval rules."""
    problems = []
    order = [n for _, n in walk(plan)]
    ids = [n.id for n in order if isinstance(n, Task)]
    if len(ids) != len(set(ids)):
        problems.append("duplicate ids")
    seen = {}
    for n in order:
        if isinstance(n, Task):
            seen[n.id] = n
            spec = pool.actions.get(n.action)
            if spec is None:
                problems.append(f"unknown action {n.action}")
                continue
            names = {p.name: p for p in spec.params}
            for p in spec.params:
                if p.required and p.name not in n.params:
                    problems.append(f"missing {p.name}")
            for k, v in n.params.items():
                p = names.get(k)
                if p is None:
                    problems.append(f"unknown param {k}")
                elif p.kind in (ParamKind.FLOAT, ParamKind.INT):
                    try:
                        x = float(v) if p.kind is ParamKind.FLOAT else int(v)
                    except ValueError:
                        problems.append(f"bad {k}")
                        continue
                    if (p.min is not None and x < p.min) or (p.max is not None and x > p.max):
                        problems.append(f"range {k}")
                elif p.kind is ParamKind.POSE6D:
                    vals = [float(s) for s in v.split(",")]
                    if len(vals) != 7 or abs(math.hypot(*vals[3:]) - 1) > 1e-6:
                        problems.append(f"pose {k}")
                elif p.kind is ParamKind.ENUM and v.strip() not in p.allowed_values:
                    problems.append(f"enum {k}")
        elif isinstance(n, Conditional):
            ref = seen.get(n.on)
            if ref is None:
                problems.append(f"forward {n.on}")
            elif ref.action in pool.actions:
                for label in n.branches:
                    if label not in pool.actions[ref.action].outcomes:
                        problems.append(f"outcome {label}")
    return problems


# -- mutation operators ------------------------------------------------------------

def _replace_node(node, target, new):
    if node is target:
        return new
    if isinstance(node, Sequence):
        return Sequence(tuple(_replace_node(c, target, new) for c in node.children))
    if isinstance(node, Conditional):
        return Conditional(node.on, {k: _replace_node(v, target, new) for k, v in node.branches.items()},
                           None if node.else_branch is None else _replace_node(node.else_branch, target, new))
    return node


def _swap(root, a, b):
    marker = Task("__swap_marker__", "none")
    return _replace_node(_replace_node(_replace_node(root, a, marker), b, a), marker, b)


def _tasks(plan):
    return [n for _, n in walk(plan) if isinstance(n, Task)]


def mutate_drop_param(plan: MissionPlan, pool: ActionPool):
    for t in _tasks(plan):
        for p in pool.actions[t.action].params:
            if p.required and p.name in t.params:
                params = {k: v for k, v in t.params.items() if k != p.name}
                yield replace(plan, root=_replace_node(plan.root, t, Task(t.id, t.action, params)))


def mutate_rename_action(plan: MissionPlan, pool: ActionPool):
    for t in _tasks(plan):
        yield replace(plan, root=_replace_node(plan.root, t, Task(t.id, t.action + "_v2", dict(t.params))))


def mutate_reorder_conditional(plan: MissionPlan, pool: ActionPool):
    by_id = {t.id: t for t in _tasks(plan)}
    for _, n in walk(plan):
        if isinstance(n, Conditional):
            yield replace(plan, root=_swap(plan.root, by_id[n.on], n))


def mutate_duplicate_id(plan: MissionPlan, pool: ActionPool):
    tasks = _tasks(plan)
    for first, second in zip(tasks, tasks[1:]):
        yield replace(plan, root=_replace_node(plan.root, second, Task(first.id, second.action, dict(second.params))))


def mutate_corrupt_number(plan: MissionPlan, pool: ActionPool):
    numeric = (ParamKind.FLOAT, ParamKind.INT, ParamKind.GPS_POINT, ParamKind.POSE6D)
    for t in _tasks(plan):
        spec = pool.actions[t.action]
        for name, value in t.params.items():
            if spec.param(name).kind in numeric:
                params = dict(t.params)
                params[name] = value.replace(".", ".x", 1) if "." in value else value + "x"
                yield replace(plan, root=_replace_node(plan.root, t, Task(t.id, t.action, params)))


MUTATIONS = {
    "drop_required_param": (mutate_drop_param, "MISSING_PARAM"),
    "rename_action": (mutate_rename_action, "UNKNOWN_ACTION"),
    "reorder_conditional": (mutate_reorder_conditional, "FORWARD_REFERENCE"),
    "duplicate_task_id": (mutate_duplicate_id, "DUPLICATE_TASK_ID"),
    "corrupt_numeric_literal": (mutate_corrupt_number, "BAD_PARAM_TYPE"),
}
