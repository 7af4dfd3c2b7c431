import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import PLAN_DIR, PLAN_FILES, random_plan
from one4all.plan import (
    Conditional,
    MissionPlan,
    Sequence,
    Task,
    TreeShapeError,
    XmlSyntaxError,
    count_nodes,
    parse_plan,
    parse_tree,
    serialize_plan,
    walk,
)

# published totals: atomic tasks + conditionals
PUBLISHED_COUNTS = {
    "find_pistachio_nbv": (2, 1),
    "find_pistachio_pick": (2, 1),
    "pistachio_nbv_conditionals": (11, 4),
    "husky_sensors_repeat_if_low": (14, 5),
    "husky_all_sensors_if_else": (16, 5),
    "turn_gripper_left_relative": (1, 0),
    "turn_left_absolute": (1, 0),
    "move_square": (4, 0),
    "find_object_nbv_else_another": (3, 2),
    "husky_square_pictures": (8, 0),
}


@pytest.mark.parametrize("name", sorted(PUBLISHED_COUNTS))
def test_corpus_counts_match_published(name):
    plan = parse_plan((PLAN_DIR / f"{name}.xml").read_text())
    tasks, conds = count_nodes(plan)
    assert (tasks + conds, conds) == PUBLISHED_COUNTS[name]


def test_corpus_is_exactly_the_published_set():
    assert {p.stem for p in PLAN_FILES} == set(PUBLISHED_COUNTS)


def test_paths_are_positional():
    plan = parse_plan((PLAN_DIR / "pistachio_nbv_conditionals.xml").read_text())
    paths = [p for p, _ in walk(plan)]
    assert paths[0] == "/mission/sequence"
    assert "/mission/sequence/task[2]" in paths
    assert "/mission/sequence/conditional[1]/branch[failure]/task" in paths
    assert "/mission/sequence/conditional[2]/branch[success]/sequence/conditional[1]" in paths


def test_empty_sequence_plan():
    plan = parse_plan('<mission id="m" robot="kortex"><sequence/></mission>')
    assert plan.root == Sequence(()) and count_nodes(plan) == (0, 0)


@pytest.mark.parametrize("xml, exc", [
    ("<mission", XmlSyntaxError),
    ("", XmlSyntaxError),
    ('<plan id="m" robot="r"><sequence/></plan>', TreeShapeError),
    ('<mission id="m" robot="r"><sequence/><sequence/></mission>', TreeShapeError),
    ('<mission id="m" robot="r"><sequence>hello</sequence></mission>', TreeShapeError),
    ('<mission id="m" robot="r"><task action="x"/></mission>', TreeShapeError),
    ('<mission id="m" robot="r"><sequence><conditional on="a"/></sequence></mission>', TreeShapeError),
    ('<mission id="m" robot="r"><sequence><task id="a" action="x"/>'
     '<conditional on="a"><branch outcome="success"/></conditional></sequence></mission>', TreeShapeError),
    ('<!DOCTYPE m [<!ENTITY e "x">]><mission id="m" robot="r"><sequence/></mission>', XmlSyntaxError),
])
def test_parse_errors(xml, exc):
    with pytest.raises(exc):
        parse_plan(xml)


def test_forward_reference_and_duplicates_caught_by_parse_plan_only():
    fwd = ('<mission id="m" robot="r"><sequence><conditional on="a"><else><sequence/></else></conditional>'
           '<task id="a" action="x"/></sequence></mission>')
    parse_tree(fwd)
    with pytest.raises(TreeShapeError) as info:
        parse_plan(fwd)
    assert info.value.kind == "forward_reference"
    dup = '<mission id="m" robot="r"><sequence><task id="a" action="x"/><task id="a" action="y"/></sequence></mission>'
    with pytest.raises(TreeShapeError) as info:
        parse_plan(dup)
    assert info.value.kind == "duplicate_id" and info.value.path == "/mission/sequence/task[2]"


def test_param_text_kept_verbatim():
    plan = MissionPlan("m", "kortex", Sequence((Task("t", "detect_object", {"class_name": "  a <b> & 'c' "}),)))
    assert parse_plan(serialize_plan(plan)) == plan


@pytest.mark.parametrize("path", PLAN_FILES, ids=lambda p: p.stem)
def test_corpus_serialize_is_stable(path):
    plan = parse_plan(path.read_text())
    text = serialize_plan(plan)
    assert parse_plan(text) == plan
    assert serialize_plan(parse_plan(text)) == text


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_round_trip_generated(seed):
    plan = random_plan(random.Random(seed), weird_text=True)
    assert parse_plan(serialize_plan(plan)) == plan


def test_conditional_branch_order_preserved():
    c = Conditional("a", {"failure": Sequence(), "success": Sequence()})
    plan = MissionPlan("m", "kortex", Sequence((Task("a", "pick", {"target_object": "x"}), c)))
    back = parse_plan(serialize_plan(plan))
    assert list(back.root.children[1].branches) == ["failure", "success"]
