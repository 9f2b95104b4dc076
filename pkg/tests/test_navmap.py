import pytest
from hypothesis import given, strategies as st

from navmem.attention import tokenize
from navmem.navmap import MapError, NavigationMap


def two_group_map():
    nav = NavigationMap()
    nav.add_detections(0, [("bed", (3, 4, 0)), ("pillow", (3, 5, 1)), ("oven", (10, 2, 0))])
    g1 = nav.new_group([1, 2], 0)
    g2 = nav.new_group([3], 0)
    return nav, g1, g2


def test_render_group_exact():
    nav, g1, g2 = two_group_map()
    assert nav.render_group(g1) == (
        "Object Group 1: {object: bed, position:(3,4,0)}, {object: pillow, position:(3,5,1)}")
    assert nav.render_group(g2) == "Object Group 2: {object: oven, position:(10,2,0)}"


def test_render_prompt_layout():
    nav, g1, g2 = two_group_map()
    nav.mark_visited(3)
    prompt = nav.render_prompt([g2, g1], "toilet")
    lines = prompt.split("\n")
    assert lines[0].startswith("Object Group 1:") and lines[1].startswith("Object Group 2:")
    assert "find the toilet in the environment" in lines[2]
    assert lines[3] == "Trajectory: You have visited the oven at position (10,2,0)."


def test_trajectory_listing():
    nav, _, _ = two_group_map()
    for oid in (1, 2, 3):
        nav.mark_visited(oid)
    assert nav.render_trajectory() == ("Trajectory: You have visited the bed at position (3,4,0), the pillow at "
                                       "position (3,5,1) and the oven at position (10,2,0).")
    nav.mark_visited(1)
    assert nav.trajectory == [1, 2, 3]


def test_dedup_examples():
    nav = NavigationMap(dedup_radius=2.0)
    assert nav.add_detections(0, [("chair", (5, 5, 0))]) == [1]
    assert nav.add_detections(1, [("chair", (6, 6, 0))]) == []      # within 2
    assert nav.add_detections(1, [("table", (6, 6, 0))]) == [2]     # other label
    assert nav.add_detections(2, [("chair", (8, 5, 0))]) == [3]     # distance 3
    assert nav.add_detections(2, [("chair", (5, 5, 2))]) == []      # exactly 2


def test_step_must_not_decrease():
    nav = NavigationMap()
    nav.add_detections(3, [])
    with pytest.raises(ValueError):
        nav.add_detections(2, [])


def test_bad_position_and_unknown_ids():
    nav = NavigationMap()
    with pytest.raises(ValueError):
        nav.add_detections(0, [("x", (1, -1, 0))])
    with pytest.raises(MapError):
        nav.group(9)
    with pytest.raises(MapError):
        nav.object(9)


def test_place_twice_rejected():
    nav, g1, g2 = two_group_map()
    with pytest.raises(ValueError):
        nav.place(1, g2)


def test_find_goal_case_insensitive_and_unvisited():
    nav, _, _ = two_group_map()
    assert nav.find_goal("OVEN") == 3
    nav.mark_visited(3)
    assert nav.find_goal("oven") is None


def test_dict_roundtrip():
    nav, g1, _ = two_group_map()
    nav.mark_visited(2)
    back = NavigationMap.from_dict(nav.to_dict())
    assert back.to_dict() == nav.to_dict()
    assert back.render_prompt(back.group_ids(), "tv") == nav.render_prompt(nav.group_ids(), "tv")


labels = st.sampled_from(["bed", "sofa", "tv", "oven", "frying pan"])
coords = st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(0, 3))


@given(st.lists(st.tuples(labels, coords), min_size=1, max_size=12), st.integers(0, 11))
def test_append_only_rendering(dets, split):
    """Rendering before an append, plus the appended text, equals rendering after it."""
    nav = NavigationMap(dedup_radius=0.0)
    ids = nav.add_detections(0, dets)
    split = min(split, len(ids))
    head, tail = ids[:max(split, 1)], ids[max(split, 1):]
    gid = nav.new_group(head, 0)
    before = nav.render_group(gid)
    n_before = len(nav.group(gid).members)
    for oid in tail:
        nav.place(oid, gid)
    after = nav.render_group(gid)
    assert after == before + nav.render_appended(gid, n_before)
    # token level: the cached prefix stays a prefix
    assert tokenize(after).tokens[:len(tokenize(before))] == tokenize(before).tokens


@given(st.lists(st.tuples(labels, coords), max_size=20), st.floats(0, 5))
def test_dedup_invariant(dets, radius):
    nav = NavigationMap(dedup_radius=radius)
    nav.add_detections(0, dets)
    objs = list(nav.objects.values())
    for i, a in enumerate(objs):
        for b in objs[i + 1:]:
            if a.label == b.label:
                d = sum((p - q) ** 2 for p, q in zip(a.position, b.position)) ** 0.5
                assert d > radius
