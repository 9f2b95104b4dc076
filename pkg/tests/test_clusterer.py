import pytest
from hypothesis import given, strategies as st

from navmem.attention import compute_group_kv, get_model
from navmem.clusterer import (EMBEDDING, TRANSFORMER, ClusterConfig, apply_assignments, assign,
                              assign_by_position, embedding_scores)
from navmem.embedding import HashedTrigramEmbedder
from navmem.navmap import NavigationMap


def kitchen_bedroom_map():
    nav = NavigationMap()
    nav.add_detections(0, [("oven", (1, 1, 0)), ("fridge", (2, 1, 0)), ("bed", (20, 20, 0)), ("pillow", (21, 20, 0))])
    nav.new_group([1, 2], 0)
    nav.new_group([3, 4], 0)
    return nav


def test_first_step_makes_one_group():
    nav = NavigationMap()
    ids = nav.add_detections(0, [("oven", (1, 1, 0)), ("bed", (9, 9, 0))])
    out = assign(nav, ids, None, ClusterConfig(), provider=HashedTrigramEmbedder())
    extended, new = apply_assignments(nav, out, 0)
    assert extended == {} and nav.group(new).members == ids


def test_embedding_assigns_by_theme():
    nav = kitchen_bedroom_map()
    ids = nav.add_detections(1, [("microwave", (3, 2, 0)), ("nightstand", (22, 21, 0)), ("toilet", (40, 5, 0))])
    out = assign(nav, ids, None, ClusterConfig(), provider=HashedTrigramEmbedder())
    assert [a.target for a in out] == [1, 2, None]
    extended, new = apply_assignments(nav, out, 1)
    assert extended == {1: 2, 2: 2}
    assert nav.group(new).members == [ids[2]]


def test_embedding_scores_with_self_term():
    emb = HashedTrigramEmbedder()
    scores = embedding_scores(emb, "toilet", ["oven fridge"])
    assert 0 < scores[0] < 0.25
    assert embedding_scores(emb, "x", []) == []


def test_full_groups_are_skipped():
    nav = kitchen_bedroom_map()
    ids = nav.add_detections(1, [("microwave", (3, 2, 0))])
    out = assign(nav, ids, None, ClusterConfig(max_group_tokens=5), provider=HashedTrigramEmbedder())
    assert out[0].target is None


def test_transformer_provider_runs():
    model = get_model()
    nav = kitchen_bedroom_map()
    blocks = {g: compute_group_kv(model, model.tokenize(nav.render_group(g)), group_id=g) for g in nav.group_ids()}
    ids = nav.add_detections(1, [("microwave", (3, 2, 0))])
    cfg = ClusterConfig(provider=TRANSFORMER, attention_threshold=0.0)
    out = assign(nav, ids, blocks, cfg, model=model)
    assert set(out[0].scores) == {1, 2}
    assert out[0].target == max(out[0].scores, key=out[0].scores.get)
    with pytest.raises(ValueError):
        assign(nav, ids, None, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        ClusterConfig(attention_threshold=1.0)
    with pytest.raises(ValueError):
        ClusterConfig(provider="nope")
    assert ClusterConfig().layers_used(8) == 1
    assert ClusterConfig(layer_fraction=0.5).layers_used(8) == 4


def test_position_clustering():
    nav = kitchen_bedroom_map()
    ids = nav.add_detections(1, [("toilet", (2, 3, 0)), ("lamp", (50, 50, 0))])
    out = assign_by_position(nav, ids, radius=6.0)
    assert [a.target for a in out] == [1, None]


@given(st.lists(st.sampled_from(["oven", "bed", "sofa", "toilet", "kettle", "pillow", "tv", "desk"]),
                min_size=1, max_size=10), st.integers(0, 30))
def test_every_object_placed_exactly_once(labels, x):
    nav = kitchen_bedroom_map()
    ids = nav.add_detections(1, [(lab, (x + 3 * i, 40, 0)) for i, lab in enumerate(labels)])
    out = assign(nav, ids, None, ClusterConfig(), provider=HashedTrigramEmbedder())
    apply_assignments(nav, out, 1)
    members = [m for g in nav.groups for m in g.members]
    assert sorted(members) == sorted(nav.objects)
    assert not nav.staged
    assert sum(1 for g in nav.groups if g.created_step == 1) <= 1
