import pytest
from hypothesis import given, strategies as st

from navmem.attention import compute_group_kv, get_model
from navmem.embedding import HashedTrigramEmbedder
from navmem.navmap import NavigationMap
from navmem.planner import (AnswerParseError, SemanticOracleBackend, TinyLLMBackend, format_answer, parse_answer,
                            plan, render_answer)
from navmem.retrieval import RetrievalPlan


def sample_map():
    nav = NavigationMap()
    nav.add_detections(0, [("stove", (1, 1, 0)), ("bed", (20, 20, 0)), ("frying pan", (2, 3, 1))])
    nav.new_group([1, 3], 0)
    nav.new_group([2], 0)
    return nav


def test_answer_format():
    assert format_answer("bed", (3, 4, 0)) == "The next subgoal is bed at position (3,4,0)."


def test_parse_exact_and_near():
    nav = sample_map()
    d = parse_answer("The next subgoal is frying pan at position (2,3,1).", nav, goal="frying pan")
    assert d.object_id == 3 and d.is_final_goal
    d = parse_answer("The next subgoal is bed at position (21, 21, 0).", nav)
    assert d.object_id == 2 and d.position == (20, 20, 0)


@pytest.mark.parametrize("text", ["go to the bed", "The next subgoal is bed at position (40,40,0).",
                                  "The next subgoal is sofa at position (1,1,0)."])
def test_parse_rejects(text):
    with pytest.raises(AnswerParseError):
        parse_answer(text, sample_map())


@given(st.integers(1, 3))
def test_render_parse_roundtrip(oid):
    nav = sample_map()
    obj = nav.object(oid)
    d = parse_answer(format_answer(obj.label, obj.position), nav)
    assert d.object_id == oid
    assert parse_answer(render_answer(d), nav) == d


def test_oracle_prefers_related_object():
    nav = sample_map()
    decision, scores = plan(nav, RetrievalPlan([1, 2]), "oven", SemanticOracleBackend(HashedTrigramEmbedder()))
    assert decision.object_id in (1, 3)
    assert scores[decision.object_id] > scores[2]


def test_goal_on_map_is_taken():
    nav = sample_map()
    decision, _ = plan(nav, RetrievalPlan([]), "BED", SemanticOracleBackend(HashedTrigramEmbedder()))
    assert decision.object_id == 2 and decision.is_final_goal


def test_frontier_and_none():
    nav = sample_map()
    for oid in (1, 2, 3):
        nav.mark_visited(oid)
    backend = SemanticOracleBackend(HashedTrigramEmbedder())
    decision, _ = plan(nav, RetrievalPlan([1, 2]), "toilet", backend, frontier=(5, 6, 0))
    assert decision.is_frontier and decision.position == (5, 6, 0)
    assert plan(nav, RetrievalPlan([1, 2]), "toilet", backend)[0] is None


def test_tiny_llm_backend_picks_candidate():
    model = get_model()
    nav = sample_map()
    blocks = [compute_group_kv(model, model.tokenize(nav.render_group(g)), group_id=g) for g in nav.group_ids()]
    decision, scores = plan(nav, RetrievalPlan([1, 2]), "toilet", TinyLLMBackend(model), blocks=blocks)
    assert set(scores) == {1, 2, 3}
    assert decision.object_id == min(scores, key=lambda o: (-scores[o], o))
