"""Per-step sub-goal choice and the planner's answer format."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

from .attention import KVBlock, TinyTransformer, score_candidates
from .embedding import EmbeddingProvider
from .navmap import NavigationMap, Position, distance
from .retrieval import RetrievalPlan

SEMANTIC_ORACLE = "semantic-oracle"
TINY_LLM = "tiny-llm"
ANSWER_PREFIX = "The next subgoal is"
FRONTIER_LABEL = "frontier"

_ANSWER_RE = re.compile(r"^The next subgoal is (.+) at position \((\d+),\s*(\d+),\s*(\d+)\)\.$")


class AnswerParseError(ValueError):
    pass


@dataclass(frozen=True)
class SubGoalDecision:
    object_id: int | None
    label: str
    position: Position
    is_final_goal: bool
    raw_answer: str

    @property
    def is_frontier(self) -> bool:
        return self.object_id is None

    def to_record(self) -> dict:
        return {"object_id": self.object_id, "label": self.label, "position": list(self.position),
                "is_final_goal": self.is_final_goal, "raw_answer": self.raw_answer}


def format_answer(label: str, position: Sequence[int]) -> str:
    x, y, z = position
    return f"{ANSWER_PREFIX} {label} at position ({x},{y},{z})."


def render_answer(decision: SubGoalDecision) -> str:
    return format_answer(decision.label, decision.position)


def parse_answer(text: str, nav: NavigationMap, goal: str | None = None) -> SubGoalDecision:
    """Strict inverse of :func:`render_answer`, resolved against the map.

    An exact label and position match wins; otherwise the nearest object with
    that label inside the map's dedup radius is taken.
    """
    m = _ANSWER_RE.match(text.strip())
    if m is None:
        raise AnswerParseError(f"not a planner answer: {text!r}")
    label = m.group(1)
    pos = tuple(int(m.group(i)) for i in (2, 3, 4))
    same_label = [o for o in nav.objects.values() if o.label == label]
    exact = [o for o in same_label if o.position == pos]
    if exact:
        obj = min(exact, key=lambda o: o.id)
    else:
        near = [(distance(o.position, pos), o.id, o) for o in same_label]
        near = [t for t in near if t[0] <= nav.dedup_radius]
        if not near:
            raise AnswerParseError(f"no {label} near {pos} on the map")
        obj = min(near)[2]
    is_goal = goal is not None and obj.label.casefold() == goal.casefold()
    return SubGoalDecision(obj.id, obj.label, obj.position, is_goal, format_answer(obj.label, obj.position))


class PlannerBackend(Protocol):
    name: str

    def score(self, nav: NavigationMap, candidates: Sequence[int], goal: str,
              blocks: Sequence[KVBlock]) -> list[float]: ...


class SemanticOracleBackend:
    """Ranks candidates by embedding similarity between their label and the goal."""

    name = SEMANTIC_ORACLE

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider

    def score(self, nav, candidates, goal, blocks=()):
        goal_vec = self.provider.embed(goal)
        return [float(self.provider.embed(nav.object(oid).label) @ goal_vec) for oid in candidates]


def candidate_text(nav: NavigationMap, object_id: int) -> str:
    obj = nav.object(object_id)
    x, y, z = obj.position
    return f"{obj.label} at position ({x},{y},{z})."


def prompt_suffix_text(nav: NavigationMap, goal: str) -> str:
    return nav.render_suffix(goal) + "\n" + ANSWER_PREFIX


def rank_with_model(model: TinyTransformer, blocks: Sequence[KVBlock], prompt_suffix, candidates: Sequence[str]) -> list[str]:
    """Candidates sorted by teacher-forced log-probability, best first."""
    scores = score_candidates(model, blocks, prompt_suffix, candidates)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return [candidates[i] for i in order]


class TinyLLMBackend:
    """Scores candidates with the tiny transformer over the retrieved KV blocks."""

    name = TINY_LLM

    def __init__(self, model: TinyTransformer):
        self.model = model

    def score(self, nav, candidates, goal, blocks=()):
        suffix = self.model.tokenize(prompt_suffix_text(nav, goal))
        texts = [candidate_text(nav, oid) for oid in candidates]
        return score_candidates(self.model, list(blocks), suffix, texts)


def candidate_objects(nav: NavigationMap, plan: RetrievalPlan) -> list[int]:
    """Unvisited members of the selected groups, in id order."""
    chosen = set(plan.selected)
    ids = [oid for g in nav.groups if g.group_id in chosen for oid in g.members]
    return sorted(oid for oid in ids if not nav.objects[oid].visited)


def plan(nav: NavigationMap, retrieval: RetrievalPlan, goal: str, backend: PlannerBackend,
         frontier: Position | None = None, blocks: Sequence[KVBlock] = ()) -> tuple[SubGoalDecision | None, dict[int, float]]:
    """Choose the next sub-goal.

    A goal object already on the map is taken directly. Otherwise the backend
    scores the unvisited objects of the retrieved groups and the best one wins,
    lowest id on ties. With no candidates the frontier cell is the target; with
    no frontier either, None is returned.
    """
    goal_id = nav.find_goal(goal)
    if goal_id is not None:
        obj = nav.object(goal_id)
        return SubGoalDecision(goal_id, obj.label, obj.position, True, format_answer(obj.label, obj.position)), {}
    candidates = candidate_objects(nav, retrieval)
    if candidates:
        scores = backend.score(nav, candidates, goal, blocks)
        by_id = dict(zip(candidates, scores))
        best = min(candidates, key=lambda oid: (-by_id[oid], oid))
        obj = nav.object(best)
        return SubGoalDecision(best, obj.label, obj.position, False, format_answer(obj.label, obj.position)), by_id
    if frontier is None:
        return None, {}
    pos = tuple(int(c) for c in frontier)
    return SubGoalDecision(None, FRONTIER_LABEL, pos, False, format_answer(FRONTIER_LABEL, pos)), {}
