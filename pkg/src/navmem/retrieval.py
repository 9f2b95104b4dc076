"""Semantics-aware group retrieval under a device memory budget.

Each group gets a relevance probability from embedding similarity with the
goal, and the groups exposed to the planner are chosen by a 0/1 knapsack:

    maximize   sum_i (P_i - threshold) * x_i
    subject to sum_i M_i * x_i <= M

where M_i is the serialized KV size of group i and M the device budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .embedding import EmbeddingProvider, cosine
from .kvstore import KVStore
from .navmap import NavigationMap, distance

EXACT_LIMIT = 30
DEFAULT_THRESHOLD = 0.55
DEFAULT_QUANTUM = 1024


@dataclass
class KnapsackInstance:
    probabilities: list[float]
    threshold: float
    sizes: list[int]
    budget: int
    quantum: int = 1
    ids: list[int] | None = None

    def __post_init__(self):
        if len(self.probabilities) != len(self.sizes):
            raise ValueError("probabilities and sizes differ in length")
        if self.ids is None:
            self.ids = list(range(len(self.sizes)))
        if len(self.ids) != len(self.sizes) or len(set(self.ids)) != len(self.ids):
            raise ValueError("ids must be distinct and match sizes")
        if any(m <= 0 for m in self.sizes):
            raise ValueError("item sizes must be positive")
        if self.quantum < 1:
            raise ValueError("quantum must be >= 1")

    @property
    def n(self) -> int:
        return len(self.sizes)

    def values(self) -> list[float]:
        return [p - self.threshold for p in self.probabilities]


@dataclass
class RetrievalPlan:
    selected: list[int]
    objective_value: float = 0.0
    total_bytes: int = 0
    approximate: bool = False
    probabilities: dict[int, float] = field(default_factory=dict)


def exact_objective(values: Sequence[float], chosen: Sequence[int]) -> Fraction:
    return sum((Fraction(values[i]) for i in chosen), Fraction(0))


def _scaled_ints(values: Sequence[float]) -> list[int]:
    fracs = [Fraction(v) for v in values]
    denom = max(f.denominator for f in fracs)
    return [int(f * denom) for f in fracs]


def _knapsack_exact(values: list[int], weights: list[int], capacity: int) -> list[int]:
    """Optimal item indices; ties go to the lexicographically smallest index list.

    Rows are built from the last item backwards so that the forward
    reconstruction can take each item whenever the optimum stays reachable,
    which yields the lexicographically smallest optimal set.
    """
    n = len(values)
    big = sum(values) >= 2 ** 62
    dtype = object if big else np.int64
    rows = [np.zeros(capacity + 1, dtype=dtype)]
    for i in range(n - 1, -1, -1):
        prev = rows[-1]
        row = prev.copy()
        w, v = weights[i], values[i]
        if w <= capacity:
            cand = prev[:capacity + 1 - w] + v
            row[w:] = np.maximum(prev[w:], cand)
        rows.append(row)
    rows.reverse()  # rows[i] = best value using items i..n-1
    chosen, c = [], capacity
    for i in range(n):
        w = weights[i]
        if w <= c and rows[i + 1][c - w] + values[i] == rows[i][c]:
            chosen.append(i)
            c -= w
    return chosen


def _knapsack_greedy(values: list[int], sizes: list[int], budget: int) -> list[int]:
    """Density-greedy fill followed by single add/swap improvements."""
    n = len(values)
    order = sorted(range(n), key=lambda i: (-values[i] / sizes[i], i))
    chosen: set[int] = set()
    used = 0
    for i in order:
        if used + sizes[i] <= budget:
            chosen.add(i)
            used += sizes[i]
    while True:
        best_gain, best_move = 0, None
        outside = [j for j in range(n) if j not in chosen]
        for j in outside:
            if used + sizes[j] <= budget and values[j] > best_gain:
                best_gain, best_move = values[j], (None, j)
        for i in chosen:
            for j in outside:
                gain = values[j] - values[i]
                if gain > best_gain and used - sizes[i] + sizes[j] <= budget:
                    best_gain, best_move = gain, (i, j)
        if best_move is None:
            break
        out, inn = best_move
        if out is not None:
            chosen.discard(out)
            used -= sizes[out]
        chosen.add(inn)
        used += sizes[inn]
    return sorted(chosen)


def select_groups(inst: KnapsackInstance) -> RetrievalPlan:
    """Solve the retrieval knapsack.

    Items with value <= 0 are never taken. Up to ``EXACT_LIMIT`` positive items
    are solved exactly by dynamic programming over sizes ceil-quantized to
    ``quantum`` bytes; larger instances use a greedy heuristic and are flagged
    ``approximate``.
    """
    if inst.budget < 0:
        raise ValueError("budget must be >= 0")
    values = inst.values()
    positive = sorted((i for i in range(inst.n) if values[i] > 0), key=lambda i: inst.ids[i])
    probs = {inst.ids[i]: inst.probabilities[i] for i in range(inst.n)}
    if not positive:
        return RetrievalPlan([], 0.0, 0, probabilities=probs)
    ints = _scaled_ints([values[i] for i in positive])
    sizes = [inst.sizes[i] for i in positive]
    approximate = False
    if sum(sizes) <= inst.budget:
        local = list(range(len(positive)))
    elif len(positive) <= EXACT_LIMIT:
        weights = [-(-m // inst.quantum) for m in sizes]
        capacity = min(inst.budget // inst.quantum, sum(weights))
        local = _knapsack_exact(ints, weights, capacity)
    else:
        local = _knapsack_greedy(ints, sizes, inst.budget)
        approximate = True
    chosen = [positive[k] for k in local]
    return RetrievalPlan(
        selected=sorted(inst.ids[i] for i in chosen),
        objective_value=float(exact_objective(values, chosen)),
        total_bytes=sum(inst.sizes[i] for i in chosen),
        approximate=approximate,
        probabilities=probs,
    )


# -- relevance probabilities --------------------------------------------------


def group_text(nav: NavigationMap, group_id: int) -> str:
    """Semantic text of a group: member labels joined by spaces, positions left out."""
    return " ".join(nav.group_labels(group_id))


def probability_from_vectors(goal_vec: np.ndarray, group_vec: np.ndarray) -> float:
    return (1.0 + cosine(goal_vec, group_vec)) / 2.0


def group_probability(provider: EmbeddingProvider, goal: str, text: str) -> float:
    if not text.strip():
        return 0.0
    return probability_from_vectors(provider.embed(goal), provider.embed(text))


class EmbeddingCache:
    """Per-group embedding results, refreshed only for groups whose members changed."""

    def __init__(self, per_object_max: bool = False):
        self.per_object_max = per_object_max
        self.texts: dict[int, str] = {}
        self.vectors: dict[int, list[np.ndarray]] = {}
        self.provider_calls = 0
        self._version = None

    def refresh(self, changed_group_ids: Sequence[int] | None, provider: EmbeddingProvider,
                nav: NavigationMap) -> list[int]:
        """Re-embed changed (or never-seen) groups; returns the ids that were recomputed."""
        version = getattr(provider, "version", 0)
        if version != self._version:
            self.texts.clear()
            self.vectors.clear()
            self._version = version
        if changed_group_ids is None:
            changed = [g for g in nav.group_ids() if self.texts.get(g) != group_text(nav, g)]
        else:
            changed = list(dict.fromkeys(changed_group_ids))
            changed += [g for g in nav.group_ids() if g not in self.texts and g not in changed]
        for gid in changed:
            text = group_text(nav, gid)
            self.texts[gid] = text
            if not text:
                self.vectors[gid] = []
                continue
            units = nav.group_labels(gid) if self.per_object_max else [text]
            self.vectors[gid] = provider.embed_many(units)
            self.provider_calls += 1
        return changed

    def probability(self, gid: int, goal_vec: np.ndarray) -> float:
        vecs = self.vectors.get(gid, [])
        if not vecs:
            return 0.0
        return max(probability_from_vectors(goal_vec, v) for v in vecs)


def plan_step(nav: NavigationMap, goal: str, store: KVStore, budget: int | None, provider: EmbeddingProvider,
              threshold: float = DEFAULT_THRESHOLD, cache: EmbeddingCache | None = None,
              changed_group_ids: Sequence[int] | None = None, quantum: int = DEFAULT_QUANTUM) -> RetrievalPlan:
    """Refresh group embeddings, score groups against the goal, and solve the knapsack."""
    cache = cache if cache is not None else EmbeddingCache()
    cache.refresh(changed_group_ids, provider, nav)
    goal_vec = provider.embed(goal)
    ids = [g for g in nav.group_ids() if g in store]
    budget = store.plannable_budget() if budget is None else budget
    if not ids:
        return RetrievalPlan([], 0.0, 0)
    inst = KnapsackInstance(
        probabilities=[cache.probability(g, goal_vec) for g in ids],
        threshold=threshold,
        sizes=[store.size(g) for g in ids],
        budget=budget,
        quantum=quantum,
        ids=ids,
    )
    return select_groups(inst)


def select_by_distance(nav: NavigationMap, store: KVStore, budget: int | None,
                       agent_position: Sequence[float]) -> RetrievalPlan:
    """Position-based baseline: nearest group centroids first while they fit the budget."""
    budget = store.plannable_budget() if budget is None else budget
    ranked = []
    for gid in nav.group_ids():
        centroid = nav.group_centroid(gid)
        if centroid is None or gid not in store:
            continue
        ranked.append((distance(centroid[:2], agent_position[:2]), gid))
    ranked.sort()
    chosen, used = [], 0
    for _, gid in ranked:
        size = store.size(gid)
        if used + size <= budget:
            chosen.append(gid)
            used += size
    return RetrievalPlan(sorted(chosen), 0.0, used)


def select_all(nav: NavigationMap, store: KVStore) -> RetrievalPlan:
    ids = [g for g in nav.group_ids() if g in store]
    return RetrievalPlan(ids, 0.0, sum(store.size(g) for g in ids))
