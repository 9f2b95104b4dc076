import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from navmem.embedding import HashedTrigramEmbedder
from navmem.kvstore import KVStore
from navmem.navmap import NavigationMap
from navmem.retrieval import (EmbeddingCache, KnapsackInstance, exact_objective, plan_step, select_all,
                              select_by_distance, select_groups)
from helpers import blk


def brute_force(inst):
    """Best objective over all subsets, with exact rationals."""
    values = inst.values()
    best = Fraction(0)
    for r in range(inst.n + 1):
        for combo in itertools.combinations(range(inst.n), r):
            if sum(inst.sizes[i] for i in combo) <= inst.budget:
                best = max(best, exact_objective(values, combo))
    return best


def objective(inst, plan):
    index = {g: i for i, g in enumerate(inst.ids)}
    return exact_objective(inst.values(), [index[g] for g in plan.selected])


def random_instance(rng, n, budget_scale=1.0):
    sizes = [int(s) for s in rng.integers(1, 50, n)]
    return KnapsackInstance(
        probabilities=[float(p) for p in rng.random(n)],
        threshold=float(rng.random()),
        sizes=sizes,
        budget=int(budget_scale * rng.integers(0, max(1, sum(sizes)) + 1)),
    )


def test_example_prefers_relevant_groups():
    inst = KnapsackInstance([0.9, 0.6, 0.2], 0.5, [10, 10, 10], 20)
    plan = select_groups(inst)
    assert plan.selected == [0, 1]
    assert plan.objective_value == pytest.approx(0.5)
    assert plan.total_bytes == 20


def test_below_threshold_never_selected():
    plan = select_groups(KnapsackInstance([0.3, 0.5], 0.5, [1, 1], 100))
    assert plan.selected == []


def test_tie_break_smallest_ids():
    plan = select_groups(KnapsackInstance([0.75, 0.75, 0.75], 0.5, [5, 5, 5], 10, ids=[9, 3, 6]))
    assert plan.selected == [3, 6]


def test_zero_budget_and_empty():
    assert select_groups(KnapsackInstance([0.9], 0.1, [5], 0)).selected == []
    assert select_groups(KnapsackInstance([], 0.1, [], 10)).selected == []


def test_invalid_instances():
    with pytest.raises(ValueError):
        KnapsackInstance([0.5], 0.1, [0], 10)
    with pytest.raises(ValueError):
        KnapsackInstance([0.5, 0.2], 0.1, [1], 10)
    with pytest.raises(ValueError):
        select_groups(KnapsackInstance([0.5], 0.1, [1], -1))


def test_oracle_equivalence_bulk():
    rng = np.random.default_rng(0)
    for _ in range(300):
        inst = random_instance(rng, int(rng.integers(0, 11)))
        assert objective(inst, select_groups(inst)) == brute_force(inst)


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(1, 40)), max_size=9), st.floats(0, 1), st.integers(0, 200))
def test_oracle_equivalence_property(items, threshold, budget):
    inst = KnapsackInstance([p for p, _ in items], threshold, [m for _, m in items], budget)
    plan = select_groups(inst)
    assert not plan.approximate
    assert objective(inst, plan) == brute_force(inst)
    assert plan.total_bytes <= budget


@given(st.integers(31, 200), st.integers(0, 10 ** 6))
def test_large_instances_feasible(n, seed):
    inst = random_instance(np.random.default_rng(seed), n, budget_scale=0.5)
    plan = select_groups(inst)
    assert plan.total_bytes <= inst.budget
    assert sum(inst.sizes[inst.ids.index(g)] for g in plan.selected) == plan.total_bytes
    assert all(inst.probabilities[g] > inst.threshold for g in plan.selected)


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(1, 5000)), max_size=12), st.integers(0, 20000),
       st.integers(1, 2048))
def test_quantized_sizes_stay_feasible(items, budget, quantum):
    inst = KnapsackInstance([p for p, _ in items], 0.3, [m for _, m in items], budget, quantum)
    assert select_groups(inst).total_bytes <= budget


def make_map():
    nav = NavigationMap()
    nav.add_detections(0, [("oven", (1, 1, 0)), ("stove", (2, 1, 0)), ("bed", (20, 20, 0)), ("pillow", (21, 20, 0))])
    g1 = nav.new_group([1, 2], 0)
    g2 = nav.new_group([3, 4], 0)
    return nav, g1, g2


def test_plan_step_selects_related_group():
    nav, g1, g2 = make_map()
    store = KVStore(10 ** 6)
    store.put(g1, blk(g1))
    store.put(g2, blk(g2))
    cache = EmbeddingCache()
    plan = plan_step(nav, "cooking pot", store, None, HashedTrigramEmbedder(), cache=cache, quantum=1)
    assert plan.selected == [g1]
    assert plan.probabilities[g1] > plan.probabilities[g2]
    calls = cache.provider_calls
    plan_step(nav, "cooking pot", store, None, HashedTrigramEmbedder(), cache=cache, changed_group_ids=[])
    assert cache.provider_calls == calls


def test_distance_baseline_and_all():
    nav, g1, g2 = make_map()
    store = KVStore(10 ** 6)
    store.put(g1, blk(g1))
    store.put(g2, blk(g2))
    plan = select_by_distance(nav, store, blk(0).nbytes, (19, 19))
    assert plan.selected == [g2]
    assert select_all(nav, store).selected == [g1, g2]
