import numpy as np
import pytest

from navmem.costmodel import BASELINE_RECOMPUTE, EFFICIENTNAV, OFFLOAD_PER_DECODE
from navmem.episode import (ALL_GROUPS, DISTANCE, POSITION, ConfigError, SystemConfig, choose_start, compute_spl,
                            compute_sr, episode_log_lines, goal_region_distance, group_purity, read_log,
                            run_episode, write_episode_log)
from navmem.scene import PlacedObject, Scene, generate_scene


def test_spl_examples():
    assert compute_spl([(1, 10, 10), (1, 10, 20)]) == pytest.approx(0.75)
    assert compute_spl([(0, 5, 7), (0, 3, 3)]) == 0.0
    assert compute_spl([(1, 4, 4), (0, 3, 9), (1, 0, 0)]) == pytest.approx(compute_sr([(1, 4, 4), (0, 3, 9), (1, 0, 0)]))
    assert compute_spl([]) == 0.0
    # l below p is clamped
    assert compute_spl([(1, 10, 5)]) == 1.0


def test_episode_succeeds_and_is_deterministic():
    scene = generate_scene(0)
    start = choose_start(scene, 0)
    a = run_episode(scene, "bed", start=start)
    b = run_episode(scene, "bed", start=start)
    assert a.success and a.termination_reason == "success"
    assert episode_log_lines(a) == episode_log_lines(b)
    assert a.agent_path_length >= a.shortest_path_length == goal_region_distance(scene, start, "bed", 1.0)
    assert len(a.reports) == a.steps


def test_goal_at_start():
    scene = generate_scene(2)
    obj = scene.instances("tv")[0]
    r = run_episode(scene, "tv", start=obj.cell)
    assert r.success and r.steps <= 1 and r.agent_path_length == 0 and r.shortest_path_length == 0
    assert compute_spl([r]) == 1.0


def test_absent_goal_hits_a_cap():
    scene = generate_scene(3)
    r = run_episode(scene, "spaceship", SystemConfig(step_cap=5), start=choose_start(scene, 3))
    assert not r.success
    assert r.termination_reason in ("step-cap", "exhausted", "path-cap")
    assert r.steps <= 5


def test_modes_share_decisions():
    scene = generate_scene(4)
    start = choose_start(scene, 4)
    runs = {m: run_episode(scene, "toilet", SystemConfig(mode=m), start=start)
            for m in (BASELINE_RECOMPUTE, OFFLOAD_PER_DECODE, EFFICIENTNAV)}
    paths = {m: r.agent_path_length for m, r in runs.items()}
    assert len(set(paths.values())) == 1
    for m in (OFFLOAD_PER_DECODE, EFFICIENTNAV):
        for rep in runs[m].reports:
            assert rep.tokens_recomputed <= rep.prompt_tokens_total


def test_efficientnav_recomputes_less_than_baseline():
    scene = generate_scene(5)
    start = choose_start(scene, 5)
    cfg = SystemConfig(retrieval_method=ALL_GROUPS, budget_bytes=2 ** 40)
    base = run_episode(scene, "oven", cfg.replace(mode=BASELINE_RECOMPUTE), start=start)
    eff = run_episode(scene, "oven", cfg.replace(mode=EFFICIENTNAV), start=start)
    assert sum(r.tokens_recomputed for r in eff.reports) <= sum(r.tokens_recomputed for r in base.reports)


def test_all_groups_over_budget_raises():
    from navmem.kvstore import BudgetInfeasibleError
    scene = generate_scene(5)
    with pytest.raises(BudgetInfeasibleError):
        run_episode(scene, "oven", SystemConfig(retrieval_method=ALL_GROUPS, budget_bytes=200_000),
                    start=choose_start(scene, 5))


def test_position_and_distance_variants_run():
    scene = generate_scene(6)
    r = run_episode(scene, "bed", SystemConfig(cluster_method=POSITION, retrieval_method=DISTANCE),
                    start=choose_start(scene, 6))
    assert r.termination_reason in ("success", "step-cap", "path-cap", "unreachable", "exhausted")


def test_tiny_llm_backend_episode():
    scene = generate_scene(7)
    r = run_episode(scene, "oven", SystemConfig(backend="tiny-llm", step_cap=6), start=choose_start(scene, 7))
    assert r.steps <= 6


def test_budget_respected_every_step():
    scene = generate_scene(8)
    cfg = SystemConfig(budget_bytes=400_000)
    r = run_episode(scene, "tv", cfg, start=choose_start(scene, 8))
    assert all(load.device_bytes <= cfg.budget_bytes for load in r.loads)


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        SystemConfig(mode="vllm").validate()
    with pytest.raises(ConfigError):
        SystemConfig(budget_bytes=0).validate()
    with pytest.raises(ConfigError):
        SystemConfig.from_dict({"nope": 1})
    cfg = SystemConfig(budget_bytes=123456, retrieval_method=DISTANCE)
    assert SystemConfig.from_dict(cfg.to_dict()) == cfg


def test_log_roundtrip(tmp_path):
    scene = generate_scene(9)
    r = run_episode(scene, "bed", start=choose_start(scene, 9))
    path = tmp_path / "ep.jsonl"
    write_episode_log(r, path, header={"seed": 9})
    records = read_log(path)
    assert records[0]["type"] == "header" and records[-1]["type"] == "result"
    assert path.read_text().splitlines() == episode_log_lines(r, {"seed": 9})
    assert "wall" not in path.read_text()


def test_group_purity_counts():
    scene = Scene(10, 10, np.zeros((10, 10), bool), [], [PlacedObject("a", (1, 1, 0), 0), PlacedObject("b", (2, 1, 0), 0),
                                                         PlacedObject("c", (8, 8, 0), 1)])
    from navmem.navmap import NavigationMap
    nav = NavigationMap()
    nav.add_detections(0, [("a", (1, 1, 0)), ("b", (2, 1, 0)), ("c", (8, 8, 0))])
    nav.new_group([1, 2, 3], 0)
    assert group_purity(scene, nav) == (2, 3)
