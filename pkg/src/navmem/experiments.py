"""Multi-episode drivers shared by the command line and the acceptance suite."""

from __future__ import annotations

import concurrent.futures as cf
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import costmodel
from .costmodel import LatencyParams, step_latency
from .episode import (ALL_GROUPS, ATTENTION, DISTANCE, KNAPSACK, POSITION, EpisodeResult, SystemConfig,
                      choose_start, compute_spl, compute_sr, episode_log_lines, group_purity, run_episode)
from .runconfig import RunConfig, build_id
from .scene import SceneConfig, generate_scene

UNBOUNDED_BUDGET = 2 ** 62


@dataclass
class EpisodeOutcome:
    seed: int
    goal: str
    success: bool
    shortest: float
    path_length: float
    steps: int
    mean_rtl: float
    e2el: float
    hits: int
    misses: int
    hit_rate: float | None
    map_bytes: int
    termination_reason: str
    lines: list[str]

    def triple(self) -> tuple[float, float, float]:
        return (1.0 if self.success else 0.0, self.shortest, self.path_length)


def episode_header(cfg: RunConfig, seed: int, goal: str, start) -> dict:
    return {"build": build_id(), "run_config": cfg.to_dict(), "seed": seed, "goal": goal, "start": list(start)}


def run_seed(cfg: RunConfig, seed: int) -> EpisodeOutcome:
    scene, goal, start = cfg.episode_for(seed)
    result = run_episode(scene, goal, cfg.system, start=start, explore_only=cfg.explore_only)
    lines = episode_log_lines(result, episode_header(cfg, seed, goal, start))
    return _outcome(seed, result, cfg.system.latency, lines)


def _outcome(seed: int, result: EpisodeResult, params: LatencyParams, lines: list[str]) -> EpisodeOutcome:
    return EpisodeOutcome(
        seed=seed, goal=result.goal, success=result.success, shortest=result.shortest_path_length,
        path_length=result.agent_path_length, steps=result.steps,
        mean_rtl=costmodel.mean_rtl(result.reports, params), e2el=costmodel.episode_latency(result.reports, params),
        hits=result.hits, misses=result.misses, hit_rate=result.hit_rate(), map_bytes=result.map_bytes,
        termination_reason=result.termination_reason, lines=lines)


def _run_one(args) -> EpisodeOutcome:
    cfg_dict, seed = args
    return run_seed(RunConfig.from_dict(cfg_dict), seed)


def run_many(cfg: RunConfig, seeds: Sequence[int] | None = None, jobs: int | None = None) -> list[EpisodeOutcome]:
    """Run one episode per seed; results come back in seed order whatever the job count."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    jobs = cfg.jobs if jobs is None else jobs
    if jobs <= 1 or len(seeds) <= 1:
        return [run_seed(cfg, s) for s in seeds]
    payload = cfg.to_dict()
    with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, [(payload, s) for s in seeds]))


def summarize(outcomes: Sequence[EpisodeOutcome]) -> dict:
    """SR, SPL, mean RtL, mean E2EL and hit rates over a batch of episodes."""
    triples = [o.triple() for o in outcomes]
    rates = [o.hit_rate for o in outcomes if o.hit_rate is not None]
    hits = sum(o.hits for o in outcomes)
    requests = hits + sum(o.misses for o in outcomes)
    return {
        "episodes": len(outcomes),
        "sr": compute_sr(triples),
        "spl": compute_spl(triples),
        "mean_rtl": float(np.mean([o.mean_rtl for o in outcomes])) if outcomes else 0.0,
        "mean_e2el": float(np.mean([o.e2el for o in outcomes])) if outcomes else 0.0,
        "hit_rate": float(np.mean(rates)) if rates else None,
        "hit_rate_pooled": hits / requests if requests else None,
        "episodes_with_requests": len(rates),
    }


# -- budget sweep -------------------------------------------------------------


def bench_budget(cfg: RunConfig) -> list[dict]:
    """One row per budget over identical seeds.

    Explicit ``budgets`` are bytes. Otherwise each ``budget_fractions`` entry is
    scaled, per episode, by the total map KV size that episode reaches with an
    unbounded budget.
    """
    rows = []
    if cfg.budgets:
        for b in cfg.budgets:
            run = cfg.replace(system=cfg.system.replace(budget_bytes=int(b)))
            rows.append({"budget": int(b), "budget_fraction": None, **summarize(run_many(run))})
        return rows
    ref = run_many(cfg.replace(system=cfg.system.replace(budget_bytes=UNBOUNDED_BUDGET)))
    totals = {o.seed: o.map_bytes for o in ref}
    for f in cfg.budget_fractions:
        outcomes = []
        for seed in cfg.seeds:
            budget = max(1, int(math.floor(f * totals[seed])))
            run = cfg.replace(system=cfg.system.replace(budget_bytes=budget))
            outcomes.append(run_seed(run, seed))
        mean_budget = int(np.mean([max(1, int(math.floor(f * totals[s]))) for s in cfg.seeds]))
        rows.append({"budget": mean_budget, "budget_fraction": f, **summarize(outcomes)})
    return rows


# -- ablation -------------------------------------------------------------------

ABLATION_ROWS = (
    "position clustering + distance selection + recompute",
    "+ discrete caching",
    "+ attention clustering",
    "+ semantics-aware retrieval",
)


def ablation_configs(base: SystemConfig) -> list[SystemConfig]:
    """The four cumulative configurations, each adding one component to the previous row."""
    row1 = base.replace(mode=costmodel.BASELINE_RECOMPUTE, cluster_method=POSITION, retrieval_method=DISTANCE)
    row2 = row1.replace(mode=costmodel.EFFICIENTNAV)
    row3 = row2.replace(cluster_method=ATTENTION)
    row4 = row3.replace(retrieval_method=KNAPSACK)
    return [row1, row2, row3, row4]


def ablate(cfg: RunConfig) -> list[dict]:
    rows = []
    for i, (name, system) in enumerate(zip(ABLATION_ROWS, ablation_configs(cfg.system)), start=1):
        outcomes = run_many(cfg.replace(system=system))
        summary = summarize(outcomes)
        rows.append({"row": i, "name": name, "sr": summary["sr"], "spl": summary["spl"],
                     "mean_rtl": summary["mean_rtl"], "mean_e2el": summary["mean_e2el"],
                     "seeds": " ".join(str(s) for s in cfg.seeds)})
    return rows


# -- growth traces ----------------------------------------------------------------

GROWTH_SCENE = SceneConfig(rooms=36, objects_per_room=8, grid_size=(60, 60),
                           themes=("kitchen", "bathroom", "bedroom", "living room", "office", "dining room"),
                           goals=())
GROWTH_GOAL = "cooking pot"  # kitchen-related, never present, so the trace runs to the step cap


def growth_trace(seed: int, system: SystemConfig, scene_cfg: SceneConfig = GROWTH_SCENE,
                 goal: str = GROWTH_GOAL) -> list[float]:
    """Modeled RtL per step of an explore-only run on a large house."""
    scene = generate_scene(seed, scene_cfg)
    result = run_episode(scene, goal, system, start=choose_start(scene, seed), explore_only=True)
    return [step_latency(r, system.latency) for r in result.reports]


def growth_curves(seeds: Sequence[int], base: SystemConfig = SystemConfig(), steps: int = 30) -> dict[str, np.ndarray]:
    """Mean per-step RtL for efficientnav (knapsack) and the full-map recompute baseline."""
    systems = {
        "efficientnav": base.replace(mode=costmodel.EFFICIENTNAV, retrieval_method=KNAPSACK),
        "baseline": base.replace(mode=costmodel.BASELINE_RECOMPUTE, retrieval_method=ALL_GROUPS),
    }
    out = {}
    for name, system in systems.items():
        traces = [growth_trace(s, system) for s in seeds]
        short = [len(t) for t in traces if len(t) < steps]
        if short:
            raise RuntimeError(f"growth trace ended after {min(short)} steps, need {steps}")
        out[name] = np.mean([t[:steps] for t in traces], axis=0)
    return out


def purity_over(seeds: Sequence[int], system: SystemConfig = SystemConfig(),
                scene_cfg: SceneConfig = SceneConfig(), goal: str = GROWTH_GOAL) -> tuple[int, int]:
    """Room purity of the groups built while fully exploring each scene."""
    agree = total = 0
    for s in seeds:
        scene = generate_scene(s, scene_cfg)
        result = run_episode(scene, goal, system, start=choose_start(scene, s), explore_only=True)
        a, t = group_purity(scene, result.nav)
        agree += a
        total += t
    return agree, total
