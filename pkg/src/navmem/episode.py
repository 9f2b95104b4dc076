"""The navigation loop: detect, map, cluster, cache, retrieve, plan, move."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import costmodel
from .attention import ModelConfig, compute_group_kv, extension_delta, get_model, tokenize
from .clusterer import ClusterConfig, apply_assignments, assign, assign_by_position
from .costmodel import LatencyParams, StepReport, StepTraffic, build_report, step_latency
from .embedding import EmbeddingProvider, HashedTrigramEmbedder, RemoteEmbedder
from .kvstore import KVStore, LoadReport
from .navmap import NavigationMap
from .planner import (FRONTIER_LABEL, SEMANTIC_ORACLE, TINY_LLM, SemanticOracleBackend, SubGoalDecision,
                      TinyLLMBackend, format_answer, plan, prompt_suffix_text)
from .retrieval import (DEFAULT_QUANTUM, DEFAULT_THRESHOLD, EmbeddingCache, plan_step, select_all,
                        select_by_distance)
from .scene import (AgentState, NavigationError, Scene, bfs_distances, detect, move_to,
                    nearest_frontier, visible_cells)

ATTENTION = "attention"
POSITION = "position"
KNAPSACK = "knapsack"
DISTANCE = "distance-baseline"
ALL_GROUPS = "all-groups"

CLUSTER_METHODS = (ATTENTION, POSITION)
RETRIEVAL_METHODS = (KNAPSACK, DISTANCE, ALL_GROUPS)
BACKENDS = (SEMANTIC_ORACLE, TINY_LLM)

DEFAULT_BUDGET = 4 * 2 ** 20


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    mode: str = costmodel.EFFICIENTNAV
    backend: str = SEMANTIC_ORACLE
    cluster_method: str = ATTENTION
    retrieval_method: str = KNAPSACK
    budget_bytes: int = DEFAULT_BUDGET
    retrieval_threshold: float = DEFAULT_THRESHOLD
    quantum: int = DEFAULT_QUANTUM
    per_object_max: bool = False
    cluster: ClusterConfig = ClusterConfig()
    position_radius: float = 6.0
    model: ModelConfig = ModelConfig()
    latency: LatencyParams = LatencyParams()
    detection_range: float = 8.0
    success_radius: float = 1.0
    step_cap: int = 50
    path_cap_factor: float = 10.0
    dedup_radius: float = 2.0
    embed_dim: int = 256
    embed_seed: int = 0
    embed_endpoint: str | None = None

    def validate(self) -> None:
        if self.mode not in costmodel.MODES:
            raise ConfigError(f"mode must be one of {costmodel.MODES}, got {self.mode!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.cluster_method not in CLUSTER_METHODS:
            raise ConfigError(f"cluster method must be one of {CLUSTER_METHODS}, got {self.cluster_method!r}")
        if self.retrieval_method not in RETRIEVAL_METHODS:
            raise ConfigError(f"retrieval method must be one of {RETRIEVAL_METHODS}, got {self.retrieval_method!r}")
        if self.budget_bytes <= 0:
            raise ConfigError("budget_bytes must be positive")
        if self.step_cap < 1:
            raise ConfigError("step_cap must be >= 1")
        if self.success_radius < 0 or self.detection_range < 0:
            raise ConfigError("radii must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        data = dict(data)
        nested = {"cluster": ClusterConfig, "model": ModelConfig, "latency": LatencyParams}
        for key, typ in nested.items():
            if isinstance(data.get(key), dict):
                data[key] = typ(**data[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown system config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class EpisodeResult:
    success: bool
    agent_path_length: float
    shortest_path_length: float
    steps: int
    reports: list[StepReport]
    termination_reason: str
    goal: str = ""
    start: tuple[int, int] = (0, 0)
    loads: list[LoadReport] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    params: LatencyParams = LatencyParams()
    map_bytes: int = 0
    nav: NavigationMap | None = None

    @property
    def hits(self) -> int:
        return sum(r.hits for r in self.loads)

    @property
    def misses(self) -> int:
        return sum(r.misses for r in self.loads)

    def hit_rate(self) -> float | None:
        total = self.hits + self.misses
        return self.hits / total if total else None

    def summary(self) -> dict:
        params = self.params
        return {
            "goal": self.goal,
            "start": list(self.start),
            "success": self.success,
            "steps": self.steps,
            "agent_path_length": self.agent_path_length,
            "shortest_path_length": self.shortest_path_length,
            "termination_reason": self.termination_reason,
            "mean_rtl": costmodel.mean_rtl(self.reports, params),
            "e2el": costmodel.episode_latency(self.reports, params),
            "hits": self.hits,
            "misses": self.misses,
        }


def make_provider(cfg: SystemConfig) -> EmbeddingProvider:
    local = HashedTrigramEmbedder(dim=cfg.embed_dim, seed=cfg.embed_seed)
    if cfg.embed_endpoint:
        return RemoteEmbedder(cfg.embed_endpoint, fallback=local)
    return local


def choose_start(scene: Scene, seed: int) -> tuple[int, int]:
    pool = scene.start_pool
    rng = np.random.default_rng([scene.seed, seed])
    return pool[int(rng.integers(len(pool)))]


def goal_region_distance(scene: Scene, start: Sequence[int], goal: str, radius: float) -> float:
    """Shortest path length from ``start`` to any free cell within ``radius`` of a goal instance."""
    dist = bfs_distances(scene, start)
    best = math.inf
    r = int(math.floor(radius))
    for obj in scene.instances(goal):
        gx, gy = obj.cell
        for y in range(max(0, gy - r), min(scene.height, gy + r + 1)):
            for x in range(max(0, gx - r), min(scene.width, gx + r + 1)):
                if dist[y, x] >= 0 and math.dist((x, y), (gx, gy)) <= radius:
                    best = min(best, float(dist[y, x]))
    return best


def at_goal(scene: Scene, cell: Sequence[int], goal: str, radius: float) -> bool:
    return any(math.dist(cell[:2], o.cell) <= radius for o in scene.instances(goal))


def run_episode(scene: Scene, goal: str, cfg: SystemConfig = SystemConfig(), start: Sequence[int] | None = None,
                provider: EmbeddingProvider | None = None, backing_dir: str | os.PathLike | None = None,
                explore_only: bool = False) -> EpisodeResult:
    """Navigate ``scene`` towards any instance of ``goal``.

    Configuration errors raise; everything that can go wrong during navigation
    ends the episode with a ``termination_reason`` instead.

    With ``explore_only`` the agent always heads for the nearest frontier while
    the memory pipeline runs as usual. Runs that differ only in mode or
    retrieval method then see exactly the same map growth (a growth trace).
    """
    cfg.validate()
    start = tuple(int(c) for c in (start if start is not None else choose_start(scene, 0)))[:2]
    if not scene.is_free(start):
        raise ConfigError(f"start {start} is not a free cell")
    model = get_model(cfg.model)
    provider = provider if provider is not None else make_provider(cfg)
    backend = SemanticOracleBackend(provider) if cfg.backend == SEMANTIC_ORACLE else TinyLLMBackend(model)
    nav = NavigationMap(cfg.dedup_radius)
    store = KVStore(cfg.budget_bytes, backing_dir)
    cache = EmbeddingCache(cfg.per_object_max)
    agent = AgentState(start)
    explored = np.zeros((scene.height, scene.width), dtype=bool)
    path_cap = cfg.path_cap_factor * scene.diagonal
    layers_used = cfg.cluster.layers_used(cfg.model.num_layers)
    tokens: dict[int, int] = {}

    shortest = goal_region_distance(scene, start, goal, cfg.success_radius)
    result = EpisodeResult(False, 0.0, shortest, 0, [], "step-cap", goal, start, params=cfg.latency)

    for step in range(1, cfg.step_cap + 1):
        t0 = time.perf_counter()
        agent.step_index = step
        record: dict = {"type": "step", "step": step, "position": list(agent.position)}

        for x, y in visible_cells(scene, agent.position, cfg.detection_range):
            explored[y, x] = True
        detections = detect(scene, agent.position, cfg.detection_range)
        new_ids = nav.add_detections(step, detections)
        record["new_objects"] = new_ids

        # clustering
        staged = list(nav.staged)
        cluster_cost = 0
        if staged:
            if cfg.cluster_method == ATTENTION:
                blocks = {g: store.get(g) for g in nav.group_ids()} if cfg.cluster.provider == "transformer" else None
                if nav.groups:
                    cluster_cost = sum(len(tokenize(nav.object(o).render(), cfg.model.vocab_size, cfg.model.seed))
                                       for o in staged) * layers_used
                assignments = assign(nav, staged, blocks, cfg.cluster, model, provider)
            else:
                assignments = assign_by_position(nav, staged, cfg.position_radius)
            record["assignments"] = [a.to_record(step) for a in assignments]
            extended, new_gid = apply_assignments(nav, assignments, step)
        else:
            extended, new_gid = {}, None

        # group KV: extend grown groups, compute the new one
        new_tokens: dict[int, int] = {}
        for gid, n_before in sorted(extended.items()):
            seq = tokenize(nav.render_appended(gid, n_before), cfg.model.vocab_size, cfg.model.seed)
            delta = extension_delta(model, store.get(gid), seq)
            store.append(gid, delta)
            tokens[gid] += len(seq)
            new_tokens[gid] = len(seq)
        if new_gid is not None:
            seq = tokenize(nav.render_group(new_gid), cfg.model.vocab_size, cfg.model.seed)
            store.put(new_gid, compute_group_kv(model, seq, 0, new_gid), resident=True, step=step)
            tokens[new_gid] = len(seq)
            new_tokens[new_gid] = len(seq)
        changed = sorted(new_tokens)

        # retrieval
        calls_before = cache.provider_calls
        if cfg.retrieval_method == KNAPSACK:
            retrieval = plan_step(nav, goal, store, None, provider, cfg.retrieval_threshold, cache, changed, cfg.quantum)
        elif cfg.retrieval_method == DISTANCE:
            retrieval = select_by_distance(nav, store, None, agent.position)
        else:
            retrieval = select_all(nav, store)
        embed_calls = cache.provider_calls - calls_before
        record["selected_groups"] = retrieval.selected
        record["probabilities"] = [[g, p] for g, p in sorted(retrieval.probabilities.items())]

        if cfg.mode != costmodel.BASELINE_RECOMPUTE:
            load = store.ensure_resident(retrieval.selected, step)
        else:
            load = LoadReport(step, 0, 0, 0, [], store.device_bytes())
        result.loads.append(load)
        record["load"] = {"hits": load.hits, "misses": load.misses, "loaded_bytes": load.loaded_bytes,
                          "evicted": load.evicted, "device_bytes": load.device_bytes}

        # planning
        dist = bfs_distances(scene, agent.position)
        frontier = nearest_frontier(scene, explored, dist)
        frontier_pos = None if frontier is None else (frontier[0], frontier[1], 0)
        blocks = [store.get(g) for g in retrieval.selected] if cfg.backend == TINY_LLM else ()
        if explore_only:
            decision = None if frontier_pos is None else SubGoalDecision(
                None, FRONTIER_LABEL, frontier_pos, False, format_answer(FRONTIER_LABEL, frontier_pos))
            scores = {}
        else:
            decision, scores = plan(nav, retrieval, goal, backend, frontier_pos, blocks)
        record["candidate_scores"] = [[oid, float(s)] for oid, s in sorted(scores.items())]
        record["decision"] = None if decision is None else decision.to_record()
        suffix_tokens = len(tokenize(prompt_suffix_text(nav, goal), cfg.model.vocab_size, cfg.model.seed))

        # motion
        moved = 0.0
        reason = None
        if decision is None:
            reason = "exhausted"
        else:
            tx, ty = decision.position[0], decision.position[1]
            d = int(dist[ty, tx]) if scene.is_free((tx, ty)) else -1
            if d < 0:
                reason = "unreachable"
            elif agent.path_length + d > path_cap:
                reason = "path-cap"
            else:
                try:
                    moved = move_to(scene, agent, (tx, ty))
                except NavigationError:
                    reason = "unreachable"
                if decision.object_id is not None and reason is None:
                    nav.mark_visited(decision.object_id)
                    agent.visited.append(decision.object_id)

        traffic = StepTraffic(
            suffix_tokens=suffix_tokens,
            selected_tokens=sum(tokens[g] for g in retrieval.selected),
            new_selected_tokens=sum(new_tokens.get(g, 0) for g in retrieval.selected),
            new_tokens=sum(new_tokens.values()),
            loaded_bytes=load.loaded_bytes,
            hits=load.hits,
            misses=load.misses,
            embed_calls=embed_calls,
            cluster_token_layers=cluster_cost,
            distance=moved,
        )
        report = build_report(cfg.mode, traffic, cfg.latency, step)
        result.reports.append(report)
        record["report"] = report.to_record()
        record["rtl_modeled"] = step_latency(report, cfg.latency)
        record["path_length"] = agent.path_length
        result.records.append(record)
        result.wall_clock.append(time.perf_counter() - t0)
        result.steps = step

        if at_goal(scene, agent.position, goal, cfg.success_radius):
            result.success = True
            reason = "success"
        if reason is not None:
            result.termination_reason = reason
            break

    result.agent_path_length = agent.path_length
    result.map_bytes = sum(store.size(g) for g in nav.group_ids() if g in store)
    result.nav = nav
    return result


# -- metrics --------------------------------------------------------------------


def _triples(results) -> list[tuple[float, float, float]]:
    out = []
    for r in results:
        if isinstance(r, EpisodeResult):
            out.append((1.0 if r.success else 0.0, r.shortest_path_length, r.agent_path_length))
        else:
            s, p, l = r
            out.append((float(s), float(p), float(l)))
    return out


def compute_sr(results) -> float:
    t = _triples(results)
    return sum(s for s, _, _ in t) / len(t) if t else 0.0


def compute_spl(results) -> float:
    """Success weighted by shortest over actual path length.

    Accepts EpisodeResults or ``(S, p, l)`` triples. The actual length is clamped
    below by the shortest one; a success with ``p == l == 0`` counts fully.
    """
    t = _triples(results)
    if not t:
        return 0.0
    total = 0.0
    for s, p, l in t:
        if not s:
            continue
        denom = max(p, l)
        total += 1.0 if denom == 0 else p / denom
    return total / len(t)


def group_purity(scene: Scene, nav: NavigationMap) -> tuple[int, int]:
    """``(agreeing, total)``: objects whose room is the majority room of their group."""
    room = {(o.label, o.position): o.room for o in scene.objects}
    agree = total = 0
    for g in nav.groups:
        rooms = [room.get((nav.object(oid).label, nav.object(oid).position), -1) for oid in g.members]
        if not rooms:
            continue
        counts = np.bincount(np.asarray(rooms) + 1)
        agree += int(counts.max())
        total += len(rooms)
    return agree, total


# -- logs -------------------------------------------------------------------------


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def episode_log_lines(result: EpisodeResult, header: dict | None = None) -> list[str]:
    lines = []
    if header is not None:
        lines.append(dumps_record({"type": "header", **header}))
    lines += [dumps_record(r) for r in result.records]
    footer = {"type": "result", **result.summary()}
    lines.append(dumps_record(footer))
    return lines


def write_episode_log(result: EpisodeResult, path: str | os.PathLike, header: dict | None = None) -> None:
    with open(path, "w") as fh:
        for line in episode_log_lines(result, header):
            fh.write(line + "\n")


def read_log(path: str | os.PathLike) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def mean_hit_rate(results: Iterable[EpisodeResult]) -> float | None:
    rates = [r.hit_rate() for r in results]
    rates = [x for x in rates if x is not None]
    return float(np.mean(rates)) if rates else None
