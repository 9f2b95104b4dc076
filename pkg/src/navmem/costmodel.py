"""Modeled planning latency (RtL) and whole-episode latency (E2EL).

Latency here is a linear function of per-step counters, not a wall-clock
measurement. Which counters a step accumulates depends on the caching mode:

* ``baseline-recompute``: the whole prompt is prefilled every step.
* ``offload-per-decode``: cached KV lives in slow storage and the retrieved
  groups are streamed in again for every decoded token.
* ``efficientnav``: retrieved groups are loaded once per step; only the
  instruction/trajectory suffix and newly appended objects are prefilled.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

BASELINE_RECOMPUTE = "baseline-recompute"
OFFLOAD_PER_DECODE = "offload-per-decode"
EFFICIENTNAV = "efficientnav"
MODES = (BASELINE_RECOMPUTE, OFFLOAD_PER_DECODE, EFFICIENTNAV)

MB = float(2 ** 20)


@dataclass(frozen=True)
class LatencyParams:
    prefill_per_token: float = 3e-3
    decode_per_token: float = 0.01
    transfer_per_mb: float = 0.02
    embed_per_group: float = 2e-3
    cluster_per_token_layer: float = 1.5e-4
    move_per_cell: float = 0.25
    decode_tokens_per_plan: int = 40

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")


@dataclass(frozen=True)
class StepTraffic:
    """Mode-independent facts about one navigation step."""

    suffix_tokens: int = 0
    selected_tokens: int = 0
    new_selected_tokens: int = 0
    new_tokens: int = 0
    loaded_bytes: int = 0
    hits: int = 0
    misses: int = 0
    embed_calls: int = 0
    cluster_token_layers: int = 0
    distance: float = 0.0


@dataclass
class StepReport:
    step: int = 0
    mode: str = EFFICIENTNAV
    prompt_tokens_total: int = 0
    tokens_recomputed: int = 0
    tokens_newly_cached: int = 0
    kv_bytes_loaded: int = 0
    hits: int = 0
    misses: int = 0
    decode_tokens: int = 0
    embed_calls: int = 0
    cluster_token_layers: int = 0
    distance_moved: float = 0.0

    def __post_init__(self):
        if self.tokens_recomputed > self.prompt_tokens_total:
            raise ValueError("tokens_recomputed exceeds prompt_tokens_total")

    def to_record(self) -> dict:
        return asdict(self)


def build_report(mode: str, traffic: StepTraffic, params: LatencyParams, step: int = 0) -> StepReport:
    """Translate one step's traffic into the counters a given mode pays for."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    decode = params.decode_tokens_per_plan
    prompt = traffic.selected_tokens + traffic.suffix_tokens
    common = dict(step=step, mode=mode, prompt_tokens_total=prompt, decode_tokens=decode,
                  embed_calls=traffic.embed_calls, cluster_token_layers=traffic.cluster_token_layers,
                  distance_moved=traffic.distance)
    if mode == BASELINE_RECOMPUTE:
        return StepReport(tokens_recomputed=prompt, **common)
    recomputed = traffic.suffix_tokens + traffic.new_selected_tokens
    loaded = traffic.loaded_bytes * (decode if mode == OFFLOAD_PER_DECODE else 1)
    return StepReport(tokens_recomputed=recomputed, tokens_newly_cached=traffic.new_tokens,
                      kv_bytes_loaded=loaded, hits=traffic.hits, misses=traffic.misses, **common)


def transfer_seconds(report: StepReport, params: LatencyParams) -> float:
    return params.transfer_per_mb * (report.kv_bytes_loaded / MB)


def step_latency(report: StepReport, params: LatencyParams) -> float:
    """Modeled real-time planning latency of one step, in seconds."""
    return (params.prefill_per_token * report.tokens_recomputed
            + params.decode_per_token * report.decode_tokens
            + transfer_seconds(report, params)
            + params.embed_per_group * report.embed_calls
            + params.cluster_per_token_layer * report.cluster_token_layers)


def episode_latency(reports: Sequence[StepReport], params: LatencyParams) -> float:
    """Planning time of every step plus motion time."""
    planning = sum(step_latency(r, params) for r in reports)
    return planning + params.move_per_cell * sum(r.distance_moved for r in reports)


def mean_rtl(reports: Sequence[StepReport], params: LatencyParams) -> float:
    if not reports:
        return 0.0
    return sum(step_latency(r, params) for r in reports) / len(reports)


CSV_COLUMNS = [f.name for f in fields(StepReport)] + ["rtl_modeled", "rtl_wall"]


def write_reports_csv(reports: Iterable[StepReport], params: LatencyParams, path: str | os.PathLike,
                      wall_clock: Sequence[float] | None = None) -> None:
    """One row per step: all counters, modeled RtL, and measured wall-clock RtL (kept separate)."""
    reports = list(reports)
    wall = list(wall_clock) if wall_clock is not None else [float("nan")] * len(reports)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r, w in zip(reports, wall):
            rec = r.to_record()
            writer.writerow([rec[c] for c in CSV_COLUMNS[:-2]] + [step_latency(r, params), w])
