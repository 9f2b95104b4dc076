"""Assign newly detected objects to existing groups or to one new group per step.

An object joins the existing group that receives the highest average
attention from it, provided that average exceeds the threshold. Objects that
match no group all go into a single new group, in detection order. The
position-based variant joins the nearest group centroid within a radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .attention import KVBlock, TinyTransformer, partial_forward_attention, tokenize
from .embedding import EmbeddingProvider, cosine
from .navmap import NavigationMap, distance

TRANSFORMER = "transformer"
EMBEDDING = "embedding"


@dataclass(frozen=True)
class ClusterConfig:
    attention_threshold: float = 0.25
    layer_fraction: float = 0.1
    provider: str = EMBEDDING
    max_group_tokens: int = 256
    temperature: float = 0.1
    self_similarity: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.attention_threshold < 1.0:
            raise ValueError("attention_threshold must lie in [0, 1)")
        if not 0.0 < self.layer_fraction <= 1.0:
            raise ValueError("layer_fraction must lie in (0, 1]")
        if self.provider not in (TRANSFORMER, EMBEDDING):
            raise ValueError(f"unknown attention provider {self.provider!r}")

    def layers_used(self, num_layers: int) -> int:
        return max(1, min(num_layers, math.ceil(self.layer_fraction * num_layers)))


@dataclass
class Assignment:
    object_id: int
    target: int | None  # existing group id, or None for the step's new group
    scores: dict[int, float] = field(default_factory=dict)

    def to_record(self, step: int) -> dict:
        return {
            "step": step,
            "object_id": self.object_id,
            "target": "new" if self.target is None else self.target,
            "scores": [[g, round(s, 9)] for g, s in self.scores.items()],
        }


def _pick(scores: Mapping[int, float], threshold: float) -> int | None:
    if not scores:
        return None
    best = min(scores, key=lambda g: (-scores[g], g))
    return best if scores[best] > threshold else None


def _group_tokens(nav: NavigationMap, gid: int, blocks: Mapping[int, KVBlock] | None) -> int:
    if blocks is not None and gid in blocks:
        return blocks[gid].token_count
    return len(tokenize(nav.render_group(gid)))


def embedding_scores(provider: EmbeddingProvider, object_text: str, group_texts: Sequence[str],
                     temperature: float = 0.1, self_similarity: float = 0.5) -> list[float]:
    """Softmax over object-to-group cosine similarities plus a fixed self term.

    The self term plays the part of the probe's attention to itself, so a novel
    object with no similar group keeps most of its mass and stays below threshold.
    """
    if not group_texts:
        return []
    obj = provider.embed(object_text)
    sims = [cosine(obj, provider.embed(t)) for t in group_texts]
    logits = np.array(sims + [self_similarity]) / temperature
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return [float(x) for x in w[:-1]]


def assign(nav: NavigationMap, staged_objects: Sequence[int], blocks: Mapping[int, KVBlock] | None,
           cfg: ClusterConfig, model: TinyTransformer | None = None,
           provider: EmbeddingProvider | None = None) -> list[Assignment]:
    """Decide a target for every staged object against the start-of-step groups."""
    if not nav.groups:
        return [Assignment(oid, None) for oid in staged_objects]
    candidates = [g for g in nav.group_ids() if _group_tokens(nav, g, blocks) < cfg.max_group_tokens]
    if not candidates:
        return [Assignment(oid, None) for oid in staged_objects]
    out = []
    if cfg.provider == TRANSFORMER:
        if model is None or blocks is None:
            raise ValueError("the transformer provider needs a model and the groups' KV blocks")
        layers = cfg.layers_used(model.config.num_layers)
        group_blocks = [blocks[g] for g in candidates]
        for oid in staged_objects:
            probe = model.tokenize(nav.object(oid).render())
            raw = partial_forward_attention(model, group_blocks, probe, layers)
            scores = dict(zip(candidates, raw))
            out.append(Assignment(oid, _pick(scores, cfg.attention_threshold), scores))
    else:
        if provider is None:
            raise ValueError("the embedding provider is required")
        texts = [" ".join(nav.group_labels(g)) for g in candidates]
        for oid in staged_objects:
            raw = embedding_scores(provider, nav.object(oid).label, texts, cfg.temperature, cfg.self_similarity)
            scores = dict(zip(candidates, raw))
            out.append(Assignment(oid, _pick(scores, cfg.attention_threshold), scores))
    return out


def assign_by_position(nav: NavigationMap, staged_objects: Sequence[int], radius: float) -> list[Assignment]:
    """Join the nearest group centroid within ``radius``; ties go to the lowest group id."""
    centroids = {g: c for g in nav.group_ids() if (c := nav.group_centroid(g)) is not None}
    out = []
    for oid in staged_objects:
        pos = nav.object(oid).position
        dists = {g: distance(c, pos) for g, c in centroids.items()}
        target = None
        if dists:
            best = min(dists, key=lambda g: (dists[g], g))
            if dists[best] <= radius:
                target = best
        out.append(Assignment(oid, target, {g: -d for g, d in dists.items()}))
    return out


def apply_assignments(nav: NavigationMap, assignments: Sequence[Assignment], step: int) -> tuple[dict[int, int], int | None]:
    """Place objects on the map.

    Returns ``(extended, new_group)``: member counts before this step for every
    existing group that grew, and the id of the step's new group (or None).
    """
    extended: dict[int, int] = {}
    leftovers = []
    for a in assignments:
        if a.target is None:
            leftovers.append(a.object_id)
            continue
        extended.setdefault(a.target, len(nav.group(a.target).members))
        nav.place(a.object_id, a.target)
    new_group = nav.new_group(leftovers, step) if leftovers else None
    return extended, new_group
