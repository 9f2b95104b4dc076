"""Group-granular KV caching for LLM-planned object-goal navigation."""

__version__ = "0.1.0"

from .attention import (KVBlock, ModelConfig, TinyTransformer, attend_discrete, compute_group_kv,
                        extend_group_kv, get_model, partial_forward_attention, score_candidates, tokenize)
from .clusterer import ClusterConfig, assign, assign_by_position
from .costmodel import LatencyParams, StepReport, episode_latency, step_latency
from .embedding import HashedTrigramEmbedder, RemoteEmbedder
from .episode import EpisodeResult, SystemConfig, compute_spl, compute_sr, run_episode
from .kvstore import KVStore, hit_rate
from .navmap import NavigationMap
from .retrieval import KnapsackInstance, RetrievalPlan, plan_step, select_groups
from .scene import Scene, SceneConfig, detect, generate_scene, move_to

__all__ = [
    "KVBlock", "ModelConfig", "TinyTransformer", "attend_discrete", "compute_group_kv", "extend_group_kv",
    "get_model", "partial_forward_attention", "score_candidates", "tokenize",
    "ClusterConfig", "assign", "assign_by_position",
    "LatencyParams", "StepReport", "episode_latency", "step_latency",
    "HashedTrigramEmbedder", "RemoteEmbedder",
    "EpisodeResult", "SystemConfig", "compute_spl", "compute_sr", "run_episode",
    "KVStore", "hit_rate", "NavigationMap",
    "KnapsackInstance", "RetrievalPlan", "plan_step", "select_groups",
    "Scene", "SceneConfig", "detect", "generate_scene", "move_to",
]
