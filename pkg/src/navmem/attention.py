"""Deterministic miniature decoder-only transformer with group-granular KV caching.

Every group's KV block is computed on its own (no other group visible) at
position offset 0. Planning runs a suffix that attends causally to the
concatenated cached blocks, so the blocks never attend to one another and the
result does not depend on the order in which blocks are retrieved.

Weights and cached K/V are float32. Activations accumulate in float64 and K/V
are rounded to float32 the moment they are produced, so a cached row and a
freshly computed row feed attention identical values regardless of matrix
shape. Weights are seeded Gaussians (std 0.02) with unit-gain RMS norms;
nothing is trained.
"""

from __future__ import annotations

import functools
import hashlib
import re
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

F32 = np.float32
_PIECE_RE = re.compile(r"\w+|[^\w\s]")
_HEADER = struct.Struct("<QIIIII")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 8
    num_heads: int = 4
    model_dim: int = 128
    vocab_size: int = 4096
    rope_base: float = 10000.0
    seed: int = 0
    mlp_ratio: int = 4

    def __post_init__(self):
        if min(self.num_layers, self.num_heads, self.model_dim, self.vocab_size) < 1:
            raise ValueError("model dimensions must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if (self.model_dim // self.num_heads) % 2:
            raise ValueError("head_dim must be even for rotary embeddings")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def key(self) -> str:
        raw = repr(sorted(self.__dict__.items())).encode()
        return hashlib.blake2b(raw, digest_size=8).hexdigest()

    def bytes_per_token(self) -> int:
        return 2 * 4 * self.num_layers * self.num_heads * self.head_dim


# -- tokenizer ---------------------------------------------------------------


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    source_text: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def __add__(self, other: "TokenSeq") -> "TokenSeq":
        return TokenSeq(self.tokens + other.tokens, self.source_text + other.source_text)


def split_pieces(text: str) -> list[str]:
    return _PIECE_RE.findall(text)


@functools.lru_cache(maxsize=65536)
def _piece_id(piece: str, vocab_size: int, seed: int) -> int:
    digest = hashlib.blake2b(piece.encode(), digest_size=8, key=seed.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little") % vocab_size


def tokenize(text: str, vocab_size: int = 4096, seed: int = 0) -> TokenSeq:
    """Split on whitespace and punctuation; hash each piece into ``vocab_size`` ids."""
    ids = tuple(_piece_id(p, vocab_size, seed) for p in split_pieces(text))
    return TokenSeq(ids, text)


def detokenize(seq: TokenSeq) -> str:
    return seq.source_text


# -- KV blocks ---------------------------------------------------------------


@dataclass
class KVBlock:
    """Cached keys/values of one group: arrays shaped (layers, heads, tokens, head_dim)."""

    group_id: int
    k: np.ndarray
    v: np.ndarray
    position_offset: int = 0
    model_key: str | None = field(default=None, compare=False)

    @property
    def token_count(self) -> int:
        return int(self.k.shape[2])

    @property
    def num_layers(self) -> int:
        return int(self.k.shape[0])

    @property
    def end_position(self) -> int:
        return self.position_offset + self.token_count

    @property
    def nbytes(self) -> int:
        return _HEADER.size + self.k.nbytes + self.v.nbytes

    def to_bytes(self) -> bytes:
        n_layers, n_heads, n_tok, head_dim = self.k.shape
        header = _HEADER.pack(self.group_id, n_layers, n_heads, head_dim, n_tok, self.position_offset)
        return header + self.k.astype("<f4").tobytes() + self.v.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, model_key: str | None = None) -> "KVBlock":
        group_id, n_layers, n_heads, head_dim, n_tok, offset = _HEADER.unpack_from(data)
        shape = (n_layers, n_heads, n_tok, head_dim)
        count = n_layers * n_heads * n_tok * head_dim
        expected = _HEADER.size + 8 * count
        if len(data) != expected:
            raise ValueError(f"KV block payload is {len(data)} bytes, expected {expected}")
        k = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size).astype(F32).reshape(shape)
        v = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size + 4 * count).astype(F32).reshape(shape)
        return cls(group_id, k, v, offset, model_key)

    def concat(self, delta: "KVBlock") -> "KVBlock":
        if delta.token_count == 0:
            return self
        return KVBlock(
            self.group_id,
            np.concatenate([self.k, delta.k], axis=2),
            np.concatenate([self.v, delta.v], axis=2),
            self.position_offset,
            self.model_key,
        )

    def tail(self, start: int) -> "KVBlock":
        """Rows ``start:`` as a delta block positioned right after the kept prefix."""
        return KVBlock(self.group_id, self.k[:, :, start:].copy(), self.v[:, :, start:].copy(),
                       self.position_offset + start, self.model_key)

    def layer_bytes(self, n_layers: int) -> int:
        """Payload bytes held by the first ``n_layers`` layers (no header)."""
        n_layers = min(n_layers, self.num_layers)
        return 2 * 4 * n_layers * int(np.prod(self.k.shape[1:]))


class ModelMismatchError(ValueError):
    pass


# -- model -------------------------------------------------------------------


class TinyTransformer:
    """Seeded, untrained pre-norm decoder with rotary positions and tied embeddings."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        cfg = config
        rng = np.random.default_rng(cfg.seed)
        d, hidden = cfg.model_dim, cfg.mlp_ratio * cfg.model_dim

        def gauss(*shape):
            return (rng.standard_normal(shape) * 0.02).astype(F32)

        self.tok_emb = gauss(cfg.vocab_size, d)
        self.layers = []
        for _ in range(cfg.num_layers):
            layer = {
                "wq": gauss(d, d), "wk": gauss(d, d), "wv": gauss(d, d), "wo": gauss(d, d),
                "w1": gauss(d, hidden), "w2": gauss(hidden, d),
            }
            self.layers.append({name: w.astype(np.float64) for name, w in layer.items()})
        self._emb64 = self.tok_emb.astype(np.float64)
        half = cfg.head_dim // 2
        self._inv_freq = cfg.rope_base ** (-np.arange(half, dtype=np.float64) * 2.0 / cfg.head_dim)
        self._scale = 1.0 / np.sqrt(cfg.head_dim)

    @property
    def key(self) -> str:
        return self.config.key

    def tokenize(self, text: str) -> TokenSeq:
        return tokenize(text, self.config.vocab_size, self.config.seed)

    # building blocks

    def _rope(self, x: np.ndarray, positions: np.ndarray) -> np.ndarray:
        # x: (heads, T, head_dim); rotate pairs (2i, 2i+1)
        angles = positions.astype(np.float64)[:, None] * self._inv_freq[None, :]
        cos = np.cos(angles)
        sin = np.sin(angles)
        even, odd = x[..., 0::2], x[..., 1::2]
        out = np.empty_like(x)
        out[..., 0::2] = even * cos - odd * sin
        out[..., 1::2] = even * sin + odd * cos
        return out

    @staticmethod
    def _rmsnorm(x: np.ndarray) -> np.ndarray:
        ms = np.mean(x * x, axis=-1, keepdims=True)
        return x / np.sqrt(ms + 1e-6)

    def run(self, tokens: Sequence[int], positions: np.ndarray, past_k: np.ndarray | None = None,
            past_v: np.ndarray | None = None, n_layers: int | None = None, keep_probs: bool = False):
        """Forward ``tokens`` over ``n_layers`` layers, attending to ``past`` then causally.

        ``past_k``/``past_v`` are (layers, heads, P, head_dim) and fully visible to every
        new token. Returns (hidden, new_k, new_v, probs) where probs is a per-layer list
        of (heads, T, P + T) attention matrices when ``keep_probs`` is set.
        """
        cfg = self.config
        n_layers = cfg.num_layers if n_layers is None else n_layers
        n_heads, head_dim = cfg.num_heads, cfg.head_dim
        tokens = np.asarray(tokens, dtype=np.int64)
        T = len(tokens)
        P = 0 if past_k is None else past_k.shape[2]
        x = self._emb64[tokens]
        new_k = np.empty((n_layers, n_heads, T, head_dim), dtype=F32)
        new_v = np.empty_like(new_k)
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)
        probs_out = []
        for li in range(n_layers):
            w = self.layers[li]
            h = self._rmsnorm(x)
            q = (h @ w["wq"]).reshape(T, n_heads, head_dim).transpose(1, 0, 2)
            k = (h @ w["wk"]).reshape(T, n_heads, head_dim).transpose(1, 0, 2)
            v = (h @ w["wv"]).reshape(T, n_heads, head_dim).transpose(1, 0, 2)
            q = self._rope(q, positions)
            new_k[li] = self._rope(k, positions)
            new_v[li] = v
            if P:
                keys = np.concatenate([past_k[li], new_k[li]], axis=1).astype(np.float64)
                vals = np.concatenate([past_v[li], new_v[li]], axis=1).astype(np.float64)
            else:
                keys, vals = new_k[li].astype(np.float64), new_v[li].astype(np.float64)
            scores = (q @ keys.transpose(0, 2, 1)) * self._scale
            scores[:, :, P:][:, causal] = -np.inf
            scores -= scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            if keep_probs:
                probs_out.append(probs)
            attn = (probs @ vals).transpose(1, 0, 2).reshape(T, cfg.model_dim)
            x = x + attn @ w["wo"]
            h = self._rmsnorm(x)
            x = x + _gelu(h @ w["w1"]) @ w["w2"]
        return x, new_k, new_v, probs_out

    def logits(self, hidden: np.ndarray) -> np.ndarray:
        return (self._rmsnorm(hidden) @ self._emb64.T).astype(F32)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))


@functools.lru_cache(maxsize=8)
def get_model(config: ModelConfig = ModelConfig()) -> TinyTransformer:
    return TinyTransformer(config)


# -- operations ----------------------------------------------------------------


def _positions(start: int, n: int) -> np.ndarray:
    return np.arange(start, start + n, dtype=np.int64)


def _empty_block(model: TinyTransformer, group_id: int, offset: int) -> KVBlock:
    cfg = model.config
    shape = (cfg.num_layers, cfg.num_heads, 0, cfg.head_dim)
    return KVBlock(group_id, np.zeros(shape, F32), np.zeros(shape, F32), offset, model.key)


def compute_group_kv(model: TinyTransformer, seq: TokenSeq, position_offset: int = 0, group_id: int = 0) -> KVBlock:
    """Full causal forward over ``seq`` alone; returns every layer's keys and values."""
    if position_offset < 0:
        raise ValueError("position_offset must be >= 0")
    if len(seq) == 0:
        return _empty_block(model, group_id, position_offset)
    _, k, v, _ = model.run(seq.tokens, _positions(position_offset, len(seq)))
    return KVBlock(group_id, k, v, position_offset, model.key)


def _check_block(model: TinyTransformer, block: KVBlock) -> None:
    cfg = model.config
    shape = (cfg.num_layers, cfg.num_heads, cfg.head_dim)
    got = (block.k.shape[0], block.k.shape[1], block.k.shape[3])
    if got != shape or (block.model_key is not None and block.model_key != model.key):
        raise ModelMismatchError(f"block for group {block.group_id} was not produced by this model")


def extend_group_kv(model: TinyTransformer, block: KVBlock, new_tokens: TokenSeq) -> KVBlock:
    """Append ``new_tokens`` to a cached block without touching its existing rows."""
    return block.concat(extension_delta(model, block, new_tokens))


def extension_delta(model: TinyTransformer, block: KVBlock, new_tokens: TokenSeq) -> KVBlock:
    """KV rows produced by ``new_tokens`` continuing ``block``; the block is unchanged."""
    _check_block(model, block)
    if len(new_tokens) == 0:
        return _empty_block(model, block.group_id, block.end_position)
    past_k = block.k if block.token_count else None
    past_v = block.v if block.token_count else None
    _, k, v, _ = model.run(new_tokens.tokens, _positions(block.end_position, len(new_tokens)), past_k, past_v)
    return KVBlock(block.group_id, k, v, block.end_position, model.key)


def _stack(model: TinyTransformer, blocks: Sequence[KVBlock], n_layers: int | None = None):
    ids = [b.group_id for b in blocks]
    if len(set(ids)) != len(ids):
        raise ValueError("blocks must have distinct group ids")
    for b in blocks:
        _check_block(model, b)
    live = [b for b in blocks if b.token_count]
    start = max((b.end_position for b in blocks), default=0)
    if not live:
        return None, None, start
    n = model.config.num_layers if n_layers is None else n_layers
    past_k = np.concatenate([b.k[:n] for b in live], axis=2)
    past_v = np.concatenate([b.v[:n] for b in live], axis=2)
    return past_k, past_v, start


def attend_discrete(model: TinyTransformer, blocks: Sequence[KVBlock], suffix: TokenSeq) -> np.ndarray:
    """Final-layer logits for ``suffix`` attending to cached blocks plus its own prefix.

    Suffix positions start at the largest ``position_offset + T`` over the blocks.
    """
    if len(suffix) == 0:
        raise ValueError("suffix must be non-empty")
    past_k, past_v, start = _stack(model, blocks)
    hidden, _, _, _ = model.run(suffix.tokens, _positions(start, len(suffix)), past_k, past_v)
    return model.logits(hidden)


def partial_forward_attention(model: TinyTransformer, blocks: Sequence[KVBlock], probe: TokenSeq,
                              layers_used: int) -> list[float]:
    """Mean post-softmax attention mass the probe places on each block's keys.

    Averages over probe tokens, heads, and the first ``layers_used`` layers. The
    remaining mass (to the probe's own tokens) is what makes each row sum to one.
    """
    if not 1 <= layers_used <= model.config.num_layers:
        raise ValueError(f"layers_used must be in [1, {model.config.num_layers}]")
    if not blocks:
        return []
    if len(probe) == 0:
        raise ValueError("probe must be non-empty")
    past_k, past_v, start = _stack(model, blocks, layers_used)
    _, _, _, probs = model.run(probe.tokens, _positions(start, len(probe)), past_k, past_v,
                               n_layers=layers_used, keep_probs=True)
    stacked = np.stack(probs)  # (layers, heads, T, P + T)
    scores, col = [], 0
    for b in blocks:
        t = b.token_count
        mass = stacked[..., col:col + t].sum(axis=-1, dtype=np.float64)
        scores.append(float(mass.mean()))
        col += t
    return scores


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def score_candidates(model: TinyTransformer, blocks: Sequence[KVBlock], prompt_suffix: TokenSeq,
                     candidates: Sequence[str]) -> list[float]:
    """Teacher-forced log-probability of each candidate continuing ``prompt_suffix``.

    The suffix is run once over the cached blocks; each candidate then attends to
    blocks plus suffix.
    """
    if len(prompt_suffix) == 0:
        raise ValueError("prompt_suffix must be non-empty")
    past_k, past_v, start = _stack(model, blocks)
    hidden, sk, sv, _ = model.run(prompt_suffix.tokens, _positions(start, len(prompt_suffix)), past_k, past_v)
    last = log_softmax(model.logits(hidden[-1:]))[0]
    full_k = sk if past_k is None else np.concatenate([past_k, sk], axis=2)
    full_v = sv if past_v is None else np.concatenate([past_v, sv], axis=2)
    cand_start = start + len(prompt_suffix)
    memo: dict[str, float] = {}
    scores = []
    for text in candidates:
        if text in memo:
            scores.append(memo[text])
            continue
        seq = model.tokenize(text)
        if len(seq) == 0:
            raise ValueError("empty candidate")
        total = float(last[seq.tokens[0]])
        if len(seq) > 1:
            h, _, _, _ = model.run(seq.tokens[:-1], _positions(cand_start, len(seq) - 1), full_k, full_v)
            lp = log_softmax(model.logits(h))
            total += float(sum(lp[i, tok] for i, tok in enumerate(seq.tokens[1:])))
        memo[text] = total
        scores.append(total)
    return scores
