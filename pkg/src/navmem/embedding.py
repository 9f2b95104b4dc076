"""Text embedding providers used for group relevance and semantic clustering.

The reference provider hashes character trigrams into a fixed-width signed
feature vector. Labels found in the theme lexicon additionally carry a seeded
direction per theme, which stands in for the common-sense association a
vision-language encoder would supply (an oven and a pot land close together).
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import re
import urllib.error
import urllib.request
from importlib import resources
from typing import Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"\w+")


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@functools.lru_cache(maxsize=1)
def load_themes() -> dict[str, list[str]]:
    with resources.files("navmem").joinpath("data/themes.json").open() as fh:
        return json.load(fh)


def default_lexicon() -> dict[str, str]:
    return {label: theme for theme, labels in load_themes().items() for label in labels}


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _hash(text: str, seed: int) -> int:
    digest = hashlib.blake2b(text.encode(), digest_size=8, key=seed.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little")


class HashedTrigramEmbedder:
    """Deterministic reference provider: signed trigram hashing plus theme directions."""

    def __init__(self, dim: int = 256, seed: int = 0, lexicon: dict[str, str] | None = None,
                 theme_weight: float = 2.0):
        self.dim = dim
        self.seed = seed
        self.theme_weight = theme_weight
        self.lexicon = default_lexicon() if lexicon is None else {k.lower(): v for k, v in lexicon.items()}
        self._phrases = {tuple(_WORD_RE.findall(k)): k for k in self.lexicon}
        self._max_phrase = max((len(p) for p in self._phrases), default=1)
        self._memo: dict[str, np.ndarray] = {}
        self.calls = 0
        self.version = 0

    def _trigrams(self, unit: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f"#{unit}#"
        for i in range(max(1, len(padded) - 2)):
            h = _hash(padded[i:i + 3], self.seed)
            vec[h % self.dim] += 1.0 if (h >> 32) & 1 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec

    @functools.lru_cache(maxsize=64)
    def _theme_vec(self, theme: str) -> np.ndarray:
        rng = np.random.default_rng(_hash("theme:" + theme, self.seed))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def _units(self, text: str) -> list[tuple[str, str | None]]:
        words = _WORD_RE.findall(text.lower())
        units, i = [], 0
        while i < len(words):
            for n in range(min(self._max_phrase, len(words) - i), 0, -1):
                phrase = tuple(words[i:i + n])
                if phrase in self._phrases:
                    label = self._phrases[phrase]
                    units.append((label, self.lexicon[label]))
                    i += n
                    break
            else:
                units.append((words[i], None))
                i += 1
        return units

    def embed(self, text: str) -> np.ndarray:
        self.calls += 1
        if text in self._memo:
            return self._memo[text]
        vec = np.zeros(self.dim)
        for unit, theme in self._units(text):
            vec += self._trigrams(unit)
            if theme is not None:
                vec += self.theme_weight * self._theme_vec(theme)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec = self._trigrams("")
            norm = np.linalg.norm(vec)
        vec = vec / norm
        vec.setflags(write=False)
        self._memo[text] = vec
        return vec

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class RemoteEmbeddingError(RuntimeError):
    pass


class RemoteEmbedder:
    """Client for an external embedding service (``POST /embed``).

    Request ``{"texts": [...]}``, response ``{"vectors": [[...]], "dim": E}``.
    Vectors must be unit length with the declared dimension. Any failure switches
    this client to the fallback provider for the rest of its life, so vectors
    of different providers are never compared with each other.
    """

    def __init__(self, endpoint: str, fallback: EmbeddingProvider | None = None, timeout: float = 2.0,
                 norm_tol: float = 1e-6):
        self.endpoint = endpoint.rstrip("/")
        self.fallback = fallback or HashedTrigramEmbedder()
        self.timeout = timeout
        self.norm_tol = norm_tol
        self.dim: int | None = None
        self.fell_back = False
        self.calls = 0
        self.version = 0
        self._memo: dict[str, np.ndarray] = {}

    def _request(self, texts: Sequence[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": list(texts)}).encode()
        url = self.endpoint if self.endpoint.endswith("/embed") else self.endpoint + "/embed"
        req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read())
        dim = int(payload["dim"])
        vectors = [np.asarray(v, dtype=np.float64) for v in payload["vectors"]]
        if len(vectors) != len(texts):
            raise RemoteEmbeddingError(f"asked for {len(texts)} vectors, got {len(vectors)}")
        if self.dim is not None and dim != self.dim:
            raise RemoteEmbeddingError(f"dimension changed from {self.dim} to {dim}")
        for v in vectors:
            if v.shape != (dim,):
                raise RemoteEmbeddingError(f"vector shape {v.shape} does not match dim {dim}")
            if abs(float(np.linalg.norm(v)) - 1.0) > self.norm_tol:
                raise RemoteEmbeddingError("vector is not unit length")
        self.dim = dim
        return vectors

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        self.calls += 1
        if self.fell_back:
            return self.fallback.embed_many(texts)
        todo = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if todo:
            try:
                for t, v in zip(todo, self._request(todo)):
                    self._memo[t] = v
            except (OSError, ValueError, KeyError, TypeError, RemoteEmbeddingError, urllib.error.URLError) as exc:
                log.warning("embedding service %s failed (%s); falling back to the reference provider",
                            self.endpoint, exc)
                self.fell_back = True
                self.version += 1
                self.dim = self.fallback.dim
                return self.fallback.embed_many(texts)
        return [self._memo[t] for t in texts]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]
