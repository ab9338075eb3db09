"""Distance functions over extracted feature values, plus embedding providers.

Feature values are plain Python objects: ``str`` (text), ``int``/``float``
(number), ``datetime.date`` (date), ``list`` of those, or ``None`` (missing).
A missing operand yields ``math.inf`` so any finite-threshold predicate fails.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
import re
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import ConfigError, DomainError, approx_token_count

log = logging.getLogger(__name__)

INF = math.inf

_ALNUM = re.compile(r"[^\W_]+")


class DistanceKind(str, Enum):
    WORD_OVERLAP = "word_overlap"
    SEMANTIC = "semantic"
    ARITHMETIC = "arithmetic"
    DATE = "date"

    @classmethod
    def parse(cls, name: str) -> "DistanceKind":
        """Accept both bare kinds and the ``*_similarity`` names used in prompts."""
        key = name.strip().strip("`'\".").lower()
        key = key.removesuffix("_similarity").removesuffix("_distance")
        try:
            return cls(key)
        except ValueError:
            raise DomainError(f"unknown distance function {name!r}") from None


def tokens(text: str) -> frozenset[str]:
    """Lowercased alphanumeric runs."""
    return frozenset(_ALNUM.findall(text.lower()))


def variant(value) -> str:
    if value is None:
        return "missing"
    if isinstance(value, bool):
        raise TypeError("booleans are not feature values")
    if isinstance(value, str):
        return "text"
    if isinstance(value, (int, float, np.integer, np.floating)):
        return "number"
    if isinstance(value, dt.date):
        return "date"
    if isinstance(value, (list, tuple)):
        return "list"
    raise TypeError(f"unsupported feature value {value!r}")


_EXPECTED = {
    DistanceKind.WORD_OVERLAP: "text",
    DistanceKind.SEMANTIC: "text",
    DistanceKind.ARITHMETIC: "number",
    DistanceKind.DATE: "date",
}


def _check(kind: DistanceKind, value) -> None:
    got = variant(value)
    if got != _EXPECTED[kind]:
        raise TypeError(f"{kind.value} distance expects {_EXPECTED[kind]}, got {got}")


def _as_day(value: dt.date) -> int:
    if isinstance(value, dt.datetime):
        value = value.date()
    return value.toordinal()


def jaccard_distance(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 0.0
    return 1.0 - len(a & b) / len(a | b)


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...

    def token_count(self, text: str) -> int: ...


def distance(kind: DistanceKind | str, a, b, provider: EmbeddingProvider | None = None) -> float:
    """Distance between two feature values under ``kind``.

    Lists compare by the minimum over their cross product; an empty list counts
    as missing.
    """
    kind = DistanceKind(kind) if not isinstance(kind, DistanceKind) else kind
    if a is None or b is None:
        return INF
    if isinstance(a, (list, tuple)) or isinstance(b, (list, tuple)):
        xs = list(a) if isinstance(a, (list, tuple)) else [a]
        ys = list(b) if isinstance(b, (list, tuple)) else [b]
        best = INF
        for x in xs:
            for y in ys:
                d = distance(kind, x, y, provider)
                if d < best:
                    best = d
        return best
    _check(kind, a)
    _check(kind, b)
    if kind is DistanceKind.WORD_OVERLAP:
        return jaccard_distance(tokens(a), tokens(b))
    if kind is DistanceKind.ARITHMETIC:
        return abs(float(a) - float(b))
    if kind is DistanceKind.DATE:
        return float(abs(_as_day(a) - _as_day(b)))
    if provider is None:
        raise ConfigError("semantic distance needs an embedding provider")
    va, vb = provider.embed([a, b])
    return cosine_distance(va, vb)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    return float(min(2.0, max(0.0, 1.0 - float(np.dot(u, v)))))


def min_max_normalize(values: Sequence[float]) -> np.ndarray:
    """Affinely map finite values onto [0, 1]; +inf passes through."""
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise DomainError("NaN distances cannot be normalized")
    finite = np.isfinite(arr)
    if not finite.any():
        raise DomainError("need at least one finite value to normalize")
    lo, hi = float(arr[finite].min()), float(arr[finite].max())
    return apply_normalization(arr, lo, hi)


def apply_normalization(values, lo: float, hi: float) -> np.ndarray:
    """Map with stored (lo, hi); values outside the fitted range are clipped."""
    arr = np.asarray(values, dtype=float)
    out = np.full(arr.shape, INF)
    finite = np.isfinite(arr)
    if hi > lo:
        out[finite] = np.clip((arr[finite] - lo) / (hi - lo), 0.0, 1.0)
    else:
        out[finite] = np.where(arr[finite] > lo, 1.0, 0.0)
    return out


class HashingEmbedder:
    """Offline pseudo-embeddings: token counts pushed through a seeded random projection.

    Every token is hashed (blake2b, salted by the seed) into a seed for its own
    Gaussian direction; a text's vector is the count-weighted sum of its token
    directions, scaled to unit length. Texts without tokens map to e_0.
    """

    def __init__(self, dim: int = 128, seed: int = 0, tokenizer=approx_token_count):
        self.dim = int(dim)
        self.seed = int(seed)
        self.name = f"hashing-v1-s{self.seed}"
        self._tokenizer = tokenizer
        self._direction = lru_cache(maxsize=200_000)(self._make_direction)

    def _make_direction(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                                 key=self.seed.to_bytes(8, "little", signed=True)).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            counts: dict[str, int] = {}
            for tok in _ALNUM.findall(text.lower()):
                counts[tok] = counts.get(tok, 0) + 1
            if not counts:
                out[i, 0] = 1.0
                continue
            vec = sum(c * self._direction(t) for t, c in sorted(counts.items()))
            out[i] = vec / np.linalg.norm(vec)
        return out

    def token_count(self, text: str) -> int:
        return self._tokenizer(text)


class CachedEmbedder:
    """Wraps a provider with a JSON vector cache keyed by text digest.

    The cache file records the provider name and dimension; a file written by a
    different provider is ignored rather than mixed in.
    """

    def __init__(self, provider: EmbeddingProvider, path: str | Path | None = None):
        self.provider = provider
        self.name, self.dim = provider.name, provider.dim
        self.path = Path(path) if path else None
        self._vectors: dict[str, np.ndarray] = {}
        self.new_tokens = 0
        if self.path and self.path.exists():
            self._load()

    def _load(self):
        data = json.loads(self.path.read_text())
        if data.get("provider") != self.name or data.get("dim") != self.dim:
            log.warning("embedding cache %s belongs to %s/%s, ignoring", self.path,
                        data.get("provider"), data.get("dim"))
            return
        self._vectors = {k: np.asarray(v) for k, v in data["vectors"].items()}

    def save(self):
        if not self.path:
            return
        payload = {"provider": self.name, "dim": self.dim,
                   "vectors": {k: v.tolist() for k, v in sorted(self._vectors.items())}}
        self.path.write_text(json.dumps(payload))

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        keys = [self.key(t) for t in texts]
        todo = sorted({k: t for k, t in zip(keys, texts) if k not in self._vectors}.items())
        if todo:
            vecs = self.provider.embed([t for _, t in todo])
            for (k, t), v in zip(todo, vecs):
                self._vectors[k] = np.asarray(v, dtype=float)
                self.new_tokens += self.provider.token_count(t)
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self._vectors[k] for k in keys])

    def token_count(self, text: str) -> int:
        return self.provider.token_count(text)
