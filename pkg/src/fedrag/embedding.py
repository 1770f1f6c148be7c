"""Pluggable text embedders and the dot-product similarity primitive.

The built-in backend is a signed feature hasher over lowercased word
unigrams and within-word character 3-5 grams: fully deterministic, no
model weights, stable across processes (BLAKE2, never Python's hash()).
A remote backend forwards to an HTTP encoder service when a real model
is available; both produce unit-norm vectors by default so dot product
equals cosine.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import requests

from .errors import RemoteBackendError

_CHAR_NGRAM_SIZES = (3, 4, 5)


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "hashed"
    dimension: int = 256
    normalize: bool = True
    seed: int = 0
    endpoint: str | None = None
    timeout: float = 10.0
    max_inflight: int = 8

    def __post_init__(self):
        if self.dimension < 8:
            raise ValueError(f"embedding dimension must be >= 8, got {self.dimension}")
        if self.backend not in ("hashed", "remote"):
            raise ValueError(f"unknown embedder backend {self.backend!r}")
        if self.backend == "remote" and not self.endpoint:
            raise ValueError("remote embedder requires an endpoint URL")

    def fingerprint(self) -> str:
        parts = [self.backend, f"dim={self.dimension}", f"norm={int(self.normalize)}"]
        if self.backend == "hashed":
            parts.append(f"seed={self.seed}")
        else:
            parts.append(f"endpoint={self.endpoint}")
        return ":".join(parts)


def _text_features(text: str) -> list[str]:
    """Word unigrams plus within-word char n-grams, namespaced apart."""
    feats: list[str] = []
    for word in text.lower().split():
        feats.append("w:" + word)
        for n in _CHAR_NGRAM_SIZES:
            for i in range(len(word) - n + 1):
                feats.append("c:" + word[i : i + n])
    return feats


class HashedEmbedder:
    """Signed hashing of text features into ``dimension`` buckets."""

    def __init__(self, config: EmbedderConfig):
        self.config = config
        self._key = config.seed.to_bytes(8, "little", signed=True)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def _bucket(self, feature: str) -> tuple[int, float]:
        digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=5, key=self._key).digest()
        index = int.from_bytes(digest[:4], "little") % self.config.dimension
        sign = 1.0 if digest[4] & 1 else -1.0
        return index, sign

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.config.dimension, dtype=np.float64)
        for feature in _text_features(text):
            index, sign = self._bucket(feature)
            vec[index] += sign
        if self.config.normalize:
            norm = float(np.linalg.norm(vec))
            if norm < 1e-12:
                raise ValueError("embedding collapsed to the zero vector")
            vec /= norm
        return vec

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for i, text in enumerate(texts):
            try:
                out.append(self.embed(text))
            except ValueError as exc:
                raise ValueError(f"text at position {i}: {exc}") from exc
        return out


class RemoteEmbedder:
    """Client for the ``POST /embed`` wire protocol.

    Request ``{"texts": [...]}``, response ``{"vectors": [[...], ...]}``.
    In-flight requests are bounded by ``max_inflight``.
    """

    def __init__(self, config: EmbedderConfig):
        self.config = config
        self._gate = threading.Semaphore(config.max_inflight)
        self._session = requests.Session()

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        for i, text in enumerate(texts):
            if not text.strip():
                raise ValueError(f"text at position {i}: cannot embed empty text")
        with self._gate:
            try:
                resp = self._session.post(
                    self.config.endpoint,
                    json={"texts": texts},
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                raise RemoteBackendError(f"embedder request failed: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteBackendError(
                f"embedder returned HTTP {resp.status_code}", status=resp.status_code
            )
        try:
            vectors = resp.json()["vectors"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise RemoteBackendError(f"embedder returned malformed payload: {exc}") from exc
        if len(vectors) != len(texts):
            raise RemoteBackendError(
                f"embedder returned {len(vectors)} vectors for {len(texts)} texts"
            )
        out = []
        for i, values in enumerate(vectors):
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (self.config.dimension,):
                raise RemoteBackendError(
                    f"vector {i} has dimension {vec.shape}, expected ({self.config.dimension},)"
                )
            if self.config.normalize:
                norm = float(np.linalg.norm(vec))
                if norm < 1e-12:
                    raise RemoteBackendError(f"vector {i} has zero norm")
                vec = vec / norm
            out.append(vec)
        return out


Embedder = HashedEmbedder | RemoteEmbedder


@lru_cache(maxsize=8)
def _cached_embedder(config: EmbedderConfig) -> Embedder:
    return HashedEmbedder(config) if config.backend == "hashed" else RemoteEmbedder(config)


def build_embedder(config: EmbedderConfig) -> Embedder:
    return _cached_embedder(config)


def embed(text: str, config: EmbedderConfig) -> np.ndarray:
    return build_embedder(config).embed(text)


def embed_batch(texts: list[str], config: EmbedderConfig) -> list[np.ndarray]:
    return build_embedder(config).embed_batch(texts)


def similarity(q: np.ndarray, d: np.ndarray) -> float:
    """Dot-product relevance score between two embeddings."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape != d.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {d.shape}")
    return float(q @ d)
