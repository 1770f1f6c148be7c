"""Trainable bi-encoder head over the frozen base embedder.

A single projection matrix is shared by the query and document sides
(encoding a text as either yields the same vector). Outputs are
re-normalized after projection so the dot product stays a cosine and
score scales remain comparable across domains.

Training minimizes a symmetric supervised InfoNCE loss: each annotated
positive pair is contrasted against the query's annotated negatives
(query-to-document direction) and against queries that annotate the
document as negative (document-to-query direction). The document side
can fall back to the other in-batch queries via
``include_in_batch_negatives``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .ioutil import atomic_write_json

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
INIT_NOISE_SCALE = 0.01


@dataclass
class ProjectionModel:
    matrix: np.ndarray  # (d', d)
    embedder_fingerprint: str

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class RetrieverTrainConfig:
    temperature: float = 0.05
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    include_in_batch_negatives: bool = False

    def __post_init__(self):
        if self.temperature <= 0 or self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError("temperature, learning_rate and batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainingBatch:
    """Queries with annotated positive/negative document indices.

    Document vectors are shared across the queries of the batch so the
    document-to-query direction can find, for each positive document,
    the queries that annotate it as a negative.
    """

    query_vecs: np.ndarray  # (nq, d) base embeddings
    doc_vecs: np.ndarray  # (nd, d) base embeddings
    positives: list[list[int]] = field(default_factory=list)
    negatives: list[list[int]] = field(default_factory=list)

    def validate(self) -> None:
        nq = self.query_vecs.shape[0]
        if len(self.positives) != nq or len(self.negatives) != nq:
            raise ValueError("positives/negatives must have one entry per query")
        for i in range(nq):
            if not self.positives[i]:
                raise ValueError(f"query {i} has no positive document in batch")
            if not self.negatives[i]:
                raise ValueError(f"query {i} has no negative document in batch")


def identity_model(dimension: int, fingerprint: str) -> ProjectionModel:
    return ProjectionModel(np.eye(dimension, dtype=np.float64), fingerprint)


def init_model(dimension: int, fingerprint: str, seed: int) -> ProjectionModel:
    """Identity plus small seeded Gaussian noise; near-isometric start."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, INIT_NOISE_SCALE, size=(dimension, dimension))
    return ProjectionModel(np.eye(dimension) + noise, fingerprint)


def encode(model: ProjectionModel, base: np.ndarray) -> np.ndarray:
    """L2-normalized projection of a base embedding."""
    base = np.asarray(base, dtype=np.float64)
    if base.shape != (model.dimension,):
        raise ValueError(f"base embedding shape {base.shape} does not match d={model.dimension}")
    v = model.matrix @ base
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ValueError("projected embedding collapsed to the zero vector")
    return v / norm


def encode_batch(model: ProjectionModel, bases: np.ndarray) -> np.ndarray:
    bases = np.asarray(bases, dtype=np.float64)
    v = bases @ model.matrix.T
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("projected embedding collapsed to the zero vector")
    return v / norms


def _logsumexp(z: np.ndarray) -> float:
    m = float(z.max())
    return m + float(np.log(np.exp(z - m).sum()))


def _directional_terms(
    batch: TrainingBatch,
    direction: str,
    include_in_batch_negatives: bool,
) -> list[tuple[str, int, int, list[int]]]:
    """Expand a batch into (anchor_side, anchor, positive, negatives) terms.

    q2d: anchor is the query, candidates are documents.
    d2q: anchor is the positive document, candidates are queries that
    annotate it as negative (optionally all other in-batch queries).
    """
    batch.validate()
    terms = []
    if direction == "q2d":
        for qi, pos in enumerate(batch.positives):
            for di in pos:
                terms.append(("q", qi, di, list(batch.negatives[qi])))
    elif direction == "d2q":
        for qi, pos in enumerate(batch.positives):
            for di in pos:
                neg_queries = [qj for qj, negs in enumerate(batch.negatives) if di in negs]
                if include_in_batch_negatives:
                    extra = [qj for qj in range(len(batch.positives)) if qj != qi]
                    neg_queries = sorted(set(neg_queries) | set(extra))
                neg_queries = [qj for qj in neg_queries if qj != qi]
                if neg_queries:
                    terms.append(("d", di, qi, neg_queries))
    else:
        raise ValueError(f"direction must be 'q2d' or 'd2q', got {direction!r}")
    return terms


class _EncodedBatch:
    """Projected, normalized views of a batch, computed once."""

    def __init__(self, batch: TrainingBatch, model: ProjectionModel):
        self.q_base = np.asarray(batch.query_vecs, dtype=np.float64)
        self.d_base = np.asarray(batch.doc_vecs, dtype=np.float64)
        qv = self.q_base @ model.matrix.T
        dv = self.d_base @ model.matrix.T
        self.q_norms = np.linalg.norm(qv, axis=1)
        self.d_norms = np.linalg.norm(dv, axis=1)
        if np.any(self.q_norms < 1e-12) or np.any(self.d_norms < 1e-12):
            raise ValueError("projected embedding collapsed to the zero vector")
        self.q_enc = qv / self.q_norms[:, None]
        self.d_enc = dv / self.d_norms[:, None]

    def side(self, tag: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if tag == "q":
            return self.q_base, self.q_enc, self.q_norms
        return self.d_base, self.d_enc, self.d_norms


def _term_loss(
    enc: _EncodedBatch,
    term: tuple[str, int, int, list[int]],
    temperature: float,
    grad: np.ndarray | None,
    weight: float,
) -> float:
    """Loss of one InfoNCE term; accumulates d(term)/dP into ``grad``."""
    side, anchor_idx, pos_idx, neg_idx = term
    cand_side = "d" if side == "q" else "q"
    a_base, a_enc, a_norm = (m[anchor_idx] for m in enc.side(side))
    c_base_all, c_enc_all, c_norm_all = enc.side(cand_side)
    idx = [pos_idx] + neg_idx
    c_base = c_base_all[idx]
    c_enc = c_enc_all[idx]
    c_norm = c_norm_all[idx]

    s = c_enc @ a_enc
    z = s / temperature
    lse = _logsumexp(z)
    loss = lse - z[0]

    if grad is not None:
        coeff = np.exp(z - lse) / temperature
        coeff[0] -= 1.0 / temperature
        coeff *= weight
        # anchor side: d s_i / d u = (v_i - s_i u) / |u|
        g_enc = c_enc.T @ coeff
        g_u = (g_enc - (g_enc @ a_enc) * a_enc) / a_norm
        grad += np.outer(g_u, a_base)
        # candidate side: d s_i / d v_i = (u - s_i v_i) / |v_i|
        w = coeff / c_norm
        grad += np.outer(a_enc, c_base.T @ w)
        grad -= (c_enc * (w * s)[:, None]).T @ c_base
    return loss


def infonce_directional(
    batch: TrainingBatch,
    model: ProjectionModel,
    temperature: float,
    direction: str,
    include_in_batch_negatives: bool = False,
) -> float:
    """Mean InfoNCE loss over the positive pairs of one direction."""
    terms = _directional_terms(batch, direction, include_in_batch_negatives)
    if not terms:
        raise ValueError(f"no {direction} terms: batch has no usable negatives in that direction")
    enc = _EncodedBatch(batch, model)
    return float(np.mean([_term_loss(enc, t, temperature, None, 0.0) for t in terms]))


def symmetric_loss(
    batch: TrainingBatch,
    model: ProjectionModel,
    temperature: float,
    include_in_batch_negatives: bool = False,
) -> float:
    """Average of the two directional losses.

    Falls back to the query-to-document loss alone when no in-batch
    document has an annotated negative query (the document direction is
    undefined for such a batch).
    """
    loss, _ = loss_and_grad(
        batch, model, temperature, include_in_batch_negatives, compute_grad=False
    )
    return loss


def loss_and_grad(
    batch: TrainingBatch,
    model: ProjectionModel,
    temperature: float,
    include_in_batch_negatives: bool = False,
    compute_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Symmetric loss and its analytic gradient w.r.t. the projection."""
    q2d_terms = _directional_terms(batch, "q2d", include_in_batch_negatives)
    d2q_terms = _directional_terms(batch, "d2q", include_in_batch_negatives)
    if not q2d_terms:
        raise ValueError("batch has no query-to-document terms")
    enc = _EncodedBatch(batch, model)
    grad = np.zeros_like(model.matrix) if compute_grad else None

    directions = [(q2d_terms, 1.0 if not d2q_terms else 0.5)]
    if d2q_terms:
        directions.append((d2q_terms, 0.5))

    total = 0.0
    for terms, dir_weight in directions:
        weight = dir_weight / len(terms)
        dir_loss = 0.0
        for term in terms:
            dir_loss += _term_loss(enc, term, temperature, grad, weight)
        total += dir_weight * (dir_loss / len(terms))
    return float(total), grad


def build_batches(
    groups: Sequence[tuple[np.ndarray, list[tuple[str, np.ndarray]], list[tuple[str, np.ndarray]]]],
    batch_size: int,
    order: Iterable[int],
) -> list[TrainingBatch]:
    """Assemble TrainingBatches from (query_vec, positives, negatives) groups.

    Positives/negatives are (chunk_id, base_vec) so a document shared by
    several queries in a batch becomes one candidate row.
    """
    ordered = [groups[i] for i in order]
    batches = []
    for start in range(0, len(ordered), batch_size):
        part = ordered[start : start + batch_size]
        doc_index: dict[str, int] = {}
        doc_vecs: list[np.ndarray] = []

        def doc_slot(chunk_id: str, vec: np.ndarray) -> int:
            if chunk_id not in doc_index:
                doc_index[chunk_id] = len(doc_vecs)
                doc_vecs.append(vec)
            return doc_index[chunk_id]

        q_vecs, positives, negatives = [], [], []
        for q_vec, pos, neg in part:
            q_vecs.append(q_vec)
            positives.append([doc_slot(cid, v) for cid, v in pos])
            negatives.append([doc_slot(cid, v) for cid, v in neg])
        batches.append(
            TrainingBatch(
                query_vecs=np.asarray(q_vecs, dtype=np.float64),
                doc_vecs=np.asarray(doc_vecs, dtype=np.float64),
                positives=positives,
                negatives=negatives,
            )
        )
    return batches


def group_pairs(
    pairs,
    chunk_texts: dict[str, str],
    embedder,
) -> list[tuple[np.ndarray, list[tuple[str, np.ndarray]], list[tuple[str, np.ndarray]]]]:
    """Group labeled (query, chunk) pairs by query; drop untrainable groups.

    Each retained group has at least one positive and one negative whose
    chunk text is known. Base embeddings are computed once per unique
    text. Group order follows first appearance in ``pairs``.
    """
    by_query: dict[str, tuple[list, list]] = {}
    for pair in pairs:
        pos, neg = by_query.setdefault(pair.query, ([], []))
        if pair.chunk_id not in chunk_texts:
            raise DataError(f"dataset references unknown chunk id {pair.chunk_id!r}")
        (pos if pair.label else neg).append(pair.chunk_id)

    text_cache: dict[str, np.ndarray] = {}

    def vec(text: str) -> np.ndarray:
        if text not in text_cache:
            text_cache[text] = embedder.embed(text)
        return text_cache[text]

    groups = []
    dropped = 0
    for query, (pos, neg) in by_query.items():
        if not pos or not neg:
            dropped += 1
            continue
        groups.append(
            (
                vec(query),
                [(cid, vec(chunk_texts[cid])) for cid in pos],
                [(cid, vec(chunk_texts[cid])) for cid in neg],
            )
        )
    if dropped:
        logger.debug("dropped %d queries lacking a positive or negative pair", dropped)
    return groups


def train_retriever(
    pairs,
    chunk_texts: dict[str, str],
    embedder,
    config: RetrieverTrainConfig = RetrieverTrainConfig(),
) -> tuple[ProjectionModel, list[float]]:
    """Seeded mini-batch SGD on the symmetric loss; deterministic per seed."""
    groups = group_pairs(pairs, chunk_texts, embedder)
    if not groups:
        raise DataError("no trainable query groups: need a positive and a negative per query")
    dimension = groups[0][0].shape[0]
    model = init_model(dimension, embedder.fingerprint, config.seed)

    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(groups))
        batch_losses = []
        for batch in build_batches(groups, config.batch_size, order):
            loss, grad = loss_and_grad(
                batch, model, config.temperature, config.include_in_batch_negatives
            )
            model.matrix -= config.learning_rate * grad
            batch_losses.append(loss)
        trace.append(float(np.mean(batch_losses)))
    return model, trace


def similarity_margin(pairs, chunk_texts: dict[str, str], embedder, model: ProjectionModel) -> float:
    """Mean encoded similarity of positive pairs minus that of negatives."""
    pos_scores, neg_scores = [], []
    text_cache: dict[str, np.ndarray] = {}

    def enc(text: str) -> np.ndarray:
        if text not in text_cache:
            text_cache[text] = encode(model, embedder.embed(text))
        return text_cache[text]

    for pair in pairs:
        score = float(enc(pair.query) @ enc(chunk_texts[pair.chunk_id]))
        (pos_scores if pair.label else neg_scores).append(score)
    if not pos_scores or not neg_scores:
        raise DataError("margin needs at least one positive and one negative pair")
    return float(np.mean(pos_scores) - np.mean(neg_scores))


def save_retriever(model: ProjectionModel, path: str | Path) -> None:
    atomic_write_json(
        path,
        {
            "version": MODEL_VERSION,
            "d": model.dimension,
            "d_prime": model.output_dimension,
            "embedder_fingerprint": model.embedder_fingerprint,
            "P": model.matrix.tolist(),
        },
    )


def load_retriever(path: str | Path, expected_fingerprint: str | None = None) -> ProjectionModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read retriever model {path}: {exc}") from exc
    if payload.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported retriever model version {payload.get('version')}")
    model = ProjectionModel(
        matrix=np.asarray(payload["P"], dtype=np.float64),
        embedder_fingerprint=payload["embedder_fingerprint"],
    )
    if model.matrix.shape != (payload["d_prime"], payload["d"]):
        raise DataError(f"{path}: projection shape does not match manifest")
    if expected_fingerprint is not None and model.embedder_fingerprint != expected_fingerprint:
        raise DataError(
            f"{path}: embedder fingerprint mismatch: model has "
            f"{model.embedder_fingerprint!r}, runtime has {expected_fingerprint!r}"
        )
    return model
