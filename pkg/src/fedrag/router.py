"""Query-domain router: independent per-domain logistic heads over a
frozen base embedding.

Domain relevance is a multi-label problem, so each domain gets its own
sigmoid probability p_j = sigmoid(W e + b)_j and the training objective
is binary cross-entropy summed over domains, averaged over the batch,
plus an L2 penalty on the weights. The objective is convex, so zero
initialization and plain mini-batch SGD are enough.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ioutil import atomic_write_json

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
MODEL_VERSION = 1


@dataclass
class RouterModel:
    weights: np.ndarray  # (m, d)
    bias: np.ndarray  # (m,)
    embedder_fingerprint: str

    @property
    def num_domains(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class RouterTrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    l2_penalty: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs >= 0")


def zero_model(num_domains: int, dimension: int, fingerprint: str) -> RouterModel:
    return RouterModel(
        weights=np.zeros((num_domains, dimension), dtype=np.float64),
        bias=np.zeros(num_domains, dtype=np.float64),
        embedder_fingerprint=fingerprint,
    )


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict(model: RouterModel, query_embedding: np.ndarray) -> np.ndarray:
    """Per-domain relevance probabilities for one query embedding."""
    e = np.asarray(query_embedding, dtype=np.float64)
    if e.shape != (model.dimension,):
        raise ValueError(f"embedding shape {e.shape} does not match router d={model.dimension}")
    return sigmoid(model.weights @ e + model.bias)


def predict_batch(model: RouterModel, embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != model.dimension:
        raise ValueError(f"embedding batch shape {e.shape} does not match router d={model.dimension}")
    return sigmoid(e @ model.weights.T + model.bias)


def bce_loss(model: RouterModel, embeddings: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of the per-domain-summed binary cross-entropy."""
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if e.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape != (e.shape[0], model.num_domains):
        raise ValueError(f"label shape {y.shape} does not match batch")
    p = np.clip(predict_batch(model, e), PROB_EPS, 1.0 - PROB_EPS)
    per_example = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum(axis=1)
    return float(per_example.mean())


def bce_loss_and_grad(
    model: RouterModel,
    embeddings: np.ndarray,
    labels: np.ndarray,
    l2_penalty: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective value and analytic gradients w.r.t. weights and bias.

    The gradient uses the exact sigmoid+BCE form d/dz = (p - y) / B; the
    probability clamp only guards the loss value at saturation.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    loss = bce_loss(model, e, y) + l2_penalty * float(np.sum(model.weights**2))
    p = predict_batch(model, e)
    g = (p - y) / e.shape[0]
    grad_w = g.T @ e + 2.0 * l2_penalty * model.weights
    grad_b = g.sum(axis=0)
    return loss, grad_w, grad_b


def train_router(
    dataset: list[tuple[str, np.ndarray]],
    embedder,
    config: RouterTrainConfig = RouterTrainConfig(),
) -> tuple[RouterModel, list[float]]:
    """Mini-batch SGD on the BCE objective; deterministic for a fixed seed.

    ``dataset`` pairs each query text with a binary label vector of
    length m. Returns the trained model and the per-epoch mean loss.
    """
    if not dataset:
        raise DataError("cannot train router on an empty dataset")
    labels = np.asarray([y for _, y in dataset], dtype=np.float64)
    if labels.ndim != 2:
        raise DataError("label vectors must all have the same length")
    num_domains = labels.shape[1]
    uncovered = np.flatnonzero(labels.sum(axis=0) == 0)
    if uncovered.size:
        logger.warning("domains with no positive routing example: %s", uncovered.tolist())

    embeddings = np.asarray(embedder.embed_batch([q for q, _ in dataset]), dtype=np.float64)
    model = zero_model(num_domains, embeddings.shape[1], embedder.fingerprint)

    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        batch_losses = []
        for start in range(0, len(dataset), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad_w, grad_b = bce_loss_and_grad(
                model, embeddings[idx], labels[idx], config.l2_penalty
            )
            model.weights -= config.learning_rate * grad_w
            model.bias -= config.learning_rate * grad_b
            batch_losses.append(loss)
        trace.append(float(np.mean(batch_losses)))
    return model, trace


def save_router(model: RouterModel, path: str | Path) -> None:
    atomic_write_json(
        path,
        {
            "version": MODEL_VERSION,
            "m": model.num_domains,
            "d": model.dimension,
            "embedder_fingerprint": model.embedder_fingerprint,
            "W": model.weights.tolist(),
            "b": model.bias.tolist(),
        },
    )


def load_router(path: str | Path, expected_fingerprint: str | None = None) -> RouterModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read router model {path}: {exc}") from exc
    if payload.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported router model version {payload.get('version')}")
    model = RouterModel(
        weights=np.asarray(payload["W"], dtype=np.float64),
        bias=np.asarray(payload["b"], dtype=np.float64),
        embedder_fingerprint=payload["embedder_fingerprint"],
    )
    if model.weights.shape != (payload["m"], payload["d"]) or model.bias.shape != (payload["m"],):
        raise DataError(f"{path}: model shapes do not match manifest")
    if expected_fingerprint is not None and model.embedder_fingerprint != expected_fingerprint:
        raise DataError(
            f"{path}: embedder fingerprint mismatch: model has "
            f"{model.embedder_fingerprint!r}, runtime has {expected_fingerprint!r}"
        )
    return model
