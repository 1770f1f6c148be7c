"""Retrieval metrics, response-quality judges, and the benchmark runner.

The benchmark trains the router and retriever per seed, builds the
federated index, and scores every configured method on a held-out query
split (80/20 by unique query text, seeded). Judges are pluggable: the
deterministic mocks keep the whole suite network-free, while remote
judges speak the ``POST /judge`` wire protocol.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from . import kernels
from .corpus import Corpus, Domain, read_chunks
from .datagen import (
    QueryDocPair,
    SyntheticSpec,
    generate_corpus,
    generate_dataset,
    load_dataset,
    routing_examples,
)
from .embedding import EmbedderConfig, build_embedder
from .errors import DataError, RemoteBackendError
from .federated import (
    DomainIndex,
    FederatedIndex,
    KeywordSelector,
    ResourceSelector,
    SearchResult,
    build_index,
    federated_search,
    lfs_search,
    rfs_search,
    uis_search,
)
from .gating import GatingConfig
from .retriever import ProjectionModel, RetrieverTrainConfig, identity_model, train_retriever
from .router import RouterModel, RouterTrainConfig, predict_batch, train_router, zero_model

__all__ = [
    "Judge",
    "MockJudge",
    "RemoteJudge",
    "BenchmarkConfig",
    "EvalReport",
    "acc_at_top1",
    "faithfulness",
    "relevancy",
    "split_statements",
    "split_by_query",
    "subset_accuracy",
    "run_benchmark",
    "latency_probe",
    "load_dataset",
]

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_WORD_RE = re.compile(r"[a-z0-9]+")


def _normalize(text: str) -> str:
    return " ".join(_WORD_RE.findall(text.lower()))


def split_statements(response: str) -> list[str]:
    """Sentence-boundary split of a response into individual statements."""
    return [s.strip() for s in _SENTENCE_RE.split(response.strip()) if s.strip()]


class Judge(Protocol):
    kind: str

    def score(self, query: str, response: str, contexts: list[str]) -> float: ...


class MockJudge:
    """Deterministic judge: containment for faithfulness statements,
    query/response token-overlap Jaccard scaled to [1, 10] for relevancy."""

    def __init__(self, kind: str):
        if kind not in ("relevancy", "faithfulness"):
            raise ValueError(f"unknown judge kind {kind!r}")
        self.kind = kind

    def score(self, query: str, response: str, contexts: list[str]) -> float:
        if self.kind == "faithfulness":
            statement = _normalize(response)
            return 1.0 if any(statement in _normalize(c) for c in contexts) else 0.0
        q_tokens = set(_WORD_RE.findall(query.lower()))
        r_tokens = set(_WORD_RE.findall(response.lower()))
        union = q_tokens | r_tokens
        jaccard = len(q_tokens & r_tokens) / len(union) if union else 0.0
        return 1.0 + 9.0 * jaccard


class RemoteJudge:
    """Client for the ``POST /judge`` wire protocol."""

    def __init__(self, kind: str, endpoint: str, timeout: float = 30.0):
        if kind not in ("relevancy", "faithfulness"):
            raise ValueError(f"unknown judge kind {kind!r}")
        self.kind = kind
        self.endpoint = endpoint
        self.timeout = timeout

    def score(self, query: str, response: str, contexts: list[str]) -> float:
        try:
            resp = requests.post(
                self.endpoint,
                json={"kind": self.kind, "query": query, "response": response, "contexts": contexts},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise RemoteBackendError(f"judge request failed: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteBackendError(f"judge returned HTTP {resp.status_code}", status=resp.status_code)
        try:
            return float(resp.json()["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise RemoteBackendError(f"judge returned malformed payload: {exc}") from exc


def acc_at_top1(results: Sequence[tuple[SearchResult, set[str]]]) -> float:
    """Fraction of queries whose rank-1 chunk id is one of the gold ids."""
    if not results:
        raise ValueError("acc_at_top1 needs at least one result")
    hits = 0
    for result, gold in results:
        if not gold:
            raise ValueError(f"empty gold set for query {result.query!r}")
        if result.results and result.results[0].chunk_id in gold:
            hits += 1
    return hits / len(results)


def faithfulness(response: str, contexts: list[str], judge: Judge) -> float:
    """Fraction of response statements the judge marks as supported."""
    statements = split_statements(response)
    if not statements:
        raise ValueError("response has no statements")
    supported = sum(1 for s in statements if judge.score("", s, contexts) >= 0.5)
    return supported / len(statements)


def relevancy(query: str, response: str, judge: Judge) -> float:
    """Judge rating of the response for the query, on a 1-10 scale."""
    score = judge.score(query, response, [])
    if not (1.0 <= score <= 10.0):
        raise RemoteBackendError(f"relevancy judge returned {score}, expected [1, 10]")
    return score


def subset_accuracy(model: RouterModel, examples: list[tuple[str, np.ndarray]], embedder) -> float:
    """Exact-match accuracy of thresholded (>= 0.5) domain predictions."""
    if not examples:
        raise ValueError("no examples")
    vecs = np.asarray(embedder.embed_batch([q for q, _ in examples]))
    labels = np.asarray([y for _, y in examples])
    preds = predict_batch(model, vecs) >= 0.5
    return float(np.mean(np.all(preds == (labels > 0.5), axis=1)))


def split_by_query(
    pairs: Sequence[QueryDocPair], holdout_fraction: float, seed: int
) -> tuple[list[QueryDocPair], list[QueryDocPair]]:
    """Seeded train/held-out split on unique query texts."""
    queries: list[str] = []
    seen = set()
    for pair in pairs:
        if pair.query not in seen:
            seen.add(pair.query)
            queries.append(pair.query)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(queries))
    n_held = max(1, int(round(holdout_fraction * len(queries))))
    if n_held >= len(queries):
        raise DataError("holdout fraction leaves no training queries")
    held = {queries[i] for i in order[:n_held]}
    train = [p for p in pairs if p.query not in held]
    heldout = [p for p in pairs if p.query in held]
    return train, heldout


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple[str, ...] = ("mkpqa", "uis", "rfs", "lfs")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    k: int = 5
    holdout_fraction: float = 0.2
    embedder: EmbedderConfig = EmbedderConfig()
    gating: GatingConfig = GatingConfig()
    router: RouterTrainConfig = RouterTrainConfig()
    retriever: RetrieverTrainConfig = RetrieverTrainConfig(epochs=30)
    response_metrics: bool = True

    def __post_init__(self):
        unknown = set(self.methods) - {"mkpqa", "uis", "rfs", "lfs"}
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.k < 1 or not self.seeds:
            raise ValueError("k must be >= 1 and at least one seed is required")


@dataclass
class EvalReport:
    seeds: list[int]
    k: int
    methods: dict[str, dict[str, dict]]
    generator: dict

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "k": self.k,
            "methods": self.methods,
            "generator": self.generator,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["method,metric,mean,std"]
        for method in sorted(self.methods):
            for metric in sorted(self.methods[method]):
                cell = self.methods[method][metric]
                lines.append(f"{method},{metric},{cell['mean']:.6f},{cell['std']:.6f}")
        return "\n".join(lines) + "\n"


def _aggregate(per_seed: dict[str, list[float]]) -> dict[str, dict]:
    out = {}
    for metric, values in per_seed.items():
        arr = np.asarray(values, dtype=np.float64)
        out[metric] = {
            "mean": float(arr.mean()),
            "std": float(arr.std()),
            "per_seed": [float(v) for v in values],
        }
    return out


def _gold_sets(pairs: Iterable[QueryDocPair]) -> dict[str, set[str]]:
    gold: dict[str, set[str]] = {}
    for pair in pairs:
        if pair.label == 1:
            gold.setdefault(pair.query, set()).add(pair.chunk_id)
    return gold


def _query_domains(pairs: Iterable[QueryDocPair]) -> dict[str, tuple[int, ...]]:
    return {pair.query: pair.domains for pair in pairs}


def run_benchmark(
    data: SyntheticSpec | tuple[str | Path, str | Path],
    config: BenchmarkConfig = BenchmarkConfig(),
    selector: ResourceSelector | None = None,
) -> EvalReport:
    """Compare methods across seeds; deterministic for a fixed seed list.

    ``data`` is either a synthetic generator spec (regenerated per seed)
    or a (chunks.jsonl, dataset.jsonl) path pair evaluated as-is, with
    seeds still driving the split, training, and gating draws.
    """
    if selector is None:
        selector = KeywordSelector()
    fixed: tuple[Corpus, list[QueryDocPair]] | None = None
    if not isinstance(data, SyntheticSpec):
        chunks_path, dataset_path = data
        corpus = read_chunks(chunks_path)
        fixed = (corpus, load_dataset(dataset_path, corpus.domain_names()))

    kernels.warmup()
    per_method: dict[str, dict[str, list[float]]] = {m: {} for m in config.methods}

    for seed in config.seeds:
        if fixed is None:
            spec = replace(data, seed=seed)
            corpus = generate_corpus(spec)
            pairs = generate_dataset(spec, corpus)
        else:
            corpus, pairs = fixed
        train_pairs, held_pairs = split_by_query(pairs, config.holdout_fraction, seed)

        embedder = build_embedder(config.embedder)
        num_domains = len(corpus.domains)
        router_model, _ = train_router(
            routing_examples(train_pairs, num_domains),
            embedder,
            replace(config.router, seed=seed),
        )
        projection, _ = train_retriever(
            train_pairs,
            corpus.chunk_texts(),
            embedder,
            replace(config.retriever, seed=seed),
        )
        fidx = build_index(corpus, embedder, projection)
        index_sizes = {idx.domain: len(idx) for idx in fidx.indexes}

        gold = _gold_sets(held_pairs)
        domains_of = _query_domains(held_pairs)
        queries = sorted(gold)

        rel_judge = MockJudge("relevancy")
        faith_judge = MockJudge("faithfulness")
        texts = corpus.chunk_texts()

        for method in config.methods:
            scored: list[tuple[SearchResult, set[str]]] = []
            uni_scored: list[tuple[SearchResult, set[str]]] = []
            cross_scored: list[tuple[SearchResult, set[str]]] = []
            latencies: list[float] = []
            active_counts: list[float] = []
            docs_scored: list[float] = []
            rel_scores: list[float] = []
            faith_scores: list[float] = []

            for qi, query in enumerate(queries):
                if method == "mkpqa":
                    rng = np.random.default_rng((seed, qi))
                    result = federated_search(
                        fidx, query, router_model, config.gating, config.k, rng
                    )
                elif method == "uis":
                    result = uis_search(fidx, query, config.k)
                elif method == "rfs":
                    result = rfs_search(fidx, query, router_model, config.k)
                else:
                    result = lfs_search(fidx, query, selector, config.k)

                entry = (result, gold[query])
                scored.append(entry)
                (cross_scored if len(domains_of[query]) > 1 else uni_scored).append(entry)
                latencies.append(result.timings_ms["total"])
                searched = list(result.domain_candidates)
                active_counts.append(len(searched))
                docs_scored.append(sum(index_sizes[j] for j in searched))
                if config.response_metrics and result.results:
                    top = result.results[0]
                    response = fidx.context(top.chunk_id, top.domain)[2]
                    rel_scores.append(relevancy(query, response, rel_judge))
                    gold_texts = [texts[cid] for cid in sorted(gold[query])]
                    faith_scores.append(faithfulness(response, gold_texts, faith_judge))

            metrics = per_method[method]
            metrics.setdefault("acc_top1_all", []).append(acc_at_top1(scored))
            if uni_scored:
                metrics.setdefault("acc_top1_uni", []).append(acc_at_top1(uni_scored))
            if cross_scored:
                metrics.setdefault("acc_top1_cross", []).append(acc_at_top1(cross_scored))
            metrics.setdefault("mean_active_domains", []).append(float(np.mean(active_counts)))
            metrics.setdefault("mean_docs_scored", []).append(float(np.mean(docs_scored)))
            metrics.setdefault("latency_ms_p50", []).append(float(np.percentile(latencies, 50)))
            metrics.setdefault("latency_ms_p95", []).append(float(np.percentile(latencies, 95)))
            if rel_scores:
                metrics.setdefault("relevancy_mean", []).append(float(np.mean(rel_scores)))
                metrics.setdefault("faithfulness_mean", []).append(float(np.mean(faith_scores)))

    generator = (
        {"synthetic": data.__dict__}
        if isinstance(data, SyntheticSpec)
        else {"chunks": str(data[0]), "dataset": str(data[1])}
    )
    return EvalReport(
        seeds=list(config.seeds),
        k=config.k,
        methods={m: _aggregate(stats) for m, stats in per_method.items()},
        generator=generator,
    )


def latency_probe(
    num_domains: int = 3,
    chunks_per_domain: int = 10_000,
    dimension: int = 256,
    k: int = 5,
    num_queries: int = 50,
    seed: int = 0,
) -> dict:
    """Median/percentile latency of one federated query over a synthetic
    random index; all domains are forced active via a uniform router."""
    rng = np.random.default_rng(seed)
    embedder = build_embedder(EmbedderConfig(dimension=dimension))
    projection: ProjectionModel = identity_model(dimension, embedder.fingerprint)
    router_model = zero_model(num_domains, dimension, embedder.fingerprint)
    gating = GatingConfig(mode="deterministic")

    domains = [Domain(j, f"probe{j}") for j in range(num_domains)]
    indexes = []
    for j in range(num_domains):
        vectors = rng.normal(size=(chunks_per_domain, dimension))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        ids = [f"probe://{j}/chunk#{i:05d}" for i in range(chunks_per_domain)]
        indexes.append(
            DomainIndex(
                domain=j,
                name=f"probe{j}",
                ids=ids,
                vectors=np.ascontiguousarray(vectors, dtype=np.float32),
                urls=[f"probe://{j}"] * chunks_per_domain,
                titles=[""] * chunks_per_domain,
                texts=[""] * chunks_per_domain,
            )
        )
    fidx = FederatedIndex(
        domains=domains,
        indexes=indexes,
        embedder=embedder,
        projection=projection,
        descriptions={d.id: d.name for d in domains},
    )

    kernels.warmup()
    words = [f"term{rng.integers(1_000_000)}" for _ in range(200)]
    totals = []
    for _ in range(num_queries):
        query = " ".join(words[i] for i in rng.integers(0, len(words), size=10))
        result = federated_search(fidx, query, router_model, gating, k)
        totals.append(result.timings_ms["total"])
    arr = np.asarray(totals)
    return {
        "kernel_backend": kernels.active_backend(),
        "num_domains": num_domains,
        "chunks_per_domain": chunks_per_domain,
        "dimension": dimension,
        "k": k,
        "num_queries": num_queries,
        "latency_ms_p50": float(np.percentile(arr, 50)),
        "latency_ms_p95": float(np.percentile(arr, 95)),
        "latency_ms_mean": float(arr.mean()),
    }
