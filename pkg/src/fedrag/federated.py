"""Per-domain vector indexes and federated search with unified scoring.

Each domain keeps its own flat index of projected chunk embeddings;
nothing is centralized. A query is routed (p_j per domain), gated to an
active set, searched per active domain, and merged by the unified score
U = p_j * s(q, d) with a fixed tie rule (U desc, domain id asc, chunk id
asc) so rankings are reproducible across platforms.

Index rows are stored sorted by chunk id, which makes the kernels' row
index tie rule equal to the chunk-id rule. Search is exact flat scan;
at desk scale exactness is cheap and the kernel interface would admit an
ANN drop-in later.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from . import kernels
from .corpus import Corpus, Domain, count_tokens
from .errors import DataError, RemoteBackendError
from .gating import GateDecision, GatingConfig, sample_active
from .ioutil import atomic_write_bytes, atomic_write_json
from .retriever import ProjectionModel, encode, encode_batch
from .router import RouterModel, predict

INDEX_MAGIC = b"MKPI"
INDEX_VERSION = 1


@dataclass
class DomainIndex:
    domain: int
    name: str
    ids: list[str]
    vectors: np.ndarray  # (n, d') float32, rows sorted by chunk id
    urls: list[str]
    titles: list[str]
    texts: list[str]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class FederatedIndex:
    domains: list[Domain]
    indexes: list[DomainIndex]
    embedder: object
    projection: ProjectionModel
    descriptions: dict[int, str]

    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]

    def context(self, chunk_id: str, domain: int) -> tuple[str, str, str]:
        """(id, title, text) for one indexed chunk."""
        idx = self.indexes[domain]
        row = idx.ids.index(chunk_id)
        return chunk_id, idx.titles[row], idx.texts[row]


@dataclass(frozen=True)
class RankedDoc:
    chunk_id: str
    domain: int
    score: float  # raw similarity s
    domain_prob: float  # p_j
    unified: float  # U = p_j * s
    rank: int

    def to_dict(self) -> dict:
        return {
            "id": self.chunk_id,
            "domain": self.domain,
            "s": self.score,
            "p": self.domain_prob,
            "u": self.unified,
            "rank": self.rank,
        }


@dataclass
class SearchResult:
    query: str
    method: str
    results: list[RankedDoc]
    domain_candidates: dict[int, list[tuple[str, float]]]
    gate: GateDecision | None = None
    domain_probs: tuple[float, ...] | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "method": self.method,
            "results": [r.to_dict() for r in self.results],
            "gate": self.gate.to_dict() if self.gate else None,
            "probs": list(self.domain_probs) if self.domain_probs is not None else None,
            "timing_ms": self.timings_ms,
        }


def projection_digest(projection: ProjectionModel) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(projection.matrix.shape).encode())
    h.update(np.ascontiguousarray(projection.matrix, dtype=np.float64).tobytes())
    return h.hexdigest()


def _default_descriptions(corpus: Corpus) -> dict[int, str]:
    """Plain-text domain summaries from the most common title words."""
    words_by_domain: dict[int, Counter] = {d.id: Counter() for d in corpus.domains}
    for chunk in corpus.chunks:
        tokens = re.findall(r"[a-z0-9]+", (chunk.title + " " + " ".join(chunk.section_path)).lower())
        words_by_domain[chunk.domain].update(tokens)
    out = {}
    for domain in corpus.domains:
        common = [w for w, _ in words_by_domain[domain.id].most_common(30)]
        out[domain.id] = " ".join(common) if common else domain.name
    return out


def build_index(
    corpus: Corpus,
    embedder,
    projection: ProjectionModel,
    descriptions: dict[int, str] | None = None,
) -> FederatedIndex:
    """Encode every chunk once and freeze per-domain indexes."""
    if projection.embedder_fingerprint != embedder.fingerprint:
        raise DataError(
            f"projection was trained against embedder {projection.embedder_fingerprint!r}, "
            f"got {embedder.fingerprint!r}"
        )
    grouped = corpus.by_domain()
    for domain in corpus.domains:
        if not grouped[domain.id]:
            raise DataError(f"domain {domain.name!r} has no chunks")
    if descriptions is None:
        descriptions = _default_descriptions(corpus)

    indexes = []
    for domain in corpus.domains:
        chunks = sorted(grouped[domain.id], key=lambda c: c.id)
        bases = np.asarray(embedder.embed_batch([c.text for c in chunks]), dtype=np.float64)
        encoded = encode_batch(projection, bases).astype(np.float32)
        indexes.append(
            DomainIndex(
                domain=domain.id,
                name=domain.name,
                ids=[c.id for c in chunks],
                vectors=np.ascontiguousarray(encoded),
                urls=[c.url for c in chunks],
                titles=[c.title for c in chunks],
                texts=[c.text for c in chunks],
            )
        )
    return FederatedIndex(
        domains=list(corpus.domains),
        indexes=indexes,
        embedder=embedder,
        projection=projection,
        descriptions=descriptions,
    )


def search_domain(index: DomainIndex, query_vec: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k chunks of one domain by dot product (ties: id asc)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return []
    rows, scores = kernels.topk_dot(index.vectors, np.asarray(query_vec, dtype=np.float64), k)
    return [(index.ids[r], float(s)) for r, s in zip(rows, scores)]


def _ranked(
    candidates: list[tuple[str, int, float, float]],
    k: int,
    by_unified: bool,
) -> list[RankedDoc]:
    """Sort (id, domain, s, p) candidates and assign dense ranks."""
    scored = [(cid, dom, s, p, p * s) for cid, dom, s, p in candidates]
    if by_unified:
        scored.sort(key=lambda c: (-c[4], c[1], c[0]))
    else:
        scored.sort(key=lambda c: (-c[2], c[1], c[0]))
    return [
        RankedDoc(chunk_id=cid, domain=dom, score=s, domain_prob=p, unified=u, rank=i + 1)
        for i, (cid, dom, s, p, u) in enumerate(scored[:k])
    ]


def federated_search(
    fidx: FederatedIndex,
    query: str,
    router_model: RouterModel,
    gating_config: GatingConfig,
    k: int,
    rng: np.random.Generator | None = None,
    k_domain: int | None = None,
) -> SearchResult:
    """Route, gate, search the active domains, and merge by U = p_j * s."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_domain_k = k if k_domain is None else max(k, k_domain)
    t0 = time.perf_counter()
    base = fidx.embedder.embed(query)
    probs = predict(router_model, base)
    t1 = time.perf_counter()
    gate = sample_active(probs, gating_config, rng)
    t2 = time.perf_counter()
    query_vec = encode(fidx.projection, base)
    domain_candidates: dict[int, list[tuple[str, float]]] = {}
    candidates: list[tuple[str, int, float, float]] = []
    for j in gate.active:
        hits = search_domain(fidx.indexes[j], query_vec, per_domain_k)
        domain_candidates[j] = hits
        p_j = float(probs[j])
        candidates.extend((cid, j, s, p_j) for cid, s in hits)
    t3 = time.perf_counter()
    results = _ranked(candidates, k, by_unified=True)
    t4 = time.perf_counter()
    return SearchResult(
        query=query,
        method="mkpqa",
        results=results,
        domain_candidates=domain_candidates,
        gate=gate,
        domain_probs=tuple(float(p) for p in probs),
        timings_ms={
            "route": (t1 - t0) * 1e3,
            "gate": (t2 - t1) * 1e3,
            "search": (t3 - t2) * 1e3,
            "merge": (t4 - t3) * 1e3,
            "total": (t4 - t0) * 1e3,
        },
    )


def uis_search(fidx: FederatedIndex, query: str, k: int) -> SearchResult:
    """Baseline: search every domain, rank globally by raw similarity."""
    if k < 1:
        raise ValueError("k must be >= 1")
    t0 = time.perf_counter()
    query_vec = encode(fidx.projection, fidx.embedder.embed(query))
    domain_candidates: dict[int, list[tuple[str, float]]] = {}
    candidates: list[tuple[str, int, float, float]] = []
    for index in fidx.indexes:
        hits = search_domain(index, query_vec, k)
        domain_candidates[index.domain] = hits
        candidates.extend((cid, index.domain, s, 1.0) for cid, s in hits)
    results = _ranked(candidates, k, by_unified=False)
    total = (time.perf_counter() - t0) * 1e3
    return SearchResult(
        query=query,
        method="uis",
        results=results,
        domain_candidates=domain_candidates,
        timings_ms={"search": total, "total": total},
    )


def rfs_search(
    fidx: FederatedIndex,
    query: str,
    router_model: RouterModel,
    k: int,
) -> SearchResult:
    """Baseline: hard-route to the single most likely domain."""
    if k < 1:
        raise ValueError("k must be >= 1")
    t0 = time.perf_counter()
    base = fidx.embedder.embed(query)
    probs = predict(router_model, base)
    best = int(np.argmax(probs))
    query_vec = encode(fidx.projection, base)
    hits = search_domain(fidx.indexes[best], query_vec, k)
    candidates = [(cid, best, s, float(probs[best])) for cid, s in hits]
    results = _ranked(candidates, k, by_unified=False)
    total = (time.perf_counter() - t0) * 1e3
    return SearchResult(
        query=query,
        method="rfs",
        results=results,
        domain_candidates={best: hits},
        domain_probs=tuple(float(p) for p in probs),
        timings_ms={"search": total, "total": total},
    )


class ResourceSelector(Protocol):
    def select(self, query: str, domains: list[tuple[str, str]]) -> str: ...


class KeywordSelector:
    """Deterministic mock selector: most query-token overlap wins."""

    def select(self, query: str, domains: list[tuple[str, str]]) -> str:
        query_tokens = set(re.findall(r"[a-z0-9]+", query.lower()))
        best_name, best_score = None, -1
        for name, description in domains:
            tokens = set(re.findall(r"[a-z0-9]+", f"{name} {description}".lower()))
            score = len(query_tokens & tokens)
            if score > best_score:
                best_name, best_score = name, score
        return best_name


class RemoteSelector:
    """Client for the ``POST /select`` wire protocol."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def select(self, query: str, domains: list[tuple[str, str]]) -> str:
        try:
            resp = requests.post(
                self.endpoint,
                json={
                    "query": query,
                    "domains": [{"name": n, "description": d} for n, d in domains],
                },
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise RemoteBackendError(f"selector request failed: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteBackendError(
                f"selector returned HTTP {resp.status_code}", status=resp.status_code
            )
        try:
            return resp.json()["domain"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise RemoteBackendError(f"selector returned malformed payload: {exc}") from exc


def lfs_search(
    fidx: FederatedIndex,
    query: str,
    selector: ResourceSelector,
    k: int,
) -> SearchResult:
    """Baseline: a pluggable selector picks one domain by name."""
    if k < 1:
        raise ValueError("k must be >= 1")
    t0 = time.perf_counter()
    names = fidx.domain_names()
    choice = selector.select(
        query, [(d.name, fidx.descriptions.get(d.id, d.name)) for d in fidx.domains]
    )
    if choice not in names:
        raise DataError(f"selector chose unknown domain {choice!r}; valid: {', '.join(names)}")
    domain = names.index(choice)
    query_vec = encode(fidx.projection, fidx.embedder.embed(query))
    hits = search_domain(fidx.indexes[domain], query_vec, k)
    candidates = [(cid, domain, s, 1.0) for cid, s in hits]
    results = _ranked(candidates, k, by_unified=False)
    total = (time.perf_counter() - t0) * 1e3
    return SearchResult(
        query=query,
        method="lfs",
        results=results,
        domain_candidates={domain: hits},
        timings_ms={"search": total, "total": total},
    )


@dataclass(frozen=True)
class PromptTemplate:
    preamble: str = (
        "You are a product documentation assistant. Answer the question "
        "using only the numbered context passages below."
    )
    token_budget: int = 2048


def build_prompt(
    query: str,
    contexts: Sequence[tuple[str, str, str]],
    template: PromptTemplate = PromptTemplate(),
) -> str:
    """Assemble the augmented prompt, dropping lowest-ranked contexts
    that do not fit the token budget (never reordering)."""

    def render(docs: Sequence[tuple[str, str, str]]) -> str:
        blocks = [
            f"[{i + 1}] {cid} ({title})\n{text}" for i, (cid, title, text) in enumerate(docs)
        ]
        context_block = "\n\n".join(blocks)
        return f"{template.preamble}\n\n{context_block}\n\nQuestion: {query}"

    kept = list(contexts)
    prompt = render(kept)
    while kept and count_tokens(prompt) > template.token_budget:
        kept.pop()
        prompt = render(kept)
    return prompt


def save_index(fidx: FederatedIndex, path: str | Path) -> None:
    """Persist one directory per domain: manifest JSON plus vectors file."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    domain_dirs = {}
    for index in fidx.indexes:
        sub = f"domain_{index.domain:03d}"
        domain_dirs[index.domain] = sub
        dom_dir = root / sub
        dom_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_json(
            dom_dir / "manifest.json",
            {
                "domain": index.domain,
                "name": index.name,
                "ids": index.ids,
                "urls": index.urls,
                "titles": index.titles,
                "texts": index.texts,
            },
        )
        vectors = np.ascontiguousarray(index.vectors, dtype="<f4")
        header = struct.pack("<4sIII", INDEX_MAGIC, INDEX_VERSION, *vectors.shape)
        atomic_write_bytes(dom_dir / "vectors.bin", header + vectors.tobytes())
    atomic_write_json(
        root / "index.json",
        {
            "version": INDEX_VERSION,
            "embedder_fingerprint": fidx.embedder.fingerprint,
            "projection_digest": projection_digest(fidx.projection),
            "domains": [
                {
                    "id": d.id,
                    "name": d.name,
                    "description": fidx.descriptions.get(d.id, d.name),
                    "dir": domain_dirs[d.id],
                }
                for d in fidx.domains
            ],
        },
        indent=2,
    )


def _read_vectors(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != INDEX_MAGIC:
        raise DataError(f"{path}: not an index vectors file (bad magic)")
    version, n, d = struct.unpack("<III", blob[4:16])
    if version != INDEX_VERSION:
        raise DataError(f"{path}: unsupported index version {version}")
    expected = 16 + 4 * n * d
    if len(blob) != expected:
        raise DataError(f"{path}: truncated vectors file ({len(blob)} bytes, expected {expected})")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, d).copy()


def load_index(path: str | Path, embedder, projection: ProjectionModel) -> FederatedIndex:
    root = Path(path)
    try:
        with open(root / "index.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read index manifest under {root}: {exc}") from exc
    if manifest.get("version") != INDEX_VERSION:
        raise DataError(f"{root}: unsupported index version {manifest.get('version')}")
    if manifest["embedder_fingerprint"] != embedder.fingerprint:
        raise DataError(
            f"{root}: index was built with embedder {manifest['embedder_fingerprint']!r}, "
            f"runtime has {embedder.fingerprint!r}"
        )
    if manifest["projection_digest"] != projection_digest(projection):
        raise DataError(f"{root}: index was built with a different projection model")

    domains, indexes, descriptions = [], [], {}
    for entry in sorted(manifest["domains"], key=lambda e: e["id"]):
        domains.append(Domain(entry["id"], entry["name"]))
        descriptions[entry["id"]] = entry["description"]
        dom_dir = root / entry["dir"]
        try:
            with open(dom_dir / "manifest.json", encoding="utf-8") as fh:
                dom = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read domain manifest under {dom_dir}: {exc}") from exc
        vectors = _read_vectors(dom_dir / "vectors.bin")
        if vectors.shape[0] != len(dom["ids"]):
            raise DataError(f"{dom_dir}: vector count does not match manifest ids")
        if vectors.shape[1] != projection.output_dimension:
            raise DataError(
                f"{dom_dir}: vector dimension {vectors.shape[1]} does not match "
                f"projection output {projection.output_dimension}"
            )
        indexes.append(
            DomainIndex(
                domain=dom["domain"],
                name=dom["name"],
                ids=dom["ids"],
                vectors=vectors,
                urls=dom["urls"],
                titles=dom["titles"],
                texts=dom["texts"],
            )
        )
    ids = [d.id for d in domains]
    if ids != list(range(len(ids))):
        raise DataError(f"{root}: domain ids are not dense 0..m-1: {ids}")
    return FederatedIndex(
        domains=domains,
        indexes=indexes,
        embedder=embedder,
        projection=projection,
        descriptions=descriptions,
    )
