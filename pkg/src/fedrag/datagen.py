"""Deterministic synthetic multi-domain corpus and dataset generator.

Each domain gets a pseudo-word vocabulary; a configurable fraction of it
comes from a pool shared by all domains, so cross-domain terminology
overlap can be swept from fully separable (overlap 0) toward
indistinguishable. Chunks are bag-of-topic-word paragraphs, queries
paraphrase chunk topics, and negatives come first from sibling chunks of
the golden page, then from related same-domain pages. Ground truth is
exact by construction, so no external annotator is needed.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Chunk, Corpus, Domain, SourcePage, chunk_page
from .errors import DataError
from .ioutil import atomic_write_text

_DOMAIN_NAMES = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")
_CONSONANTS = "bcdfglmnprstvz"
_VOWELS = "aeiou"

TOPIC_WORDS_PER_CHUNK = 8
PAGE_POOL_WORDS = 12
SHARED_TOPIC_WORDS = 5


@dataclass(frozen=True)
class SyntheticSpec:
    num_domains: int = 3
    vocab_size: int = 200
    overlap: float = 0.3
    pages_per_domain: int = 20
    chunks_per_page: int = 5
    queries_per_domain: int = 150
    cross_queries_per_pair: int = 40
    negatives_per_query: int = 4
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.num_domains,
            self.vocab_size,
            self.pages_per_domain,
            self.chunks_per_page,
            self.queries_per_domain,
            self.cross_queries_per_pair,
            self.negatives_per_query,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all synthetic counts must be >= 1")
        if not (0.0 <= self.overlap < 1.0):
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")


@dataclass(frozen=True)
class QueryDocPair:
    query: str
    chunk_id: str
    domains: tuple[int, ...]
    label: int


def _domain_name(i: int) -> str:
    return _DOMAIN_NAMES[i] if i < len(_DOMAIN_NAMES) else f"domain{i}"


def _make_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    """Pseudo-words of 2-4 consonant+vowel syllables, unique overall."""
    words: list[str] = []
    while len(words) < count:
        syllables = rng.integers(2, 5)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def _domain_vocabularies(spec: SyntheticSpec, rng: np.random.Generator) -> list[list[str]]:
    shared_count = int(round(spec.overlap * spec.vocab_size))
    taken: set[str] = set()
    shared = _make_words(rng, shared_count, taken)
    vocabularies = []
    for _ in range(spec.num_domains):
        unique = _make_words(rng, spec.vocab_size - shared_count, taken)
        vocabularies.append(shared + unique)
    return vocabularies


def _paragraph(rng: np.random.Generator, topic: list[str], vocab: list[str]) -> str:
    """80-220 token paragraph, 80% topic words, sentence-structured."""
    length = int(rng.integers(80, 221))
    tokens = []
    for _ in range(length):
        pool = topic if rng.random() < 0.8 else vocab
        tokens.append(pool[rng.integers(len(pool))])
    sentences = []
    i = 0
    while i < len(tokens):
        n = int(rng.integers(8, 15))
        sentences.append(" ".join(tokens[i : i + n]) + ".")
        i += n
    return " ".join(sentences)


def generate_corpus(spec: SyntheticSpec) -> Corpus:
    """Pages and chunks for every domain; byte-identical per (spec, seed)."""
    rng = np.random.default_rng(spec.seed)
    vocabularies = _domain_vocabularies(spec, rng)
    domains = [Domain(i, _domain_name(i)) for i in range(spec.num_domains)]

    pages: list[SourcePage] = []
    chunks: list[Chunk] = []
    for domain in domains:
        vocab = vocabularies[domain.id]
        for page_i in range(spec.pages_per_domain):
            # sibling chunks share part of a page-level pool, so same-page
            # negatives are hard: they overlap the query's topic words
            pool = [vocab[j] for j in rng.choice(len(vocab), PAGE_POOL_WORDS, replace=False)]
            sections = []
            for _ in range(spec.chunks_per_page):
                shared = [pool[j] for j in rng.choice(len(pool), SHARED_TOPIC_WORDS, replace=False)]
                own = [vocab[j] for j in rng.choice(len(vocab), TOPIC_WORDS_PER_CHUNK - SHARED_TOPIC_WORDS, replace=False)]
                topic = shared + own
                header = " ".join(topic[:3])
                sections.append(f"# {header}\n{_paragraph(rng, topic, vocab)}")
            title_words = [pool[j] for j in rng.choice(len(pool), 4, replace=False)]
            page = SourcePage(
                url=f"synth://{domain.name}/page{page_i:03d}",
                title=" ".join(title_words),
                domain=domain.id,
                body="\n".join(sections),
            )
            pages.append(page)
            chunks.extend(chunk_page(page))
    return Corpus(domains=domains, pages=pages, chunks=chunks)


def chunk_topic_words(chunk: Chunk, top: int = TOPIC_WORDS_PER_CHUNK) -> list[str]:
    """The chunk's dominant tokens; ties broken alphabetically."""
    tokens = re.findall(r"[a-z0-9]+", chunk.text.lower())
    counts = Counter(tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [w for w, _ in ranked[:top]]


def _sample_words(rng: np.random.Generator, words: list[str], count: int) -> list[str]:
    return [words[i] for i in rng.integers(0, len(words), size=count)]


def generate_queries(spec: SyntheticSpec, corpus: Corpus) -> list[QueryDocPair]:
    """Positive pairs: uni-domain topic paraphrases and cross-domain
    combinations carrying one positive per involved domain."""
    rng = np.random.default_rng(spec.seed + 1)
    by_domain = corpus.by_domain()
    pairs: list[QueryDocPair] = []

    for domain in corpus.domains:
        chunks = by_domain[domain.id]
        for _ in range(spec.queries_per_domain):
            chunk = chunks[rng.integers(len(chunks))]
            words = _sample_words(rng, chunk_topic_words(chunk), 10)
            pairs.append(QueryDocPair(" ".join(words), chunk.id, (domain.id,), 1))

    for d1 in range(spec.num_domains):
        for d2 in range(d1 + 1, spec.num_domains):
            for _ in range(spec.cross_queries_per_pair):
                c1 = by_domain[d1][rng.integers(len(by_domain[d1]))]
                c2 = by_domain[d2][rng.integers(len(by_domain[d2]))]
                words = _sample_words(rng, chunk_topic_words(c1), 7)
                words += _sample_words(rng, chunk_topic_words(c2), 7)
                query = " ".join(words)
                pairs.append(QueryDocPair(query, c1.id, (d1, d2), 1))
                pairs.append(QueryDocPair(query, c2.id, (d1, d2), 1))
    return pairs


def generate_negatives(
    spec: SyntheticSpec, corpus: Corpus, pairs: list[QueryDocPair]
) -> list[QueryDocPair]:
    """Append per-query negatives: golden-page siblings first, then
    same-domain chunks from the most vocabulary-related other pages."""
    rng = np.random.default_rng(spec.seed + 2)
    by_domain = corpus.by_domain()
    by_url: dict[str, list[Chunk]] = {}
    for chunk in corpus.chunks:
        by_url.setdefault(chunk.url, []).append(chunk)
    chunk_by_id = {c.id: c for c in corpus.chunks}

    grouped: dict[str, list[QueryDocPair]] = {}
    order: list[str] = []
    for pair in pairs:
        if pair.query not in grouped:
            order.append(pair.query)
            grouped[pair.query] = []
        grouped[pair.query].append(pair)

    out = list(pairs)
    for query in order:
        positives = [p for p in grouped[query] if p.label == 1]
        domains = positives[0].domains
        golden_ids = {p.chunk_id for p in positives}
        golden_urls = [chunk_by_id[p.chunk_id].url for p in positives]

        siblings = []
        for url in golden_urls:
            siblings.extend(c for c in by_url[url] if c.id not in golden_ids)
        sibling_order = rng.permutation(len(siblings))
        chosen = [siblings[i] for i in sibling_order[: spec.negatives_per_query]]

        if len(chosen) < spec.negatives_per_query:
            query_tokens = set(query.split())
            excluded = golden_ids | set(golden_urls) | {c.id for c in chosen}
            related = [
                c
                for p in positives
                for c in by_domain[chunk_by_id[p.chunk_id].domain]
                if c.url not in golden_urls and c.id not in excluded
            ]
            related.sort(
                key=lambda c: (-len(query_tokens & set(chunk_topic_words(c))), c.id)
            )
            seen = set()
            for c in related:
                if len(chosen) >= spec.negatives_per_query:
                    break
                if c.id not in seen:
                    seen.add(c.id)
                    chosen.append(c)

        out.extend(QueryDocPair(query, c.id, domains, 0) for c in chosen)
    return out


def generate_dataset(spec: SyntheticSpec, corpus: Corpus) -> list[QueryDocPair]:
    return generate_negatives(spec, corpus, generate_queries(spec, corpus))


def routing_examples(
    pairs: list[QueryDocPair], num_domains: int
) -> list[tuple[str, np.ndarray]]:
    """One (query, multi-hot domain label) example per unique query."""
    seen: dict[str, np.ndarray] = {}
    order = []
    for pair in pairs:
        if pair.query not in seen:
            label = np.zeros(num_domains, dtype=np.float64)
            label[list(pair.domains)] = 1.0
            seen[pair.query] = label
            order.append(pair.query)
    return [(q, seen[q]) for q in order]


def export_dataset(pairs: list[QueryDocPair], domains: list[Domain], path: str | Path) -> None:
    """JSON Lines, one record per pair; domain ids written as names."""
    names = [d.name for d in domains]
    lines = [
        json.dumps(
            {
                "query": p.query,
                "chunk_id": p.chunk_id,
                "domains": [names[d] for d in p.domains],
                "label": p.label,
            },
            ensure_ascii=False,
        )
        for p in pairs
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def export_corpus_pages(corpus: Corpus, directory: str | Path) -> None:
    """Write every page in the corpus input file format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = corpus.domain_names()
    for i, page in enumerate(corpus.pages):
        body = f"url: {page.url}\ntitle: {page.title}\ndomain: {names[page.domain]}\n\n{page.body}"
        atomic_write_text(directory / f"page_{i:04d}.txt", body)


def load_dataset(path: str | Path, domain_names: list[str]) -> list[QueryDocPair]:
    """Read a dataset JSONL file back, mapping domain names to ids."""
    ids = {name: i for i, name in enumerate(domain_names)}
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                domains = tuple(ids[name] for name in record["domains"])
                pairs.append(
                    QueryDocPair(record["query"], record["chunk_id"], domains, int(record["label"]))
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: malformed dataset record: {exc}") from exc
    if not pairs:
        raise DataError(f"{path}: no dataset records")
    return pairs
