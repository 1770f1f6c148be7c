"""Corpus ingestion: documentation pages -> domain-tagged retrieval chunks.

Pages are markdown-like text (header lines start with '#'). Each page is
segmented at every header level, and oversize segments are split
recursively at ["\\n\\n", "\\n", ". ", " "] with a hard token cut as the
last resort. Separators stay attached to the preceding piece, so joining
the pieces of a segment reproduces the segment byte for byte.

Tokens are whitespace-delimited words; the limit is configurable because
that convention counts fewer tokens than subword vocabularies do.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

DEFAULT_MAX_TOKENS = 512
SEPARATORS = ("\n\n", "\n", ". ", " ")

_WS_RE = re.compile(r"(\s+)")


@dataclass(frozen=True)
class Domain:
    """One product domain; ids are dense 0..m-1, names unique."""

    id: int
    name: str


@dataclass(frozen=True)
class SourcePage:
    url: str
    title: str
    domain: int
    body: str


@dataclass(frozen=True)
class Chunk:
    id: str
    domain: int
    url: str
    title: str
    section_path: tuple[str, ...]
    text: str
    token_count: int


@dataclass
class Corpus:
    domains: list[Domain]
    pages: list[SourcePage] = field(default_factory=list)
    chunks: list[Chunk] = field(default_factory=list)

    def by_domain(self) -> dict[int, list[Chunk]]:
        grouped: dict[int, list[Chunk]] = {d.id: [] for d in self.domains}
        for chunk in self.chunks:
            grouped[chunk.domain].append(chunk)
        return grouped

    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]

    def chunk_texts(self) -> dict[str, str]:
        return {c.id: c.text for c in self.chunks}


def count_tokens(text: str) -> int:
    """Whitespace-delimited token count; blank text counts zero."""
    return len(text.split())


def segment_by_headers(page: SourcePage) -> list[tuple[tuple[str, ...], str]]:
    """Split a page body into (section_path, text) per deepest header scope.

    Non-header lines are preserved verbatim, so joining all segment texts
    with newlines equals the body with header lines removed. A body with
    no headers yields a single segment with an empty path.
    """
    segments: list[tuple[tuple[str, ...], str]] = []
    stack: list[tuple[int, str]] = []  # (header level, title)
    lines: list[str] = []

    def flush() -> None:
        if lines:
            segments.append((tuple(t for _, t in stack), "\n".join(lines)))
            lines.clear()

    for line in page.body.splitlines():
        if line.startswith("#"):
            flush()
            level = len(line) - len(line.lstrip("#"))
            title = line[level:].strip()
            while stack and stack[-1][0] >= level:
                stack.pop()
            stack.append((level, title))
        else:
            lines.append(line)
    flush()
    return segments


def _split_keep_sep(text: str, sep: str) -> list[str]:
    parts = text.split(sep)
    frags = [p + sep for p in parts[:-1]]
    frags.append(parts[-1])
    return [f for f in frags if f]


def _hard_cut(text: str, max_tokens: int) -> list[str]:
    pieces: list[str] = []
    buf = ""
    count = 0
    for part in _WS_RE.split(text):
        if not part:
            continue
        is_token = not part.isspace()
        if is_token and count == max_tokens:
            pieces.append(buf)
            buf, count = "", 0
        buf += part
        if is_token:
            count += 1
    if buf:
        pieces.append(buf)
    return pieces


def _merge_frags(frags: list[str], max_tokens: int, rest: tuple[str, ...]) -> list[str]:
    pieces: list[str] = []
    buf = ""
    for frag in frags:
        if count_tokens(frag) > max_tokens:
            if buf:
                pieces.append(buf)
                buf = ""
            pieces.extend(_split_rec(frag, max_tokens, rest))
            continue
        candidate = buf + frag
        if buf and count_tokens(candidate) > max_tokens:
            pieces.append(buf)
            buf = frag
        else:
            buf = candidate
    if buf:
        # a trailing whitespace-only remainder belongs to the previous piece
        if pieces and count_tokens(buf) == 0:
            pieces[-1] += buf
        else:
            pieces.append(buf)
    return pieces


def _split_rec(text: str, max_tokens: int, seps: tuple[str, ...]) -> list[str]:
    if count_tokens(text) <= max_tokens:
        return [text]
    for i, sep in enumerate(seps):
        if sep in text:
            frags = _split_keep_sep(text, sep)
            if len(frags) > 1:
                return _merge_frags(frags, max_tokens, seps[i + 1 :])
    return _hard_cut(text, max_tokens)


def recursive_split(text: str, max_tokens: int, separators: tuple[str, ...] = SEPARATORS) -> list[str]:
    """Split text into contiguous pieces of at most ``max_tokens`` tokens.

    Separators are tried in order and remain attached to the preceding
    piece: ``"".join(pieces) == text`` always holds.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    return _split_rec(text, max_tokens, tuple(separators))


def chunk_page(page: SourcePage, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Chunk]:
    """Segment a page by headers and split oversize segments into chunks.

    Chunk ids are ``url#NNNN`` with a page-wide ordinal, so chunk-id order
    equals document order.
    """
    if not page.body.strip():
        raise DataError(f"empty page: {page.url}")
    chunks: list[Chunk] = []
    ordinal = 0
    for path, text in segment_by_headers(page):
        if count_tokens(text) == 0:
            continue
        for piece in recursive_split(text, max_tokens):
            tokens = count_tokens(piece)
            if tokens == 0:
                continue
            chunks.append(
                Chunk(
                    id=f"{page.url}#{ordinal:04d}",
                    domain=page.domain,
                    url=page.url,
                    title=page.title,
                    section_path=path,
                    text=piece,
                    token_count=tokens,
                )
            )
            ordinal += 1
    return chunks


def parse_page_file(path: Path, text: str) -> tuple[str, str, str, str]:
    """Parse the page file format: url/title/domain headers, blank, body."""
    lines = text.split("\n")
    headers = {}
    for lineno, key in enumerate(("url", "title", "domain")):
        if lineno >= len(lines) or not lines[lineno].startswith(f"{key}: "):
            raise DataError(f"{path}:{lineno + 1}: expected '{key}: ...' header")
        headers[key] = lines[lineno][len(key) + 2 :].strip()
        if not headers[key]:
            raise DataError(f"{path}:{lineno + 1}: empty '{key}' header")
    if len(lines) < 5 or lines[3].strip():
        raise DataError(f"{path}:4: expected blank line between headers and body")
    body = "\n".join(lines[4:])
    return headers["url"], headers["title"], headers["domain"], body


def load_corpus(
    path: str | Path,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    domain_names: list[str] | None = None,
) -> Corpus:
    """Load every ``*.txt`` page under ``path`` and chunk it.

    Domain ids are assigned by sorted unique name unless ``domain_names``
    pins an explicit order; pages naming an unlisted domain are rejected.
    Output is deterministically ordered by (url, ordinal).
    """
    root = Path(path)
    files = sorted(root.glob("*.txt"))
    if not files:
        raise DataError(f"no page files (*.txt) found under {root}")

    raw: list[tuple[Path, str, str, str, str]] = []
    seen_urls: dict[str, Path] = {}
    for file in files:
        try:
            text = file.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{file}: unreadable page file: {exc}") from exc
        url, title, domain, body = parse_page_file(file, text)
        if url in seen_urls:
            raise DataError(f"{file}:1: duplicate page url {url!r} (also in {seen_urls[url]})")
        seen_urls[url] = file
        raw.append((file, url, title, domain, body))

    if domain_names is None:
        names = sorted({r[3] for r in raw})
    else:
        names = list(domain_names)
    ids = {name: i for i, name in enumerate(names)}
    domains = [Domain(i, name) for i, name in enumerate(names)]

    pages: list[SourcePage] = []
    for file, url, title, domain, body in raw:
        if domain not in ids:
            raise DataError(f"{file}:3: unknown domain {domain!r}; known: {', '.join(names)}")
        pages.append(SourcePage(url=url, title=title, domain=ids[domain], body=body))

    pages.sort(key=lambda p: p.url)
    chunks: list[Chunk] = []
    for page in pages:
        chunks.extend(chunk_page(page, max_tokens))
    return Corpus(domains=domains, pages=pages, chunks=chunks)


def write_page_file(page: SourcePage, domains: list[Domain], path: Path) -> None:
    name = domains[page.domain].name
    path.write_text(
        f"url: {page.url}\ntitle: {page.title}\ndomain: {name}\n\n{page.body}",
        encoding="utf-8",
    )


def write_chunks(corpus: Corpus, path: str | Path) -> None:
    """Write chunks as JSON Lines, one object per chunk."""
    names = corpus.domain_names()
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in corpus.chunks:
            record = {
                "id": chunk.id,
                "domain": names[chunk.domain],
                "url": chunk.url,
                "title": chunk.title,
                "section_path": list(chunk.section_path),
                "text": chunk.text,
                "token_count": chunk.token_count,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_chunks(path: str | Path, domain_names: list[str] | None = None) -> Corpus:
    """Load a chunk JSONL file back into a Corpus (no pages)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed chunk record: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no chunk records")
    names = sorted({r["domain"] for r in records}) if domain_names is None else list(domain_names)
    ids = {name: i for i, name in enumerate(names)}
    chunks = []
    for lineno, r in enumerate(records, start=1):
        if r["domain"] not in ids:
            raise DataError(f"{path}:{lineno}: unknown domain {r['domain']!r}; known: {', '.join(names)}")
        chunks.append(
            Chunk(
                id=r["id"],
                domain=ids[r["domain"]],
                url=r["url"],
                title=r["title"],
                section_path=tuple(r["section_path"]),
                text=r["text"],
                token_count=r["token_count"],
            )
        )
    chunks.sort(key=lambda c: (c.url, c.id))
    return Corpus(domains=[Domain(i, n) for i, n in enumerate(names)], chunks=chunks)
