"""One search code path shared by the CLI and the HTTP service."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import DataError
from .federated import (
    FederatedIndex,
    KeywordSelector,
    PromptTemplate,
    ResourceSelector,
    SearchResult,
    build_prompt,
    federated_search,
    lfs_search,
    rfs_search,
    uis_search,
)
from .gating import GateDecision, GatingConfig, sample_active
from .retriever import encode
from .router import RouterModel, predict

MODES = ("mkpqa", "uis", "rfs", "lfs")


@dataclass
class SearchRuntime:
    index: FederatedIndex
    gating: GatingConfig
    router: RouterModel | None = None
    selector: ResourceSelector | None = None
    k: int = 5
    prompt_template: PromptTemplate = PromptTemplate()

    def __post_init__(self):
        if self.selector is None:
            self.selector = KeywordSelector()
        kernels.warmup()

    def _gating(self, deterministic: bool | None) -> GatingConfig:
        if deterministic is None:
            return self.gating
        mode = "deterministic" if deterministic else "stochastic"
        return replace(self.gating, mode=mode)

    def _require_router(self, mode: str) -> RouterModel:
        if self.router is None:
            raise DataError(f"mode {mode!r} requires a router model")
        return self.router

    def route(
        self,
        query: str,
        rng: np.random.Generator | None = None,
        deterministic: bool | None = None,
    ) -> tuple[np.ndarray, GateDecision]:
        """Router probabilities and a gate decision for one query."""
        router = self._require_router("route")
        probs = predict(router, self.index.embedder.embed(query))
        return probs, sample_active(probs, self._gating(deterministic), rng)

    def search(
        self,
        query: str,
        mode: str = "mkpqa",
        k: int | None = None,
        rng: np.random.Generator | None = None,
        deterministic: bool | None = None,
    ) -> SearchResult:
        k = self.k if k is None else k
        if mode == "mkpqa":
            return federated_search(
                self.index, query, self._require_router(mode), self._gating(deterministic), k, rng
            )
        if mode == "uis":
            return uis_search(self.index, query, k)
        if mode == "rfs":
            return rfs_search(self.index, query, self._require_router(mode), k)
        if mode == "lfs":
            return lfs_search(self.index, query, self.selector, k)
        raise ValueError(f"unknown search mode {mode!r}; choose from {MODES}")

    def prompt(self, query: str, result: SearchResult) -> str:
        contexts = [self.index.context(r.chunk_id, r.domain) for r in result.results]
        return build_prompt(query, contexts, self.prompt_template)

    def encode_query(self, query: str) -> np.ndarray:
        return encode(self.index.projection, self.index.embedder.embed(query))
