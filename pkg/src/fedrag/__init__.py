"""fedrag: federated multi-domain retrieval with probabilistic routing,
entropy-adaptive stochastic gating, and unified cross-domain ranking."""

from .corpus import Chunk, Corpus, Domain, SourcePage, chunk_page, count_tokens, load_corpus
from .datagen import QueryDocPair, SyntheticSpec, generate_corpus, generate_dataset
from .embedding import EmbedderConfig, build_embedder, embed, embed_batch, similarity
from .errors import DataError, FedragError, RemoteBackendError
from .evaluation import BenchmarkConfig, EvalReport, acc_at_top1, run_benchmark
from .federated import (
    FederatedIndex,
    RankedDoc,
    SearchResult,
    build_index,
    federated_search,
    lfs_search,
    rfs_search,
    uis_search,
)
from .gating import GateDecision, GatingConfig, adaptive_threshold, gate_probability, sample_active
from .retriever import ProjectionModel, RetrieverTrainConfig, encode, train_retriever
from .router import RouterModel, RouterTrainConfig, predict, train_router
from .runtime import SearchRuntime

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "Corpus",
    "Domain",
    "SourcePage",
    "chunk_page",
    "count_tokens",
    "load_corpus",
    "QueryDocPair",
    "SyntheticSpec",
    "generate_corpus",
    "generate_dataset",
    "EmbedderConfig",
    "build_embedder",
    "embed",
    "embed_batch",
    "similarity",
    "DataError",
    "FedragError",
    "RemoteBackendError",
    "BenchmarkConfig",
    "EvalReport",
    "acc_at_top1",
    "run_benchmark",
    "FederatedIndex",
    "RankedDoc",
    "SearchResult",
    "build_index",
    "federated_search",
    "lfs_search",
    "rfs_search",
    "uis_search",
    "GateDecision",
    "GatingConfig",
    "adaptive_threshold",
    "gate_probability",
    "sample_active",
    "ProjectionModel",
    "RetrieverTrainConfig",
    "encode",
    "train_retriever",
    "RouterModel",
    "RouterTrainConfig",
    "predict",
    "train_router",
    "SearchRuntime",
    "__version__",
]
