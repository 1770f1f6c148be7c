"""Command-line front end for the full pipeline.

Every command reads an optional JSON config file (--config) and lets
flags override it. All randomness flows from explicit seeds, outputs are
written atomically, and exit codes are machine-checkable: 0 ok, 2 usage
error, 3 data error, 4 remote-backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .corpus import load_corpus, read_chunks, write_chunks
from .datagen import (
    SyntheticSpec,
    export_corpus_pages,
    export_dataset,
    generate_corpus,
    generate_dataset,
    load_dataset,
    routing_examples,
)
from .embedding import EmbedderConfig, build_embedder
from .errors import DataError, FedragError, RemoteBackendError
from .evaluation import BenchmarkConfig, latency_probe, run_benchmark
from .federated import PromptTemplate, RemoteSelector, build_index, load_index, save_index
from .gating import GatingConfig
from .ioutil import atomic_write_text
from .retriever import (
    RetrieverTrainConfig,
    identity_model,
    load_retriever,
    save_retriever,
    train_retriever,
)
from .router import RouterTrainConfig, load_router, save_router, train_router
from .runtime import MODES, SearchRuntime


class Config:
    """Flag values backed by an optional JSON config file; flags win."""

    def __init__(self, path: str | None):
        self.data: dict = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    self.data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read config file {path}: {exc}") from exc

    def get(self, flag_value, *path, default=None):
        if flag_value is not None:
            return flag_value
        node = self.data
        for key in path:
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def require(self, flag_value, *path, flag: str):
        value = self.get(flag_value, *path)
        if value is None:
            raise DataError(f"missing required option --{flag} (or config key {'.'.join(path)})")
        return value


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; explicit flags override it")


def _add_embedder_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("embedder")
    group.add_argument("--embedder-backend", choices=("hashed", "remote"))
    group.add_argument("--dimension", type=int)
    group.add_argument("--no-normalize", action="store_true")
    group.add_argument("--embedder-seed", type=int)
    group.add_argument("--endpoint", help="remote embedder URL")
    group.add_argument("--embedder-timeout", type=float)


def _embedder_config(args, config: Config) -> EmbedderConfig:
    normalize = False if args.no_normalize else config.get(None, "embedder", "normalize", default=True)
    return EmbedderConfig(
        backend=config.get(args.embedder_backend, "embedder", "backend", default="hashed"),
        dimension=config.get(args.dimension, "embedder", "dimension", default=256),
        normalize=normalize,
        seed=config.get(args.embedder_seed, "embedder", "seed", default=0),
        endpoint=config.get(args.endpoint, "embedder", "endpoint"),
        timeout=config.get(args.embedder_timeout, "embedder", "timeout", default=10.0),
    )


def _add_gating_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("gating")
    group.add_argument("--tau0", type=float)
    group.add_argument("--tau-min", type=float)


def _gating_config(args, config: Config, mode: str = "stochastic", seed: int = 0) -> GatingConfig:
    return GatingConfig(
        tau0=config.get(args.tau0, "gating", "tau0", default=0.5),
        tau_min=config.get(args.tau_min, "gating", "tau_min", default=0.05),
        seed=seed,
        mode=mode,
    )


def _add_spec_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("synthetic data")
    group.add_argument("--domains", type=int, help="number of synthetic domains")
    group.add_argument("--vocab-size", type=int)
    group.add_argument("--overlap", type=float)
    group.add_argument("--pages", type=int)
    group.add_argument("--chunks-per-page", type=int)
    group.add_argument("--queries", type=int, help="uni-domain queries per domain")
    group.add_argument("--cross-queries", type=int, help="cross-domain queries per domain pair")
    group.add_argument("--negatives", type=int)


def _spec_from_args(args, config: Config, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        num_domains=config.get(args.domains, "synthetic", "num_domains", default=3),
        vocab_size=config.get(args.vocab_size, "synthetic", "vocab_size", default=200),
        overlap=config.get(args.overlap, "synthetic", "overlap", default=0.3),
        pages_per_domain=config.get(args.pages, "synthetic", "pages_per_domain", default=20),
        chunks_per_page=config.get(args.chunks_per_page, "synthetic", "chunks_per_page", default=5),
        queries_per_domain=config.get(args.queries, "synthetic", "queries_per_domain", default=150),
        cross_queries_per_pair=config.get(
            args.cross_queries, "synthetic", "cross_queries_per_pair", default=40
        ),
        negatives_per_query=config.get(args.negatives, "synthetic", "negatives_per_query", default=4),
        seed=seed,
    )


def cmd_ingest(args) -> int:
    config = Config(args.config)
    corpus_dir = config.require(args.corpus, "paths", "corpus", flag="corpus")
    out = config.require(args.out, "paths", "chunks", flag="out")
    max_tokens = config.get(args.max_tokens, "max_tokens", default=512)
    names = args.domain_names.split(",") if args.domain_names else None
    corpus = load_corpus(corpus_dir, max_tokens=max_tokens, domain_names=names)
    write_chunks(corpus, out)
    for domain in corpus.domains:
        count = sum(1 for c in corpus.chunks if c.domain == domain.id)
        print(f"domain {domain.name}: {count} chunks")
    print(f"wrote {len(corpus.chunks)} chunks to {out}")
    return 0


def cmd_gen(args) -> int:
    config = Config(args.config)
    out_dir = Path(config.require(args.out_dir, "paths", "generated", flag="out-dir"))
    spec = _spec_from_args(args, config, args.seed)
    corpus = generate_corpus(spec)
    pairs = generate_dataset(spec, corpus)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_corpus_pages(corpus, out_dir / "pages")
    write_chunks(corpus, out_dir / "chunks.jsonl")
    export_dataset(pairs, corpus.domains, out_dir / "dataset.jsonl")
    positives = sum(1 for p in pairs if p.label == 1)
    print(f"domains: {', '.join(corpus.domain_names())}")
    print(f"pages: {len(corpus.pages)}  chunks: {len(corpus.chunks)}")
    print(f"pairs: {len(pairs)}  positive ratio: {positives / len(pairs):.3f}")
    print(f"wrote pages/, chunks.jsonl, dataset.jsonl under {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = Config(args.config)
    chunks_path = config.require(args.chunks, "paths", "chunks", flag="chunks")
    dataset_path = config.require(args.dataset, "paths", "dataset", flag="dataset")
    out = config.require(args.out, "paths", f"{args.model}_model", flag="out")
    corpus = read_chunks(chunks_path)
    pairs = load_dataset(dataset_path, corpus.domain_names())
    embedder = build_embedder(_embedder_config(args, config))

    if args.model == "router":
        train_config = RouterTrainConfig(
            learning_rate=config.get(args.lr, "router_train", "learning_rate", default=0.1),
            epochs=config.get(args.epochs, "router_train", "epochs", default=200),
            batch_size=config.get(args.batch_size, "router_train", "batch_size", default=32),
            seed=args.seed,
            l2_penalty=config.get(args.l2_penalty, "router_train", "l2_penalty", default=1e-4),
        )
        examples = routing_examples(pairs, len(corpus.domains))
        model, trace = train_router(examples, embedder, train_config)
        save_router(model, out)
    else:
        train_config = RetrieverTrainConfig(
            temperature=config.get(args.temperature, "retriever_train", "temperature", default=0.05),
            learning_rate=config.get(args.lr, "retriever_train", "learning_rate", default=0.05),
            epochs=config.get(args.epochs, "retriever_train", "epochs", default=100),
            batch_size=config.get(args.batch_size, "retriever_train", "batch_size", default=16),
            seed=args.seed,
            include_in_batch_negatives=args.in_batch_negatives,
        )
        model, trace = train_retriever(pairs, corpus.chunk_texts(), embedder, train_config)
        save_retriever(model, out)

    if trace:
        print(f"epochs: {len(trace)}  loss: {trace[0]:.4f} -> {trace[-1]:.4f}")
    else:
        print("epochs: 0 (model left at initialization)")
    print(f"saved {args.model} model to {out}")
    return 0


def cmd_index(args) -> int:
    config = Config(args.config)
    chunks_path = config.require(args.chunks, "paths", "chunks", flag="chunks")
    out = config.require(args.out, "paths", "index", flag="out")
    corpus = read_chunks(chunks_path)
    embedder = build_embedder(_embedder_config(args, config))
    retriever_path = config.get(args.retriever, "paths", "retriever_model")
    if retriever_path:
        projection = load_retriever(retriever_path, embedder.fingerprint)
    else:
        projection = identity_model(embedder.config.dimension, embedder.fingerprint)
    fidx = build_index(corpus, embedder, projection)
    save_index(fidx, out)
    for index in fidx.indexes:
        print(f"domain {index.name}: {len(index)} vectors")
    print(f"saved index to {out}")
    return 0


def _build_runtime(args, config: Config, mode_seed: int) -> SearchRuntime:
    index_dir = config.require(args.index, "paths", "index", flag="index")
    embedder = build_embedder(_embedder_config(args, config))
    retriever_path = config.get(args.retriever, "paths", "retriever_model")
    if retriever_path:
        projection = load_retriever(retriever_path, embedder.fingerprint)
    else:
        projection = identity_model(embedder.config.dimension, embedder.fingerprint)
    fidx = load_index(index_dir, embedder, projection)
    router_path = config.get(args.router, "paths", "router_model")
    router_model = load_router(router_path, embedder.fingerprint) if router_path else None
    selector_endpoint = config.get(getattr(args, "selector_endpoint", None), "selector", "endpoint")
    selector = RemoteSelector(selector_endpoint) if selector_endpoint else None
    gating = _gating_config(args, config, mode="stochastic", seed=mode_seed)
    k = config.get(getattr(args, "k", None), "k", default=5)
    budget = config.get(getattr(args, "prompt_budget", None), "prompt", "token_budget", default=2048)
    return SearchRuntime(
        index=fidx,
        gating=gating,
        router=router_model,
        selector=selector,
        k=k,
        prompt_template=PromptTemplate(token_budget=budget),
    )


def cmd_search(args) -> int:
    config = Config(args.config)
    runtime = _build_runtime(args, config, args.seed)
    rng = np.random.default_rng(args.seed)
    result = runtime.search(
        args.query, args.mode, args.k, rng, deterministic=True if args.deterministic else None
    )
    if args.json:
        payload = result.to_dict()
        if args.prompt:
            payload["prompt"] = runtime.prompt(args.query, result)
        print(json.dumps(payload))
        return 0
    names = runtime.index.domain_names()
    if result.domain_probs is not None:
        probs = " ".join(f"{names[j]}={p:.4f}" for j, p in enumerate(result.domain_probs))
        print(f"probs: {probs}")
    if result.gate is not None:
        gate_probs = " ".join(f"{g:.4f}" for g in result.gate.gate_probs)
        active = ", ".join(names[j] for j in result.gate.active)
        print(f"tau: {result.gate.tau:.4f}  gate_probs: {gate_probs}  active: {active}")
    for doc in result.results:
        print(
            f"{doc.rank:2d}. {doc.chunk_id}  domain={names[doc.domain]}  "
            f"s={doc.score:.4f}  p={doc.domain_prob:.4f}  U={doc.unified:.4f}"
        )
    if not result.results:
        print("(no results)")
    if args.prompt:
        print("\n--- prompt ---")
        print(runtime.prompt(args.query, result))
    return 0


def cmd_eval(args) -> int:
    config = Config(args.config)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else (0, 1, 2, 3, 4)
    methods = tuple(args.methods.split(",")) if args.methods else ("mkpqa", "uis", "rfs", "lfs")
    gating = _gating_config(
        args, config, mode="deterministic" if args.deterministic_gating else "stochastic"
    )
    bench = BenchmarkConfig(
        methods=methods,
        seeds=seeds,
        k=config.get(args.k, "k", default=5),
        embedder=_embedder_config(args, config),
        gating=gating,
        response_metrics=not args.no_response_metrics,
    )
    chunks_path = config.get(args.chunks, "paths", "chunks")
    dataset_path = config.get(args.dataset, "paths", "dataset")
    if chunks_path and dataset_path:
        data = (chunks_path, dataset_path)
    else:
        data = _spec_from_args(args, config, seed=seeds[0])
    report = run_benchmark(data, bench)
    payload = report.to_dict()
    if args.latency_probe:
        payload["latency_probe"] = latency_probe()
    out = config.get(args.out, "paths", "report")
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        atomic_write_text(out, text + "\n")
        print(f"wrote report to {out}")
    else:
        print(text)
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())
        print(f"wrote CSV to {args.csv}")
    for method in methods:
        stats = report.methods[method]
        parts = [f"{m}={stats[m]['mean']:.3f}" for m in ("acc_top1_all", "acc_top1_uni", "acc_top1_cross") if m in stats]
        print(f"{method}: " + "  ".join(parts))
    if args.latency_probe:
        probe = payload["latency_probe"]
        print(
            f"latency probe ({probe['kernel_backend']}): "
            f"p50={probe['latency_ms_p50']:.2f} ms  p95={probe['latency_ms_p95']:.2f} ms"
        )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import make_app

    config = Config(args.config)
    runtime = _build_runtime(args, config, args.seed)
    host = config.get(args.host, "serve", "host", default="127.0.0.1")
    port = config.get(args.port, "serve", "port", default=8080)
    app = make_app(runtime, base_seed=args.seed)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="chunk a corpus of page files")
    _add_config_flag(p)
    p.add_argument("--corpus", help="directory of page files")
    p.add_argument("--out", help="output chunks.jsonl")
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--domain-names", help="comma-separated explicit domain order")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen", help="generate a synthetic corpus and dataset")
    _add_config_flag(p)
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the router or the retriever")
    _add_config_flag(p)
    p.add_argument("model", choices=("router", "retriever"))
    p.add_argument("--chunks")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--l2-penalty", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--in-batch-negatives", action="store_true")
    _add_embedder_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build and persist the federated index")
    _add_config_flag(p)
    p.add_argument("--chunks")
    p.add_argument("--retriever", help="retriever model JSON (identity projection if omitted)")
    p.add_argument("--out")
    _add_embedder_flags(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="run one query against the index")
    _add_config_flag(p)
    p.add_argument("query")
    p.add_argument("--index")
    p.add_argument("--router")
    p.add_argument("--retriever")
    p.add_argument("--mode", choices=MODES, default="mkpqa")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--prompt", action="store_true", help="also print the augmented prompt")
    p.add_argument("--prompt-budget", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--selector-endpoint")
    _add_embedder_flags(p)
    _add_gating_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="run the benchmark and write a report")
    _add_config_flag(p)
    p.add_argument("--chunks", help="evaluate a fixed chunks.jsonl instead of synthetic data")
    p.add_argument("--dataset", help="dataset.jsonl to pair with --chunks")
    p.add_argument("--methods", help="comma-separated subset of mkpqa,uis,rfs,lfs")
    p.add_argument("--seeds", help="comma-separated seed list (default 0,1,2,3,4)")
    p.add_argument("--k", type=int)
    p.add_argument("--deterministic-gating", action="store_true")
    p.add_argument("--no-response-metrics", action="store_true")
    p.add_argument("--latency-probe", action="store_true")
    p.add_argument("--out", help="report JSON path (stdout if omitted)")
    p.add_argument("--csv", help="also write a CSV table")
    _add_spec_flags(p)
    _add_embedder_flags(p)
    _add_gating_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_config_flag(p)
    p.add_argument("--index")
    p.add_argument("--router")
    p.add_argument("--retriever")
    p.add_argument("--k", type=int)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--selector-endpoint")
    _add_embedder_flags(p)
    _add_gating_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RemoteBackendError as exc:
        print(f"error: remote backend: {exc}", file=sys.stderr)
        return 4
    except (DataError, FedragError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
