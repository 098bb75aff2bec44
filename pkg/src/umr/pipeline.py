"""End-to-end glue: enhance a benchmark, train per ablation mode, evaluate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .datamodel import Benchmark, Document, EnhancedRecord, Query, TaskSpec, enhanced_store
from .embed.model import TwoTowerModel, document_surface, init_model, query_surface
from .embed.train import TrainConfig, TrainPair, train
from .enhance.cache import EnhancementCache
from .enhance.core import DispatchStats, dispatch_batch
from .enhance.gateway import Gateway
from .eval.metrics import RecallReport
from .eval.runner import AblationMode, RunConfig, run_eval

log = logging.getLogger(__name__)

Store = Mapping[str, EnhancedRecord]


@dataclass
class EnhancedStores:
    corpus: dict[str, EnhancedRecord]
    queries: dict[str, EnhancedRecord]
    stats: dict = field(default_factory=dict)


def enhance_benchmark(bench: Benchmark, gateway: Gateway, cache: EnhancementCache | None = None) -> EnhancedStores:
    cache = cache if cache is not None else EnhancementCache()
    cstats, qstats = DispatchStats(), DispatchStats()
    corpus = dispatch_batch(bench.documents(), gateway, cache, cstats)
    queries = dispatch_batch(bench.all_queries(), gateway, cache, qstats)
    return EnhancedStores(enhanced_store(corpus), enhanced_store(queries),
                          {"corpus": cstats.summary(), "queries": qstats.summary()})


def training_pairs(tasks: Mapping[str, TaskSpec], pools: Mapping[str, Sequence[Document]],
                   queries: Sequence[Query], corpus_store: Store | None = None,
                   query_store: Store | None = None) -> list[TrainPair]:
    """One pair per query: its surface and that of its first (sorted) positive in the task pool."""
    by_id = {pid: {d.did: d for d in docs} for pid, docs in pools.items()}
    pairs = []
    for q in queries:
        pid = tasks[q.task_id].pool_id
        pos = next((by_id[pid][d] for d in sorted(q.positives) if d in by_id[pid]), None)
        if pos is None:
            raise KeyError(f"query {q.qid!r}: no positive in pool {pid!r}")
        qs = query_surface(q, query_store.get(q.qid) if query_store else None)
        ds = document_surface(pos, corpus_store.get(pos.did) if corpus_store else None)
        pairs.append(TrainPair(qs, ds, q.positives, pid))
    return pairs


def negatives_pool(pools: Mapping[str, Sequence[Document]], corpus_store: Store | None = None
                   ) -> dict[str, list[tuple[str, str]]]:
    return {pid: [(d.did, document_surface(d, corpus_store.get(d.did) if corpus_store else None)) for d in docs]
            for pid, docs in pools.items()}


def train_for_mode(bench: Benchmark, stores: EnhancedStores | None, mode: AblationMode | str,
                   train_config: TrainConfig, init: TwoTowerModel | None = None,
                   split: str = "train") -> TwoTowerModel:
    cfg = RunConfig.for_mode(mode)
    cstore = stores.corpus if stores and cfg.train_enhanced_corpus else None
    qstore = stores.queries if stores and cfg.train_enhanced_queries else None
    init = init if init is not None else init_model(seed=train_config.seed)
    pairs = training_pairs(bench.tasks, bench.pools, bench.queries[split], cstore, qstore)
    negs = negatives_pool(bench.pools, cstore) if train_config.hard_negatives_per_query > 0 else None
    return train(init, pairs, negs, train_config)


def evaluate(bench: Benchmark, stores: EnhancedStores | None, model: TwoTowerModel,
             config: RunConfig, split: str = "test") -> RecallReport:
    return run_eval(bench.tasks, bench.pools, bench.queries[split],
                    stores.corpus if stores else None, stores.queries if stores else None, model, config)


def run_ablation(bench: Benchmark, stores: EnhancedStores, train_config: TrainConfig,
                 modes: Sequence[AblationMode | str] = tuple(AblationMode),
                 init: TwoTowerModel | None = None) -> dict[str, RecallReport]:
    """Train once per training configuration and evaluate every requested mode.

    Inference-only reuses the baseline checkpoint, so the two differ only in
    which data is fed at evaluation time.
    """
    if init is None:
        init = init_model(tau=train_config.tau, seed=train_config.seed, hasher_seed=train_config.seed)
    trained: dict[tuple[bool, bool], TwoTowerModel] = {}
    reports = {}
    for mode in map(AblationMode, modes):
        cfg = RunConfig.for_mode(mode, seed=train_config.seed)
        key = (cfg.train_enhanced_queries, cfg.train_enhanced_corpus)
        if key not in trained:
            train_mode = AblationMode.BASELINE if mode is AblationMode.INFERENCE_ONLY else mode
            trained[key] = train_for_mode(bench, stores, train_mode, train_config, init)
        rep = evaluate(bench, stores, trained[key], cfg)
        reports[mode.value] = rep
        log.info("%s macro R@5 %.4f", mode.value, rep.macro_average().get(5, float("nan")))
    return reports


__all__ = ["EnhancedStores", "enhance_benchmark", "training_pairs", "negatives_pool",
           "train_for_mode", "evaluate", "run_ablation"]
