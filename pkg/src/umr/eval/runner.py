"""Ablation modes and the evaluation loop."""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence


from ..datamodel import Document, EnhancedRecord, Query, TaskSpec
from ..embed.hashing import TokenHasher
from ..embed.model import TwoTowerModel, embed_documents, embed_queries
from ..index import VectorIndex, batch_search
from .metrics import RecallReport, mean_recall


class AblationMode(str, enum.Enum):
    BASELINE = "baseline"
    Q_ONLY = "q-only"
    C_ONLY = "c-only"
    FULL = "full"
    INFERENCE_ONLY = "inference-only"


# (train queries, train corpus, eval queries, eval corpus)
MODE_FLAGS: dict[AblationMode, tuple[bool, bool, bool, bool]] = {
    AblationMode.BASELINE: (False, False, False, False),
    AblationMode.Q_ONLY: (True, False, True, False),
    AblationMode.C_ONLY: (False, True, False, True),
    AblationMode.FULL: (True, True, True, True),
    AblationMode.INFERENCE_ONLY: (False, False, True, True),
}


class MissingEnhancementError(KeyError):
    def __init__(self, side: str, ids: Sequence[str]):
        self.side = side
        self.ids = list(ids)
        shown = ", ".join(self.ids[:10]) + (" ..." if len(self.ids) > 10 else "")
        super().__init__(f"{len(self.ids)} {side} record(s) lack an enhanced entry: {shown}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class RunConfig:
    mode: AblationMode
    train_enhanced_queries: bool
    train_enhanced_corpus: bool
    eval_enhanced_queries: bool
    eval_enhanced_corpus: bool
    model_checkpoint: str | None = None
    seed: int = 0

    def __post_init__(self):
        flags = (self.train_enhanced_queries, self.train_enhanced_corpus,
                 self.eval_enhanced_queries, self.eval_enhanced_corpus)
        if MODE_FLAGS[AblationMode(self.mode)] != flags:
            raise ValueError(f"flags {flags} do not match mode {self.mode}")

    @classmethod
    def for_mode(cls, mode: AblationMode | str, model_checkpoint: str | None = None, seed: int = 0) -> "RunConfig":
        mode = AblationMode(mode)
        return cls(mode, *MODE_FLAGS[mode], model_checkpoint=model_checkpoint, seed=seed)


def _require(items, ident, store, side: str) -> None:
    missing = [ident(x) for x in items if ident(x) not in store]
    if missing:
        raise MissingEnhancementError(side, missing)


def run_eval(tasks: Mapping[str, TaskSpec], pools: Mapping[str, Sequence[Document]],
             queries: Sequence[Query], corpus_store: Mapping[str, EnhancedRecord] | None,
             query_store: Mapping[str, EnhancedRecord] | None, model: TwoTowerModel,
             config: RunConfig, hasher: TokenHasher | None = None, workers: int | None = None,
             indexes: Mapping[str, VectorIndex] | None = None) -> RecallReport:
    """Recall per task, tasks in the registry order; tasks without queries are skipped.

    ``indexes`` supplies prebuilt pool indexes (they must have been embedded
    with the same checkpoint and corpus flag); missing pools are embedded here.
    """
    hasher = hasher or model.hasher()
    by_task: dict[str, list[Query]] = {}
    for q in queries:
        if q.task_id not in tasks:
            raise KeyError(f"query {q.qid!r} references unknown task {q.task_id!r}")
        by_task.setdefault(q.task_id, []).append(q)
    active = [t for t in tasks if t in by_task]
    cutoff_sets = {tasks[t].cutoffs for t in active}
    if len(cutoff_sets) > 1:
        raise ValueError(f"tasks disagree on cutoffs: {sorted(cutoff_sets)}")
    cutoffs = cutoff_sets.pop() if cutoff_sets else (1, 5, 10, 50)

    cstore = corpus_store if config.eval_enhanced_corpus else None
    qstore = query_store if config.eval_enhanced_queries else None
    used_pools = sorted({tasks[t].pool_id for t in active})
    if config.eval_enhanced_corpus:
        _require([d for p in used_pools for d in pools[p]], lambda d: d.did, cstore or {}, "corpus")
    if config.eval_enhanced_queries:
        _require([q for t in active for q in by_task[t]], lambda q: q.qid, qstore or {}, "query")

    indexes = dict(indexes or {})
    for pid in used_pools:
        if pid in indexes:
            continue
        docs = pools[pid]
        indexes[pid] = VectorIndex([d.did for d in docs], embed_documents(docs, model, hasher, cstore))

    k = max(cutoffs)

    def one(task_id: str) -> dict[int, float]:
        qs = by_task[task_id]
        Z = embed_queries(qs, model, hasher, qstore)
        ranked = batch_search(indexes[tasks[task_id].pool_id], list(Z), k)
        pos = [q.positives for q in qs]
        return {c: mean_recall(ranked, pos, c) for c in cutoffs}

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, active))
    else:
        rows = [one(t) for t in active]
    return RecallReport(
        cutoffs=tuple(cutoffs),
        per_task=dict(zip(active, rows)),
        advisory=frozenset(t for t in active if tasks[t].advisory),
        n_queries={t: len(by_task[t]) for t in active},
        metadata={"mode": AblationMode(config.mode).value, "seed": config.seed,
                  "checkpoint": config.model_checkpoint},
    )
