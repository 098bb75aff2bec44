"""Category routing and assembly of enhanced records.

Corpus side: text-only entries pass through, image-only entries are
replaced by a dense caption, image+text entries get the caption appended
as a ``Visual Context`` line. Query side: text-only queries pass through,
image-only queries get a short caption, QA queries are rewritten with the
image, modification requests are distilled from the text alone.
"""
from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

from ..datamodel import (Category, Document, EnhancedRecord, Modality, Query,
                         QueryKind, Side)
from .cache import EnhancementCache, cache_key
from .gateway import Gateway, GatewayError
from .prompts import (TEMPLATES, PromptMessage, build_corpus_caption_prompt,
                      build_modification_prompt, build_qa_rewrite_prompt,
                      build_query_caption_prompt)

log = logging.getLogger(__name__)

VISUAL_CONTEXT = "\nVisual Context: "
IDENTITY = "identity"

Item = Union[Document, Query]

_CATEGORY = {Modality.TEXT: Category.I, Modality.IMAGE: Category.II,
             Modality.IMAGE_TEXT: Category.III}


def classify_corpus(doc: Document) -> Category:
    return _CATEGORY[doc.modality]


def classify_query(q: Query) -> Category:
    return _CATEGORY[q.modality]


def route(side: Side, modality: Modality, kind: QueryKind = QueryKind.PLAIN) -> tuple[Category, str]:
    """Map (side, modality, kind) to (category, template_id). Total over all inputs."""
    cat = _CATEGORY[modality]
    if cat is Category.I:
        return cat, IDENTITY
    if side is Side.CORPUS:
        return cat, "corpus_caption"
    if cat is Category.II:
        return cat, "query_caption"
    if kind is QueryKind.QA:
        return cat, "qa_rewrite"
    if kind is QueryKind.MODIFICATION:
        return cat, "modification"
    # plain image+text query: treat like a corpus pair, append a short caption
    return cat, "query_caption"


@dataclass(frozen=True)
class Plan:
    item: Item
    side: Side
    category: Category
    template_id: str
    message: PromptMessage | None
    key: str | None

    @property
    def source_id(self) -> str:
        return self.item.did if self.side is Side.CORPUS else self.item.qid


def plan(item: Item, model_id: str) -> Plan:
    if isinstance(item, Document):
        side, kind = Side.CORPUS, QueryKind.PLAIN
    else:
        side, kind = Side.QUERY, item.kind
    cat, tid = route(side, item.modality, kind)
    if tid == IDENTITY:
        return Plan(item, side, cat, tid, None, None)
    if tid == "corpus_caption":
        msg = build_corpus_caption_prompt(item.image_ref)
    elif tid == "query_caption":
        msg = build_query_caption_prompt(item.image_ref)
    elif tid == "qa_rewrite":
        msg = build_qa_rewrite_prompt(item.text, item.image_ref)
    else:
        msg = build_modification_prompt(item.text)
    image_ref = item.image_ref if msg.images else None
    tokens = item.image_tokens if msg.images else ()
    key = cache_key(tid, model_id, item.text, image_ref, tokens)
    return Plan(item, side, cat, tid, msg, key)


def assemble(p: Plan, reply: str | None, model_id: str) -> EnhancedRecord:
    """Build the record for a plan; ``reply=None`` means the call failed."""
    original = p.item.text or ""
    if p.template_id == IDENTITY:
        return EnhancedRecord(p.source_id, p.side, original, p.category, IDENTITY, "", "", False)
    clean = (reply or "").strip()
    if not clean:
        return EnhancedRecord(p.source_id, p.side, original, p.category, p.template_id,
                              model_id, reply or "", True)
    if p.category is Category.III and p.template_id in ("corpus_caption", "query_caption"):
        text = original + VISUAL_CONTEXT + clean
    else:
        text = clean
    return EnhancedRecord(p.source_id, p.side, text, p.category, p.template_id, model_id, reply, False)


@dataclass
class DispatchStats:
    total: int = 0
    identity: int = 0
    cached: int = 0
    enhanced: int = 0
    fallback: int = 0
    calls: int = 0
    retries: int = 0
    over_budget: int = 0
    errors: list[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + n)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in
                ("total", "identity", "cached", "enhanced", "fallback", "calls", "retries")}


def _call_with_retries(gateway: Gateway, msg: PromptMessage, stats: DispatchStats,
                       sleep=time.sleep) -> str | None:
    cfg = gateway.config
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            stats.bump("retries")
            sleep(cfg.backoff_base * 2 ** (attempt - 1))
        stats.bump("calls")
        try:
            return gateway.complete(msg)
        except (GatewayError, OSError, ValueError) as exc:
            last = exc
            log.debug("gateway attempt %d failed: %s", attempt + 1, exc)
    log.error("enhancement failed after %d attempts: %s", cfg.max_retries + 1, last)
    with stats._lock:
        stats.errors.append(str(last))
    return None


def _check_budget(p: Plan, reply: str, stats: DispatchStats) -> None:
    budget = TEMPLATES[p.template_id].word_budget
    if budget and len(reply.split()) > 2 * budget:
        stats.bump("over_budget")
        log.warning("%s: reply of %d words exceeds twice the %d-word budget",
                    p.source_id, len(reply.split()), budget)


def dispatch_batch(items: Sequence[Item], gateway: Gateway, cache: EnhancementCache,
                   stats: DispatchStats | None = None, sleep=time.sleep) -> list[EnhancedRecord]:
    """Enhance many items: cache first, one call per distinct key, bounded concurrency.

    Results align with ``items``. Failed items come back as fallback
    records carrying their original text; the batch never aborts.
    """
    stats = stats if stats is not None else DispatchStats()
    model_id = gateway.config.model_id
    plans = [plan(it, model_id) for it in items]
    stats.bump("total", len(plans))
    results: list[EnhancedRecord | None] = [None] * len(plans)
    pending: dict[str, list[int]] = {}
    for i, p in enumerate(plans):
        if p.key is None:
            results[i] = assemble(p, None, model_id)
            stats.bump("identity")
            continue
        hit = cache.get(p.key)
        if hit is not None:
            results[i] = replace(hit, source_id=p.source_id)
            stats.bump("cached")
            continue
        pending.setdefault(p.key, []).append(i)

    def work(key: str) -> tuple[str, str | None]:
        return key, _call_with_retries(gateway, plans[pending[key][0]].message, stats, sleep)

    if pending:
        workers = min(gateway.config.max_in_flight, len(pending))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            replies = list(pool.map(work, list(pending)))
        for key, reply in replies:
            first = None
            for i in pending[key]:
                rec = assemble(plans[i], reply, model_id)
                results[i] = rec
                stats.bump("fallback" if rec.fallback else "enhanced")
                first = first or rec
            if not first.fallback:
                _check_budget(plans[pending[key][0]], first.raw_reply, stats)
                cache.put(key, first)
    return results  # type: ignore[return-value]


def enhance_corpus(doc: Document, gateway: Gateway, cache: EnhancementCache,
                   stats: DispatchStats | None = None) -> EnhancedRecord:
    return dispatch_batch([doc], gateway, cache, stats)[0]


def enhance_query(q: Query, gateway: Gateway, cache: EnhancementCache,
                  stats: DispatchStats | None = None) -> EnhancedRecord:
    return dispatch_batch([q], gateway, cache, stats)[0]
