"""Two-tower projection over hashed features, surfaces, and checkpoints."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..datamodel import Document, EnhancedRecord, Query
from .hashing import TokenHasher, hash_embed_many, normalize_rows, tokenize

CHECKPOINT_VERSION = 1


class SilentInputError(ValueError):
    """An input has neither text nor visual sidecar tokens to embed."""


@dataclass(eq=False)
class TwoTowerModel:
    W_q: np.ndarray
    W_d: np.ndarray
    tau: float = 0.07
    hasher_seed: int = 0
    init_seed: int = 0
    # per-epoch mean training losses, newest last
    history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.W_q.shape != self.W_d.shape:
            raise ValueError("tower shapes differ")
        if not (np.isfinite(self.W_q).all() and np.isfinite(self.W_d).all()):
            raise ValueError("non-finite model parameters")

    @property
    def dim_in(self) -> int:
        return self.W_q.shape[0]

    @property
    def dim_out(self) -> int:
        return self.W_q.shape[1]

    def hasher(self) -> TokenHasher:
        return TokenHasher(self.hasher_seed, self.dim_in)

    def copy(self) -> "TwoTowerModel":
        return TwoTowerModel(self.W_q.copy(), self.W_d.copy(), self.tau,
                             self.hasher_seed, self.init_seed, self.history)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TwoTowerModel):
            return NotImplemented
        return (self.tau == other.tau and self.hasher_seed == other.hasher_seed
                and np.array_equal(self.W_q, other.W_q) and np.array_equal(self.W_d, other.W_d))

    def project_queries(self, h: np.ndarray) -> np.ndarray:
        return normalize_rows(np.atleast_2d(h) @ self.W_q)

    def project_documents(self, h: np.ndarray) -> np.ndarray:
        return normalize_rows(np.atleast_2d(h) @ self.W_d)


def init_model(dim_in: int = 256, dim_out: int = 128, tau: float = 0.07, seed: int = 0,
               hasher_seed: int = 0, noise: float = 1e-3) -> TwoTowerModel:
    """Identity-like start: input bucket i feeds output i mod dim_out, plus seeded noise."""
    base = np.zeros((dim_in, dim_out))
    base[np.arange(dim_in), np.arange(dim_in) % dim_out] = 1.0
    rng = np.random.default_rng(seed)
    W_q = base + noise * rng.standard_normal(base.shape)
    W_d = base + noise * rng.standard_normal(base.shape)
    return TwoTowerModel(W_q, W_d, tau, hasher_seed, seed)


# --------------------------------------------------------------------------
# surfaces

def _with_sidecar(text_tokens: list[str], sidecar: Sequence[str]) -> list[str]:
    seen = set(text_tokens)
    extra = []
    for raw in sidecar:
        for t in tokenize(raw):
            if t not in seen:
                seen.add(t)
                extra.append(t)
    return text_tokens + extra


def document_surface(doc: Document, enhanced: EnhancedRecord | None = None) -> str:
    """Text the corpus tower sees: (enhanced) text plus sidecar tokens not already present."""
    text = enhanced.enhanced_text if enhanced is not None else (doc.text or "")
    body = tokenize(text)
    tokens = _with_sidecar(body, doc.image_tokens)
    if not tokens:
        raise SilentInputError(f"document {doc.did!r} has no text and no sidecar tokens")
    return " ".join(tokens)


def query_surface(q: Query, enhanced: EnhancedRecord | None = None) -> str:
    """Instruction plus either the enhanced text or, without one, raw text and sidecar tokens."""
    if enhanced is not None:
        content = tokenize(enhanced.enhanced_text)
    else:
        content = _with_sidecar(tokenize(q.text or ""), q.image_tokens)
    if not content:
        raise SilentInputError(f"query {q.qid!r} has no text and no sidecar tokens")
    return " ".join(tokenize(q.instruction) + content)


# --------------------------------------------------------------------------
# embedding

def embed_query(q: Query, model: TwoTowerModel, hasher: TokenHasher | None = None,
                enhanced: EnhancedRecord | None = None) -> np.ndarray:
    return embed_queries([q], model, hasher, {q.qid: enhanced} if enhanced else None)[0]


def embed_document(d: Document, model: TwoTowerModel, hasher: TokenHasher | None = None,
                   enhanced: EnhancedRecord | None = None) -> np.ndarray:
    return embed_documents([d], model, hasher, {d.did: enhanced} if enhanced else None)[0]


def embed_queries(queries: Sequence[Query], model: TwoTowerModel, hasher: TokenHasher | None = None,
                  store: Mapping[str, EnhancedRecord] | None = None) -> np.ndarray:
    hasher = hasher or model.hasher()
    surfaces = [query_surface(q, store.get(q.qid) if store else None) for q in queries]
    return model.project_queries(hash_embed_many(surfaces, hasher))


def embed_documents(docs: Sequence[Document], model: TwoTowerModel, hasher: TokenHasher | None = None,
                    store: Mapping[str, EnhancedRecord] | None = None) -> np.ndarray:
    hasher = hasher or model.hasher()
    surfaces = [document_surface(d, store.get(d.did) if store else None) for d in docs]
    return model.project_documents(hash_embed_many(surfaces, hasher))


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: TwoTowerModel, path: str | os.PathLike) -> None:
    """JSON container; Python floats round-trip exactly through repr."""
    doc = {
        "format": "umr-two-tower",
        "version": CHECKPOINT_VERSION,
        "D": model.dim_in,
        "D_out": model.dim_out,
        "tau": model.tau,
        "seed": model.hasher_seed,
        "init_seed": model.init_seed,
        "history": list(model.history),
        "W_q": model.W_q.ravel(order="C").tolist(),
        "W_d": model.W_d.ravel(order="C").tolist(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, separators=(",", ":")), encoding="utf-8")


def load_checkpoint(path: str | os.PathLike) -> TwoTowerModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "umr-two-tower" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    shape = (doc["D"], doc["D_out"])
    return TwoTowerModel(
        np.asarray(doc["W_q"], dtype=np.float64).reshape(shape),
        np.asarray(doc["W_d"], dtype=np.float64).reshape(shape),
        float(doc["tau"]), int(doc["seed"]), int(doc.get("init_seed", 0)),
        tuple(doc.get("history", ())),
    )
