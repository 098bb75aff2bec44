"""Signed feature hashing of token bags."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

_SPLIT = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on any non-alphanumeric run, drop empties."""
    return [t for t in _SPLIT.split(text.lower()) if t]


@lru_cache(maxsize=1 << 18)
def _digest(token: str, seed: int) -> bytes:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    return hashlib.blake2b(token.encode("utf-8"), digest_size=16, key=key).digest()


@dataclass(frozen=True)
class TokenHasher:
    seed: int = 0
    dim: int = 256

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("hash dimension must be >= 2")

    def slot(self, token: str) -> tuple[int, float]:
        """(bucket, sign) for a token; bucket from the first 8 digest bytes,
        sign from the low bit of the ninth."""
        d = _digest(token, self.seed)
        bucket = int.from_bytes(d[:8], "little") % self.dim
        sign = 1.0 if d[8] & 1 else -1.0
        return bucket, sign

    def counts(self, tokens: Iterable[str]) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokens:
            b, s = self.slot(tok)
            v[b] += s
        return v


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def normalize_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, n, out=np.zeros_like(m), where=n > 0)


def hash_embed(text: str, hasher: TokenHasher) -> np.ndarray:
    return normalize(hasher.counts(tokenize(text)))


def hash_embed_many(texts: Sequence[str], hasher: TokenHasher) -> np.ndarray:
    out = np.zeros((len(texts), hasher.dim))
    for i, t in enumerate(texts):
        out[i] = hasher.counts(tokenize(t))
    return normalize_rows(out)
