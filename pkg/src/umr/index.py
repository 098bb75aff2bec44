"""Exact top-k search over normalized embeddings.

Scores are plain dot products (cosine for unit rows). Ties are broken by
ascending document id so rankings are reproducible across platforms.
"""
from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"UMRIDX\x00\x01"


class IndexBuildError(ValueError):
    pass


@dataclass(frozen=True)
class SearchResult:
    entries: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class VectorIndex:
    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise IndexBuildError("matrix rows must match ids")
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if list(ids).count(i) > 1)
            raise IndexBuildError(f"duplicate did {dup!r}")
        self.ids = list(ids)
        self.matrix = matrix
        self.matrix.setflags(write=False)
        # rank of each id in ascending string order, for tie-breaks
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build(vectors: Iterable[tuple[str, np.ndarray]]) -> VectorIndex:
    vectors = list(vectors)
    if not vectors:
        raise IndexBuildError("cannot build an empty index")
    dims = {np.asarray(v).shape for _, v in vectors}
    if len(dims) != 1:
        raise IndexBuildError(f"dimension mismatch: {sorted(dims)}")
    return VectorIndex([d for d, _ in vectors], np.vstack([v for _, v in vectors]))


def search(index: VectorIndex, q: np.ndarray, k: int) -> SearchResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise IndexBuildError(f"query dim {q.shape} != index dim {index.dim}")
    scores = index.matrix @ q
    n = len(scores)
    k = min(k, n)
    if k < n:
        # everything scoring at least the k-th best, then exact ordering
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((index._id_rank[cand], -scores[cand]))[:k]
    top = cand[order]
    return SearchResult(tuple((index.ids[i], float(scores[i])) for i in top))


def batch_search(index: VectorIndex, queries: Sequence[np.ndarray], k: int,
                 workers: int | None = None) -> list[SearchResult]:
    """Elementwise ``search``; parallel across queries when ``workers > 1``."""
    if not len(queries):
        return []
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda q: search(index, q, k), queries))
    return [search(index, q, k) for q in queries]


def save_index(index: VectorIndex, path: str | os.PathLike) -> None:
    """Header line (JSON) + row-major little-endian f64 matrix + JSON id table."""
    header = json.dumps({"version": 1, "N": len(index), "D_out": index.dim}).encode()
    ids = json.dumps(index.ids, ensure_ascii=False).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(index.matrix.astype("<f8").tobytes(order="C"))
        fh.write(struct.pack("<Q", len(ids)))
        fh.write(ids)


def load_index(path: str | os.PathLike) -> VectorIndex:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise IndexBuildError(f"{path}: not an index file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        n, d = header["N"], header["D_out"]
        matrix = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).astype(np.float64)
        (ilen,) = struct.unpack("<Q", fh.read(8))
        ids = json.loads(fh.read(ilen).decode("utf-8"))
    return VectorIndex(ids, matrix)
