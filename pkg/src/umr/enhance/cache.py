"""Content-addressed store for enhancement results."""
from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path
from typing import Iterable

from ..datamodel import EnhancedRecord, dumps_record


def cache_key(template_id: str, model_id: str, text: str | None, image_ref: str | None,
              image_tokens: Iterable[str] = ()) -> str:
    tokens_digest = hashlib.sha256("\n".join(image_tokens).encode("utf-8")).hexdigest()
    payload = json.dumps([template_id, model_id, text or "", image_ref or "", tokens_digest],
                         ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class EnhancementCache:
    """Thread-safe key -> EnhancedRecord map, optionally mirrored to disk.

    On disk each entry is one JSON file under ``<dir>/<key[:2]>/<key>.json``,
    written atomically, so concurrent puts of the same key are harmless.
    """

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory else None
        self._mem: dict[str, EnhancedRecord] = {}
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> EnhancedRecord | None:
        with self._lock:
            rec = self._mem.get(key)
        if rec is not None or self.directory is None:
            return rec
        p = self._path(key)
        if not p.exists():
            return None
        rec = EnhancedRecord.from_json(json.loads(p.read_text(encoding="utf-8")))
        with self._lock:
            self._mem[key] = rec
        return rec

    def put(self, key: str, record: EnhancedRecord) -> None:
        with self._lock:
            self._mem[key] = record
        if self.directory is None:
            return
        p = self._path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(dumps_record(record.to_json()), encoding="utf-8")
        os.replace(tmp, p)

    def __len__(self) -> int:
        with self._lock:
            return len(self._mem)
