"""Corpus, query, task and enhanced-record schemas plus JSONL ingestion.

Records use M-BEIR field names (``did``/``qid``, ``txt``, ``img_path``,
``modality``, ``task_id``, ``pos_cand_list``) so real M-BEIR files load
without conversion. Query files may also use the ``query_``-prefixed
variants that M-BEIR ships.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


class Modality(str, enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    IMAGE_TEXT = "image,text"

    @classmethod
    def parse(cls, value: str) -> "Modality":
        norm = ",".join(sorted(p.strip() for p in str(value).lower().split(",")))
        for m in cls:
            if m.value == norm:
                return m
        raise DataError(f"unknown modality {value!r}")


class QueryKind(str, enum.Enum):
    PLAIN = "plain"
    QA = "qa"
    MODIFICATION = "modification"


class Side(str, enum.Enum):
    CORPUS = "corpus"
    QUERY = "query"


class Category(str, enum.Enum):
    I = "I"  # noqa: E741
    II = "II"
    III = "III"


def _check_fields(kind: str, ident: str, modality: Modality, text, image_ref) -> None:
    has_text = bool(text)
    has_image = bool(image_ref)
    expected = {
        Modality.TEXT: (True, False),
        Modality.IMAGE: (False, True),
        Modality.IMAGE_TEXT: (True, True),
    }[modality]
    if (has_text, has_image) != expected:
        raise DataError(
            f"{kind} {ident!r}: modality {modality.value!r} inconsistent with "
            f"text={'set' if has_text else 'absent'}, image={'set' if has_image else 'absent'}"
        )


@dataclass(frozen=True)
class Document:
    did: str
    modality: Modality
    text: str | None = None
    image_ref: str | None = None
    image_tokens_ref: str | None = None
    # sidecar contents, loaded at ingestion; not serialized
    image_tokens: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        _check_fields("document", self.did, self.modality, self.text, self.image_ref)

    def to_json(self) -> dict:
        rec = {"did": self.did, "txt": self.text, "img_path": self.image_ref,
               "modality": self.modality.value}
        if self.image_tokens_ref:
            rec["img_tokens_path"] = self.image_tokens_ref
        return rec


@dataclass(frozen=True)
class Query:
    qid: str
    modality: Modality
    task_id: str
    kind: QueryKind
    positives: frozenset[str]
    text: str | None = None
    image_ref: str | None = None
    instruction: str = ""
    image_tokens_ref: str | None = None
    image_tokens: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        _check_fields("query", self.qid, self.modality, self.text, self.image_ref)
        if not self.positives:
            raise DataError(f"query {self.qid!r}: empty positives")
        if self.kind is not QueryKind.PLAIN and self.modality is Modality.TEXT:
            raise DataError(f"query {self.qid!r}: {self.kind.value} query without an image")

    def to_json(self) -> dict:
        rec = {"qid": self.qid, "txt": self.text, "img_path": self.image_ref,
               "modality": self.modality.value, "task_id": self.task_id,
               "pos_cand_list": sorted(self.positives)}
        if self.instruction:
            rec["instruction"] = self.instruction
        if self.image_tokens_ref:
            rec["img_tokens_path"] = self.image_tokens_ref
        return rec


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    name: str
    query_modality: Modality
    corpus_modality: Modality
    pool_id: str
    kind: QueryKind = QueryKind.PLAIN
    cutoffs: tuple[int, ...] = (1, 5, 10, 50)
    instruction: str = ""
    # excluded from the headline macro average (unreliable ground truth)
    advisory: bool = False

    def __post_init__(self):
        if not self.cutoffs or any(c < 1 for c in self.cutoffs):
            raise DataError(f"task {self.task_id!r}: cutoffs must be positive")
        if any(b <= a for a, b in zip(self.cutoffs, self.cutoffs[1:])):
            raise DataError(f"task {self.task_id!r}: cutoffs must be strictly increasing")

    def to_json(self) -> dict:
        return {"name": self.name, "query_modality": self.query_modality.value,
                "corpus_modality": self.corpus_modality.value, "pool_id": self.pool_id,
                "kind": self.kind.value, "cutoffs": list(self.cutoffs),
                "instruction": self.instruction, "advisory": self.advisory}


@dataclass(frozen=True)
class EnhancedRecord:
    source_id: str
    side: Side
    enhanced_text: str
    category: Category
    template_id: str
    model_id: str
    raw_reply: str
    fallback: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        d["side"] = self.side.value
        d["category"] = self.category.value
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "EnhancedRecord":
        try:
            return cls(
                source_id=str(d["source_id"]),
                side=Side(d["side"]),
                enhanced_text=d["enhanced_text"],
                category=Category(d["category"]),
                template_id=d["template_id"],
                model_id=d["model_id"],
                raw_reply=d["raw_reply"],
                fallback=bool(d.get("fallback", False)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad enhanced record: {exc}") from exc


# --------------------------------------------------------------------------
# ingestion

def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def read_tokens(path: str | os.PathLike) -> tuple[str, ...]:
    """Read a sidecar token file (one token per line)."""
    with open(path, encoding="utf-8") as fh:
        return tuple(t.strip() for t in fh if t.strip())


def _sidecar(base: Path, ref: str | None) -> tuple[str, ...]:
    if not ref:
        return ()
    p = Path(ref)
    if not p.is_absolute():
        p = base / p
    return read_tokens(p)


def _get(rec: dict, *keys):
    for k in keys:
        v = rec.get(k)
        if v not in (None, ""):
            return v
    return None


def load_corpus(path: str | os.PathLike, root: str | os.PathLike | None = None) -> list[Document]:
    """Load a corpus file; relative sidecar paths resolve against ``root``
    (default: the file's directory)."""
    path = Path(path)
    base = Path(root) if root is not None else path.parent
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        try:
            did = str(rec["did"])
            tokens_ref = _get(rec, "img_tokens_path")
            doc = Document(
                did=did,
                modality=Modality.parse(rec["modality"]),
                text=_get(rec, "txt"),
                image_ref=_get(rec, "img_path"),
                image_tokens_ref=tokens_ref,
                image_tokens=_sidecar(base, tokens_ref),
            )
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
        except (DataError, OSError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if did in seen:
            raise DataError(f"{path}:{lineno}: duplicate did {did!r}")
        seen.add(did)
        docs.append(doc)
    return docs


def load_tasks(path: str | os.PathLike) -> dict[str, TaskSpec]:
    """Load a task registry: JSON object mapping task_id to task fields."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return tasks_from_json(raw)


def tasks_from_json(raw: Mapping) -> dict[str, TaskSpec]:
    tasks = {}
    for task_id, t in raw.items():
        try:
            tasks[str(task_id)] = TaskSpec(
                task_id=str(task_id),
                name=t.get("name", str(task_id)),
                query_modality=Modality.parse(t["query_modality"]),
                corpus_modality=Modality.parse(t["corpus_modality"]),
                pool_id=str(t["pool_id"]),
                kind=QueryKind(t.get("kind", "plain")),
                cutoffs=tuple(t.get("cutoffs", (1, 5, 10, 50))),
                instruction=t.get("instruction", ""),
                advisory=bool(t.get("advisory", False)),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"task {task_id!r}: {exc}") from exc
    return tasks


def query_kind(modality: Modality, task: TaskSpec) -> QueryKind:
    """Text-only queries are always plain; otherwise the task table decides."""
    if modality is Modality.TEXT:
        return QueryKind.PLAIN
    return task.kind


def load_queries(path: str | os.PathLike, tasks: Mapping[str, TaskSpec],
                 root: str | os.PathLike | None = None) -> list[Query]:
    path = Path(path)
    base = Path(root) if root is not None else path.parent
    out: list[Query] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        try:
            qid = str(rec["qid"])
            task_id = str(rec["task_id"])
            if task_id not in tasks:
                raise DataError(f"unknown task_id {task_id!r}")
            task = tasks[task_id]
            pos = rec.get("pos_cand_list") or []
            if not pos:
                raise DataError(f"query {qid!r}: empty positives")
            modality = Modality.parse(_get(rec, "query_modality", "modality"))
            tokens_ref = _get(rec, "query_img_tokens_path", "img_tokens_path")
            q = Query(
                qid=qid,
                modality=modality,
                task_id=task_id,
                kind=query_kind(modality, task),
                positives=frozenset(str(p) for p in pos),
                text=_get(rec, "query_txt", "txt"),
                image_ref=_get(rec, "query_img_path", "img_path"),
                instruction=rec.get("instruction") or task.instruction,
                image_tokens_ref=tokens_ref,
                image_tokens=_sidecar(base, tokens_ref),
            )
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
        except (DataError, OSError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if qid in seen:
            raise DataError(f"{path}:{lineno}: duplicate qid {qid!r}")
        seen.add(qid)
        out.append(q)
    return out


def dumps_record(rec: Mapping) -> str:
    return json.dumps(rec, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_jsonl(rows: Iterable[Mapping], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_record(row) + "\n")


def write_enhanced(records: Iterable[EnhancedRecord], path: str | os.PathLike) -> None:
    write_jsonl((r.to_json() for r in records), path)


def read_enhanced(path: str | os.PathLike) -> list[EnhancedRecord]:
    path = Path(path)
    out = []
    for lineno, rec in _iter_jsonl(path):
        try:
            out.append(EnhancedRecord.from_json(rec))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def enhanced_store(records: Iterable[EnhancedRecord]) -> dict[str, EnhancedRecord]:
    return {r.source_id: r for r in records}


# --------------------------------------------------------------------------
# benchmark manifests

@dataclass
class Benchmark:
    """Task registry, candidate pools and query splits described by a manifest.

    Manifest layout (paths relative to the manifest)::

        {"tasks": "tasks.json",
         "pools": {"<pool_id>": "corpus/<pool_id>.jsonl", ...},
         "queries": {"<split>": "queries/<split>.jsonl", ...}}
    """

    root: Path
    manifest: dict
    tasks: dict[str, TaskSpec]
    pools: dict[str, list[Document]]
    queries: dict[str, list[Query]]

    def documents(self) -> list[Document]:
        return [d for docs in self.pools.values() for d in docs]

    def all_queries(self) -> list[Query]:
        return [q for qs in self.queries.values() for q in qs]


def load_benchmark(path: str | os.PathLike) -> Benchmark:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataError(f"no benchmark manifest at {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    root = path.parent
    tasks = load_tasks(root / manifest["tasks"])
    pools = {pid: load_corpus(root / rel, root) for pid, rel in manifest["pools"].items()}
    seen: dict[str, str] = {}
    for pid, docs in pools.items():
        for d in docs:
            if d.did in seen:
                raise DataError(f"did {d.did!r} appears in pools {seen[d.did]!r} and {pid!r}")
            seen[d.did] = pid
    queries = {s: load_queries(root / rel, tasks, root) for s, rel in manifest["queries"].items()}
    return Benchmark(root, manifest, tasks, pools, queries)
