"""Hit-based Recall@K and the report / delta containers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ..index import SearchResult


def recall_at_k(ranked: SearchResult | Sequence[str], positives: Iterable[str], k: int) -> int:
    """1 if any positive is among the first min(k, len(ranked)) entries, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = set(positives)
    if not positives:
        raise ValueError("empty positive set")
    ids = ranked.ids if isinstance(ranked, SearchResult) else list(ranked)
    return int(any(d in positives for d in ids[:k]))


def mean_recall(rankings: Sequence, positives: Sequence[Iterable[str]], k: int) -> float:
    if not rankings:
        return 0.0
    return sum(recall_at_k(r, p, k) for r, p in zip(rankings, positives)) / len(rankings)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else float("nan")


@dataclass
class RecallReport:
    """Per-task recall at each cutoff, in fixed task order."""

    cutoffs: tuple[int, ...]
    per_task: dict[str, dict[int, float]]
    advisory: frozenset[str] = frozenset()
    n_queries: dict[str, int] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for task, row in self.per_task.items():
            vals = [row[c] for c in self.cutoffs if c in row]
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise ValueError(f"{task}: recall outside [0, 1]")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{task}: recall decreases with k")

    @property
    def tasks(self) -> list[str]:
        return list(self.per_task)

    def macro_average(self, include_advisory: bool = False) -> dict[int, float]:
        rows = [r for t, r in self.per_task.items() if include_advisory or t not in self.advisory]
        return {c: _mean([r[c] for r in rows if c in r]) for c in self.cutoffs}

    def to_json(self) -> dict:
        return {
            "cutoffs": list(self.cutoffs),
            "per_task": {t: {str(c): v for c, v in row.items()} for t, row in self.per_task.items()},
            "advisory": sorted(self.advisory),
            "n_queries": dict(self.n_queries),
            "macro_average": {str(c): v for c, v in self.macro_average().items()},
            "macro_average_all": {str(c): v for c, v in self.macro_average(True).items()},
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "RecallReport":
        return cls(
            cutoffs=tuple(doc["cutoffs"]),
            per_task={t: {int(c): float(v) for c, v in row.items()} for t, row in doc["per_task"].items()},
            advisory=frozenset(doc.get("advisory", ())),
            n_queries={t: int(n) for t, n in doc.get("n_queries", {}).items()},
            metadata=dict(doc.get("metadata", {})),
        )


@dataclass
class DeltaTable:
    cutoffs: tuple[int, ...]
    per_task: dict[str, dict[int, float]]
    macro: dict[int, float]
    macro_all: dict[int, float]

    def nonzero(self) -> list[tuple[str, int, float]]:
        return [(t, c, v) for t, row in self.per_task.items() for c, v in row.items() if v != 0]


def compare_reports(a: RecallReport, b: RecallReport) -> DeltaTable:
    """Cell-wise b - a."""
    if set(a.per_task) != set(b.per_task):
        raise ValueError(f"task sets differ: {sorted(set(a.per_task) ^ set(b.per_task))}")
    if a.cutoffs != b.cutoffs:
        raise ValueError(f"cutoffs differ: {a.cutoffs} vs {b.cutoffs}")
    per_task = {t: {c: b.per_task[t][c] - a.per_task[t][c] for c in a.cutoffs if c in a.per_task[t]}
                for t in a.per_task}
    ma, mb = a.macro_average(), b.macro_average()
    ma_all, mb_all = a.macro_average(True), b.macro_average(True)
    return DeltaTable(a.cutoffs, per_task,
                      {c: mb[c] - ma[c] for c in a.cutoffs},
                      {c: mb_all[c] - ma_all[c] for c in a.cutoffs})
