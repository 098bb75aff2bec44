"""CSV / markdown rendering of recall reports and delta tables."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

from .metrics import DeltaTable, RecallReport

AVERAGE = "Average"
AVERAGE_ALL = "Average (all)"


def _header(cutoffs) -> list[str]:
    return ["task"] + [f"R@{c}" for c in cutoffs]


def _rows(report: RecallReport) -> list[tuple[str, dict[int, float]]]:
    rows = list(report.per_task.items())
    if rows:
        rows.append((AVERAGE, report.macro_average()))
        if report.advisory:
            rows.append((AVERAGE_ALL, report.macro_average(True)))
    return rows


def _csv_cell(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _md_cell(v) -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:.2f}"


def render_report(report: RecallReport, format: str = "csv") -> str:
    """CSV carries full-precision fractions; markdown shows percentages to 2 decimals."""
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_header(report.cutoffs))
        for task, row in _rows(report):
            w.writerow([task] + [_csv_cell(row.get(c)) for c in report.cutoffs])
        return buf.getvalue()
    if format == "markdown":
        head = ["Task"] + [f"R@{c}" for c in report.cutoffs]
        lines = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] + [":---:"] * len(report.cutoffs)) + "|"]
        for task, row in _rows(report):
            label = f"{task} (advisory)" if task in report.advisory else task
            if task in (AVERAGE, AVERAGE_ALL):
                label = f"**{task}**"
            lines.append("| " + " | ".join([label] + [_md_cell(row.get(c)) for c in report.cutoffs]) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {format!r}")


def parse_report_csv(text: str) -> tuple[tuple[int, ...], dict[str, dict[int, float]]]:
    """Inverse of the CSV rendering (task rows and average rows alike)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    cutoffs = tuple(int(h[2:]) for h in header[1:])
    rows = {}
    for rec in reader:
        rows[rec[0]] = {c: float(v) for c, v in zip(cutoffs, rec[1:]) if v != ""}
    return cutoffs, rows


def render_delta(delta: DeltaTable, format: str = "csv") -> str:
    rows = list(delta.per_task.items()) + [(AVERAGE, delta.macro), (AVERAGE_ALL, delta.macro_all)]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_header(delta.cutoffs))
        for task, row in rows:
            w.writerow([task] + [_csv_cell(row.get(c)) for c in delta.cutoffs])
        return buf.getvalue()
    if format == "markdown":
        lines = ["| Task | " + " | ".join(f"ΔR@{c}" for c in delta.cutoffs) + " |",
                 "|---|" + "|".join([":---:"] * len(delta.cutoffs)) + "|"]
        for task, row in rows:
            cells = ["-" if row.get(c) is None or math.isnan(row[c]) else f"{100 * row[c]:+.2f}" for c in delta.cutoffs]
            lines.append(f"| {task} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {format!r}")


def write_report(report: RecallReport, out_dir: str | os.PathLike, stem: str = "report") -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.md`` and the full-precision ``<stem>.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "markdown": out / f"{stem}.md", "json": out / f"{stem}.json"}
    paths["csv"].write_text(render_report(report, "csv"), encoding="utf-8", newline="")
    paths["markdown"].write_text(render_report(report, "markdown"), encoding="utf-8")
    paths["json"].write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_report(path: str | os.PathLike) -> RecallReport:
    return RecallReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
