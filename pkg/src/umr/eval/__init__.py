from .metrics import DeltaTable, RecallReport, compare_reports, mean_recall, recall_at_k
from .report import (parse_report_csv, read_report, render_delta, render_report,
                     write_report)
from .runner import (MODE_FLAGS, AblationMode, MissingEnhancementError, RunConfig,
                     run_eval)

__all__ = [
    "DeltaTable", "RecallReport", "compare_reports", "mean_recall", "recall_at_k",
    "parse_report_csv", "read_report", "render_delta", "render_report", "write_report",
    "MODE_FLAGS", "AblationMode", "MissingEnhancementError", "RunConfig", "run_eval",
]
