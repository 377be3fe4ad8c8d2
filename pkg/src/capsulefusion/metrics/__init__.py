from .report import (
    ClassificationReport,
    ConfusionMatrix,
    ReportRow,
    balanced_accuracy,
    confusion,
    f1_score,
    render,
    render_text,
    report,
    report_from_json,
    summarize,
    variant_table,
)

__all__ = [
    "ClassificationReport", "ConfusionMatrix", "ReportRow", "balanced_accuracy", "confusion",
    "f1_score", "render", "render_text", "report", "report_from_json", "summarize", "variant_table",
]
