"""Pretrained-encoder exporter for the ZQH1 engine container format."""

from .export import (
    EXPECTED_VALIDATION_ROWS,
    SUPPORTED_TASKS,
    ExportError,
    ExportManifest,
    export_eval_batches,
    export_model,
    read_task_tsv,
)

__version__ = "0.1.0"
