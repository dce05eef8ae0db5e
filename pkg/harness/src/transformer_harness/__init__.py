"""Transformer fine-tuning harness over exported intent-classification files."""

from .finetune import (
    ExportSchemaError,
    FinetuneConfig,
    LabelMismatchError,
    finetune_and_eval,
    load_export,
)

__all__ = [
    "ExportSchemaError",
    "FinetuneConfig",
    "LabelMismatchError",
    "finetune_and_eval",
    "load_export",
]
