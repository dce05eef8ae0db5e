"""Standalone entry point: python -m transformer_harness <train> <test> [flags]."""

from __future__ import annotations

import argparse
import json
import sys

from .finetune import ExportSchemaError, FinetuneConfig, LabelMismatchError, finetune_and_eval


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="transformer_harness",
        description="Fine-tune a compact transformer on exported intent datasets")
    parser.add_argument("train", help="exported training file (text/label/split/approach JSONL)")
    parser.add_argument("test", help="exported test file in the same schema")
    parser.add_argument("--out", help="report output path (JSON)")
    parser.add_argument("--model", default="distilbert-base-uncased")
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-length", type=int, default=32)
    parser.add_argument("--from-scratch", action="store_true",
                        help="train the reduced architecture from scratch (no checkpoint fetch)")
    args = parser.parse_args(argv)
    cfg = FinetuneConfig(model_name=args.model, epochs=args.epochs, batch_size=args.batch_size,
                         seed=args.seed, max_length=args.max_length,
                         from_scratch=args.from_scratch)
    try:
        report = finetune_and_eval(args.train, args.test, cfg, out_path=args.out)
    except (ExportSchemaError, LabelMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
