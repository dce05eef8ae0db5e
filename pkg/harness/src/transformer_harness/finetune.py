"""Sequence-classification fine-tuning over exported dataset files.

Consumes the line-delimited (text, label, split, approach) export format and
emits reports in the same schema as the native extrinsic evaluator, so the
same tooling can render and compare them.

Two model paths: the named pretrained checkpoint (default: the uncased
compact distilled transformer, learning rate 1e-4, weight decay 1e-3), or
``from_scratch=True``, which builds the same architecture at a reduced size
with a word-level vocabulary taken from the training file. The from-scratch
path exists for air-gapped environments where the checkpoint cannot be
fetched; hyperparameter defaults are unchanged.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from transformers import DistilBertConfig, DistilBertForSequenceClassification


class ExportSchemaError(ValueError):
    """An export file record is missing required keys or malformed."""


class LabelMismatchError(ValueError):
    """Test labels are not covered by the training label set."""


EXPORT_KEYS = ("text", "label", "split", "approach")


@dataclass
class FinetuneConfig:
    model_name: str = "distilbert-base-uncased"
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    max_length: int = 32
    from_scratch: bool = False
    scratch_dim: int = 64
    scratch_layers: int = 2
    scratch_heads: int = 2

    def digest(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def load_export(path: str | Path) -> list[dict]:
    """Read an exported dataset; every record must carry the full schema."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportSchemaError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        missing = [k for k in EXPORT_KEYS if k not in rec]
        if missing:
            raise ExportSchemaError(f"{path}:{lineno}: missing keys {missing}")
        if not isinstance(rec["text"], str) or not isinstance(rec["label"], str):
            raise ExportSchemaError(f"{path}:{lineno}: text and label must be strings")
        rows.append(rec)
    if not rows:
        raise ExportSchemaError(f"{path}: no records")
    return rows


class WordVocab:
    """Word-level encoder for the from-scratch path: [PAD]=0 [UNK]=1 [CLS]=2 [SEP]=3."""

    def __init__(self, texts: list[str]):
        self.word_ids: dict[str, int] = {}
        for text in texts:
            for word in text.lower().split():
                self.word_ids.setdefault(word, len(self.word_ids) + 4)

    def __len__(self) -> int:
        return len(self.word_ids) + 4

    def encode(self, texts: list[str], max_length: int) -> tuple[torch.Tensor, torch.Tensor]:
        ids, masks = [], []
        for text in texts:
            toks = [2] + [self.word_ids.get(w, 1)
                          for w in text.lower().split()][:max_length - 2] + [3]
            pad = max_length - len(toks)
            masks.append([1] * len(toks) + [0] * pad)
            ids.append(toks + [0] * pad)
        return torch.tensor(ids), torch.tensor(masks)


def _build_model_and_encoder(cfg: FinetuneConfig, train_texts: list[str], num_labels: int):
    if cfg.from_scratch:
        vocab = WordVocab(train_texts)
        model_cfg = DistilBertConfig(
            vocab_size=len(vocab),
            dim=cfg.scratch_dim,
            hidden_dim=2 * cfg.scratch_dim,
            n_layers=cfg.scratch_layers,
            n_heads=cfg.scratch_heads,
            num_labels=num_labels,
            max_position_embeddings=max(cfg.max_length, 32),
        )
        model = DistilBertForSequenceClassification(model_cfg)
        return model, vocab.encode
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(cfg.model_name)
    model = AutoModelForSequenceClassification.from_pretrained(cfg.model_name,
                                                               num_labels=num_labels)

    def encode(texts: list[str], max_length: int):
        enc = tokenizer(texts, padding="max_length", truncation=True, max_length=max_length,
                        return_tensors="pt")
        return enc["input_ids"], enc["attention_mask"]

    return model, encode


def _macro_f1(predictions: list[str], golds: list[str]) -> tuple[float, dict[str, float]]:
    per_class: dict[str, float] = {}
    for cls in sorted(set(golds)):
        tp = sum(1 for p, g in zip(predictions, golds) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(predictions, golds) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(predictions, golds) if p != cls and g == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[cls] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return sum(per_class.values()) / len(per_class), per_class


def finetune_and_eval(train_file: str | Path, test_file: str | Path,
                      cfg: FinetuneConfig | None = None,
                      out_path: str | Path | None = None) -> dict:
    """Fine-tune with class-weighted loss; report macro and per-class F1."""
    cfg = cfg or FinetuneConfig()
    train_rows = load_export(train_file)
    test_rows = load_export(test_file)
    labels = sorted({r["label"] for r in train_rows})
    unknown = sorted({r["label"] for r in test_rows} - set(labels))
    if unknown:
        raise LabelMismatchError(f"test labels absent from training set: {unknown}")
    label_ids = {label: i for i, label in enumerate(labels)}

    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)        # bitwise run-to-run reproducibility
    model, encode = _build_model_and_encoder(cfg, [r["text"] for r in train_rows], len(labels))

    x_train, m_train = encode([r["text"] for r in train_rows], cfg.max_length)
    y_train = torch.tensor([label_ids[r["label"]] for r in train_rows])
    counts = torch.bincount(y_train, minlength=len(labels)).float()
    class_weights = len(y_train) / (len(labels) * counts.clamp(min=1.0))
    loss_fn = torch.nn.CrossEntropyLoss(weight=class_weights)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)

    generator = torch.Generator().manual_seed(cfg.seed)
    model.train()
    for _epoch in range(cfg.epochs):
        order = torch.randperm(len(y_train), generator=generator)
        for start in range(0, len(y_train), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            logits = model(input_ids=x_train[idx], attention_mask=m_train[idx]).logits
            loss_fn(logits, y_train[idx]).backward()
            optimizer.step()

    model.eval()
    x_test, m_test = encode([r["text"] for r in test_rows], cfg.max_length)
    with torch.no_grad():
        predicted = model(input_ids=x_test, attention_mask=m_test).logits.argmax(-1)
    predictions = [labels[i] for i in predicted.tolist()]
    golds = [r["label"] for r in test_rows]
    macro, per_class = _macro_f1(predictions, golds)

    report = {
        "approach": Path(train_file).stem,
        "cell": "",
        "macro_f1": macro,
        "per_class_f1": per_class,
        "config_digest": cfg.digest(),
        "converged": True,
        "replaced_labels": [],
    }
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    return report
