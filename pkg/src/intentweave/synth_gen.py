"""Label description generation and batch-conditioned utterance generation.

Each batch is one model call that returns an ordered JSON list; conditioning
on earlier utterances is intrinsic to the single-call schema. Descriptions
are generated at temperature 0, utterances at 0.7 by default.
"""

from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .agents.loops import derive_seed
from .agents.rendering import render_prompt
from .errors import BudgetExhausted, IntentweaveError, ParseError
from .gateway import Gateway
from .model import Query
from .structured import Field, Schema, parse_structured

logger = logging.getLogger(__name__)

CELLS = (
    ("without_in_class", "human"),
    ("without_in_class", "synthetic"),
    ("with_in_class", "human"),
    ("with_in_class", "synthetic"),
)


def cell_name(in_class: bool, desc_source: str) -> str:
    return f"{'with_in_class' if in_class else 'without_in_class'}-{desc_source}"


@dataclass
class GenSpec:
    label: str
    description_source: str = "human"        # or "synthetic"
    use_in_class_shots: bool = True
    cross_class_shots: int = 10
    in_class_shots: int = 10
    batch_size: int = 5
    total: int = 100
    temperature: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.total % self.batch_size != 0:
            raise ValueError(f"total {self.total} not divisible by batch size {self.batch_size}")
        if self.description_source not in ("human", "synthetic"):
            raise ValueError(f"unknown description source {self.description_source!r}")

    @property
    def n_batches(self) -> int:
        return self.total // self.batch_size


@dataclass
class GeneratedUtterance:
    utterance: str
    reasoning: str
    explanation: str
    batch_id: int
    position_in_batch: int


@dataclass
class LabelDescription:
    label: str
    description: str
    keywords: list[str] = field(default_factory=list)
    customer_need: str = ""
    reflection: str = ""
    explanation: str = ""
    source: str = "human"

    def __post_init__(self) -> None:
        if self.source == "synthetic" and not self.keywords:
            raise ValueError(f"synthetic description for {self.label!r} must carry keywords")


DESCRIPTION_SCHEMA = Schema("yaml", (
    Field("customer_need"),
    Field("reflection"),
    Field("description", nonempty=True),
    Field("keywords", kind="list", nonempty=True),
    Field("explanation"),
))

UTTERANCE_SCHEMA = Schema("json", (
    Field("label"),
    Field("reflection"),
    Field("generated_utterances", kind="maplist", nonempty=True, item_fields=(
        Field("reasoning", nonempty=True),
        Field("utterance", nonempty=True),
        Field("explanation", nonempty=True),
    )),
))


class DuplicateInBatch(IntentweaveError):
    pass


def generate_label_description(gateway: Gateway, label: str, real_examples: Sequence[str],
                               exemplar_descriptions: Sequence[tuple[str, str]] = (),
                               budget: int = 3, institution: str = "Acme Bank") -> LabelDescription:
    """Temperature-0 description/keyword generation with schema retries."""
    if not real_examples:
        raise ValueError(f"need at least one real example for label {label!r}")
    exemplars = "\n".join(f'Nav key: "{k}"\nKeywords: "{d}"' for k, d in exemplar_descriptions) \
        or 'Nav key: "Example Nav Key"\nKeywords: "Example Description"'
    system, user = render_prompt("description", {
        "institution": institution,
        "label": label,
        "real_examples": "; ".join(real_examples),
        "exemplar_descriptions": exemplars,
    })
    for attempt in range(budget):
        raw = gateway.chat("description", system, user, temperature=0.0)
        try:
            payload = parse_structured(raw, DESCRIPTION_SCHEMA)
        except ParseError as exc:
            logger.warning("description for %r attempt %d rejected: %s", label, attempt + 1, exc)
            continue
        return LabelDescription(
            label=label,
            description=payload["description"],
            keywords=payload["keywords"],
            customer_need=payload["customer_need"],
            reflection=payload["reflection"],
            explanation=payload["explanation"],
            source="synthetic",
        )
    raise BudgetExhausted(f"description generation failed for label {label!r}")


@dataclass
class FewShots:
    queries: list[Query]
    short_supply: bool = False

    @property
    def ids(self) -> list[str]:
        return [q.id for q in self.queries]

    @property
    def texts(self) -> list[str]:
        return [q.raw for q in self.queries]


def sample_few_shots(train: Sequence[Query], k: int = 10, seed: int = 0,
                     scope: str = "cross_class", label: str | None = None) -> FewShots:
    """Seeded sampling without replacement; the ids feed the exclusion list."""
    if scope == "cross_class":
        pool = list(train)
    elif scope == "in_class":
        if label is None:
            raise ValueError("in_class scope requires a label")
        pool = [q for q in train if q.label == label]
    else:
        raise ValueError(f"unknown scope {scope!r}")
    if not pool:
        raise ValueError(f"no training rows available for scope {scope!r} label {label!r}")
    rng = random.Random(derive_seed(seed, "shots", scope, label or ""))
    if len(pool) <= k:
        if len(pool) < k:
            logger.warning("few-shot short supply: %d of %d for %s/%s", len(pool), k, scope, label)
        return FewShots(queries=list(pool), short_supply=len(pool) < k)
    return FewShots(queries=rng.sample(pool, k))


def _format_cross_shots(shots: Sequence[Query]) -> str:
    return "\n\n".join(f'Label: "{q.label}"\nUser Utterance: "{q.raw}"' for q in shots)


def _format_in_class_block(shots: Sequence[Query]) -> str:
    lines = "\n".join(f'- "{q.raw}"' for q in shots)
    return f"\nFew-Shot Specific Examples:\n{lines}\n"


def generate_batch(gateway: Gateway, spec: GenSpec, description: LabelDescription,
                   cross_shots: FewShots, in_class_shots: FewShots | None,
                   batch_id: int, budget: int = 3,
                   institution: str = "Acme Bank") -> list[GeneratedUtterance]:
    """One model call producing an ordered, duplicate-free batch."""
    if description.source != spec.description_source:
        raise ValueError(
            f"description source {description.source!r} does not match spec {spec.description_source!r}")
    desc_text = description.description
    if description.keywords:
        desc_text += " Keywords: " + ", ".join(description.keywords)
    system, user = render_prompt("utterance", {
        "institution": institution,
        "batch_size": str(spec.batch_size),
        "label": spec.label,
        "description": desc_text,
        "cross_class_shots": _format_cross_shots(cross_shots.queries),
        "in_class_block": _format_in_class_block(in_class_shots.queries) if in_class_shots else "",
    })
    for attempt in range(budget):
        raw = gateway.chat("utterance", system, user, temperature=spec.temperature)
        try:
            payload = parse_structured(raw, UTTERANCE_SCHEMA)
        except ParseError as exc:
            logger.warning("batch %d for %r attempt %d rejected: %s",
                           batch_id, spec.label, attempt + 1, exc)
            continue
        items = payload["generated_utterances"]
        if len(items) != spec.batch_size:
            logger.warning("batch %d for %r returned %d utterances, want %d",
                           batch_id, spec.label, len(items), spec.batch_size)
            continue
        texts = [item["utterance"] for item in items]
        if len(set(texts)) != len(texts):
            logger.warning("batch %d for %r has duplicate utterances, retrying", batch_id, spec.label)
            continue
        return [
            GeneratedUtterance(
                utterance=item["utterance"],
                reasoning=item["reasoning"],
                explanation=item["explanation"],
                batch_id=batch_id,
                position_in_batch=pos,
            )
            for pos, item in enumerate(items)
        ]
    raise BudgetExhausted(f"batch {batch_id} for label {spec.label!r} failed")


@dataclass
class SyntheticRecord:
    label: str
    utterance: str
    reasoning: str
    explanation: str
    cell: str
    batch_id: int
    position: int

    def to_json(self) -> str:
        return json.dumps({
            "label": self.label, "utterance": self.utterance, "reasoning": self.reasoning,
            "explanation": self.explanation, "cell": self.cell, "batch_id": self.batch_id,
            "position": self.position,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SyntheticRecord":
        rec = json.loads(line)
        return cls(label=rec["label"], utterance=rec["utterance"], reasoning=rec["reasoning"],
                   explanation=rec["explanation"], cell=rec["cell"], batch_id=rec["batch_id"],
                   position=rec["position"])


def save_synthetic_corpus(records: Sequence[SyntheticRecord], path: str | Path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def load_synthetic_corpus(path: str | Path) -> list[SyntheticRecord]:
    return [SyntheticRecord.from_json(line)
            for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


@dataclass
class GenerationRun:
    records: dict[str, list[SyntheticRecord]]          # cell -> records
    excluded_ids: list[str]
    duplicate_counts: dict[str, int]                   # cell -> cross-batch duplicates
    warnings: list[str] = field(default_factory=list)

    def duplicate_rate(self, cell: str) -> float:
        n = len(self.records.get(cell, []))
        return self.duplicate_counts.get(cell, 0) / n if n else 0.0


def run_generation(gateway: Gateway, labels: Sequence[str], train: Sequence[Query],
                   human_descriptions: dict[str, LabelDescription] | None,
                   defaults: GenSpec | None = None, seed: int = 0,
                   institution: str = "Acme Bank", max_workers: int = 1,
                   cells: Sequence[tuple[str, str]] = CELLS) -> GenerationRun:
    """Run the 2x2 experiment (in-class shots x description source) per label.

    Cross-batch duplicates are retained but counted; few-shot ids are
    collected for the extrinsic exclusion list.
    """
    defaults = defaults or GenSpec(label="", seed=seed)
    records: dict[str, list[SyntheticRecord]] = {}
    excluded: dict[str, None] = {}
    duplicates: dict[str, int] = {}
    warnings: list[str] = []
    synth_desc_cache: dict[str, LabelDescription] = {}

    for shot_mode, desc_source in cells:
        in_class = shot_mode == "with_in_class"
        cell = cell_name(in_class, desc_source)
        cell_records: list[SyntheticRecord] = []
        for label in labels:
            spec = GenSpec(label=label, description_source=desc_source,
                           use_in_class_shots=in_class,
                           cross_class_shots=defaults.cross_class_shots,
                           in_class_shots=defaults.in_class_shots,
                           batch_size=defaults.batch_size, total=defaults.total,
                           temperature=defaults.temperature, seed=seed)
            if desc_source == "human":
                if not human_descriptions or label not in human_descriptions:
                    raise KeyError(f"no human description supplied for label {label!r}")
                description = human_descriptions[label]
            else:
                if label not in synth_desc_cache:
                    in_label = [q.raw for q in train if q.label == label]
                    synth_desc_cache[label] = generate_label_description(
                        gateway, label, in_label, institution=institution)
                description = synth_desc_cache[label]
            cross = sample_few_shots(train, spec.cross_class_shots,
                                     derive_seed(seed, "cross", label, cell), "cross_class")
            in_shots = None
            if in_class:
                in_shots = sample_few_shots(train, spec.in_class_shots,
                                            derive_seed(seed, "in", label, cell),
                                            "in_class", label=label)
            for q_id in cross.ids + (in_shots.ids if in_shots else []):
                excluded.setdefault(q_id, None)

            def make_batch(batch_id: int, spec=spec, description=description,
                           cross=cross, in_shots=in_shots) -> list[GeneratedUtterance]:
                return generate_batch(gateway, spec, description, cross, in_shots,
                                      batch_id, institution=institution)

            batches: list[list[GeneratedUtterance]] = []
            if max_workers > 1:
                with ThreadPoolExecutor(max_workers=max_workers) as pool:
                    futures = [pool.submit(make_batch, b) for b in range(spec.n_batches)]
                    for b, future in enumerate(futures):
                        try:
                            batches.append(future.result())
                        except BudgetExhausted as exc:
                            warnings.append(str(exc))
                            logger.warning("%s", exc)
            else:
                for b in range(spec.n_batches):
                    try:
                        batches.append(make_batch(b))
                    except BudgetExhausted as exc:
                        warnings.append(str(exc))
                        logger.warning("%s", exc)
            seen: set[str] = set()
            for batch in batches:
                for gen in batch:
                    if gen.utterance in seen:
                        duplicates[cell] = duplicates.get(cell, 0) + 1
                    seen.add(gen.utterance)
                    cell_records.append(SyntheticRecord(
                        label=label, utterance=gen.utterance, reasoning=gen.reasoning,
                        explanation=gen.explanation, cell=cell, batch_id=gen.batch_id,
                        position=gen.position_in_batch))
        records[cell] = cell_records
    return GenerationRun(records=records, excluded_ids=list(excluded),
                         duplicate_counts=duplicates, warnings=warnings)


def load_human_descriptions(path: str | Path) -> dict[str, LabelDescription]:
    """Human description input file: JSONL keyed by label."""
    out: dict[str, LabelDescription] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out[rec["label"]] = LabelDescription(
            label=rec["label"], description=rec["description"],
            keywords=list(rec.get("keywords", [])), source="human")
    return out


def save_descriptions(descriptions: dict[str, LabelDescription], path: str | Path) -> None:
    lines = []
    for label in sorted(descriptions):
        d = descriptions[label]
        lines.append(json.dumps({
            "label": d.label, "description": d.description, "keywords": d.keywords,
            "customer_need": d.customer_need, "reflection": d.reflection,
            "explanation": d.explanation, "source": d.source,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
