"""Domain types: intents, intent sets, queries, actions, and the audit trail.

The intent set is the unit of state every agent mutates. Persistence is a
line-delimited JSON format with an explicit schema version so that merge
review can be done on plain diffs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .errors import InvariantViolation, ParseError

SCHEMA = "intentset/1"

PROVENANCES = ("seed", "generated", "merged", "proposed", "enriched")
STATUSES = ("active", "retired")
QUERY_SOURCES = ("proxy_labeled", "unlabeled", "synthetic")
ACTION_KINDS = ("generate", "merge", "propose", "judge", "refine", "add_examples")

_INTENT_FIELDS = (
    "topic",
    "topic_description",
    "subtopic",
    "subtopic_description",
    "examples",
    "relevance",
    "provenance",
    "status",
)


def query_id(normalized: str) -> str:
    """Stable id of a normalized utterance; equal ids imply equal strings."""
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass
class Intent:
    """One taxonomy leaf: a (topic, subtopic) pair with examples and a score."""

    topic: str
    topic_description: str
    subtopic: str
    subtopic_description: str
    examples: list[str]
    relevance: int
    provenance: str = "seed"
    status: str = "active"

    @property
    def key(self) -> tuple[str, str]:
        return (self.topic, self.subtopic)

    @property
    def name(self) -> str:
        return f"{self.topic}.{self.subtopic}"

    def validate(self) -> None:
        if not (0 <= self.relevance <= 100):
            raise InvariantViolation("relevance_range", f"{self.name}: relevance {self.relevance}")
        if self.provenance not in PROVENANCES:
            raise ParseError(f"unknown provenance {self.provenance!r}", reason="bad_enum")
        if self.status not in STATUSES:
            raise ParseError(f"unknown status {self.status!r}", reason="bad_enum")
        if self.status == "active" and self.provenance in ("generated", "merged") and len(self.examples) < 2:
            raise InvariantViolation("min_examples", f"{self.name}: {len(self.examples)} example(s)")

    def to_record(self) -> dict[str, Any]:
        return {"kind": "intent", **{f: getattr(self, f) for f in _INTENT_FIELDS}}

    @classmethod
    def from_record(cls, rec: dict[str, Any], line: int) -> "Intent":
        missing = [f for f in _INTENT_FIELDS if f not in rec]
        if missing:
            raise ParseError(f"intent record missing {missing}", reason="missing_key", line=line)
        if not isinstance(rec["examples"], list) or not all(isinstance(e, str) for e in rec["examples"]):
            raise ParseError("examples must be a list of strings", line=line)
        if not isinstance(rec["relevance"], int) or isinstance(rec["relevance"], bool):
            raise ParseError("relevance must be an integer", line=line)
        return cls(**{f: rec[f] for f in _INTENT_FIELDS})


class IntentSet:
    """Ordered collection of intents keyed by (topic, subtopic).

    Single-writer: every mutating method takes the id of the action that
    caused it, bumps ``version`` once, and appends to ``history``.
    """

    def __init__(self) -> None:
        self._intents: dict[tuple[str, str], Intent] = {}
        self.version = 0
        self.history: list[str] = []

    def __len__(self) -> int:
        return len(self._intents)

    def __iter__(self) -> Iterator[Intent]:
        return iter(self._intents.values())

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._intents

    def get(self, topic: str, subtopic: str) -> Intent | None:
        return self._intents.get((topic, subtopic))

    def active(self) -> list[Intent]:
        return [i for i in self if i.status == "active"]

    def topics(self) -> list[str]:
        seen: dict[str, None] = {}
        for intent in self._intents.values():
            seen.setdefault(intent.topic, None)
        return list(seen)

    def _bump(self, action_id: str) -> None:
        self.version += 1
        self.history.append(action_id)

    def add(self, intents: Iterable[Intent], action_id: str) -> None:
        """Append new intents as one applied action."""
        intents = list(intents)
        for intent in intents:
            intent.validate()
            if intent.key in self._intents:
                raise InvariantViolation("unique_key", f"duplicate intent {intent.name}")
        for intent in intents:
            self._intents[intent.key] = intent
        self._bump(action_id)

    def extend_examples(self, key: tuple[str, str], examples: list[str], action_id: str,
                        provenance: str | None = None) -> None:
        intent = self._intents[key]
        for ex in examples:
            if ex not in intent.examples:
                intent.examples.append(ex)
        if provenance is not None:
            intent.provenance = provenance
        self._bump(action_id)

    def merge(self, keep: tuple[str, str], eliminate: tuple[str, str], action_id: str) -> None:
        """Retire ``eliminate`` and fold its examples into ``keep``.

        The retired intent keeps its own example list; merges never delete
        example strings.
        """
        from .errors import ConflictingMerge

        keep_intent = self._intents.get(keep)
        elim_intent = self._intents.get(eliminate)
        if keep_intent is None or elim_intent is None:
            raise ConflictingMerge(f"merge references unknown intent {keep} / {eliminate}")
        if keep_intent.status != "active":
            raise ConflictingMerge(f"{keep_intent.name} already retired")
        if elim_intent.status != "active":
            raise ConflictingMerge(f"{elim_intent.name} already retired")
        for ex in elim_intent.examples:
            if ex not in keep_intent.examples:
                keep_intent.examples.append(ex)
        keep_intent.provenance = "merged"
        elim_intent.status = "retired"
        self._bump(action_id)

    def snapshot(self) -> dict[tuple[str, str], Intent]:
        return {k: dataclasses.replace(v, examples=list(v.examples)) for k, v in self._intents.items()}

    def deep_equals(self, other: "IntentSet") -> bool:
        return (
            self.version == other.version
            and self.history == other.history
            and list(self._intents) == list(other._intents)
            and all(self._intents[k] == other._intents[k] for k in self._intents)
        )


@dataclass(frozen=True)
class Query:
    """A single utterance, raw and normalized, with its source tag."""

    raw: str
    normalized: str
    source: str
    label: Any = None
    id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            object.__setattr__(self, "id", query_id(self.normalized))


class Corpus:
    """Stable-ordered query collection with an id-based dedupe index."""

    def __init__(self, queries: Iterable[Query] = ()) -> None:
        self.queries: list[Query] = []
        self.dedupe_index: set[str] = set()
        for q in queries:
            self.append(q)

    def append(self, q: Query) -> bool:
        """Add ``q`` unless its id is already present; returns True if added."""
        if q.id in self.dedupe_index:
            return False
        self.queries.append(q)
        self.dedupe_index.add(q.id)
        return True

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[Query]:
        return iter(self.queries)

    def texts(self) -> list[str]:
        return [q.normalized for q in self.queries]


@dataclass
class AgentAction:
    """A parsed, validated agent proposal.

    ``verdict`` is ``accepted`` only when the response declared itself valid
    and every exact-match check passed; otherwise ``rejected`` with a reason.
    """

    kind: str
    raw_response: str
    parsed: dict[str, Any] | None
    self_valid: bool
    verdict: str = "pending"
    reject_reason: str | None = None
    id: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ParseError(f"unknown action kind {self.kind!r}", reason="bad_enum")
        if not self.id:
            digest = hashlib.sha256(self.raw_response.encode("utf-8")).hexdigest()[:12]
            self.id = f"{self.kind}-{digest}"

    def accept(self) -> "AgentAction":
        self.verdict = "accepted"
        return self

    def reject(self, reason: str) -> "AgentAction":
        self.verdict = "rejected"
        self.reject_reason = reason
        return self


@dataclass
class AuditRecord:
    """One audit-trail entry; every LLM call produces exactly one ``llm_call``."""

    timestamp: float
    kind: str                      # llm_call | action | note
    agent: str
    prompt_digest: str = ""
    seeds: dict[str, int] = field(default_factory=dict)
    model: str = ""
    verdict: str = ""
    version_before: int | None = None
    version_after: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


class AuditLog:
    """Append-only audit sink, optionally mirrored to a JSONL file."""

    def __init__(self, path: str | Path | None = None, clock: Callable[[], float] = time.time):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self.records: list[AuditRecord] = []

    def append(self, record: AuditRecord) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")

    def emit(self, kind: str, agent: str, **fields: Any) -> AuditRecord:
        record = AuditRecord(timestamp=self.clock(), kind=kind, agent=agent, **fields)
        self.append(record)
        return record

    def __len__(self) -> int:
        return len(self.records)


def save_intent_set(intent_set: IntentSet, path: str | Path) -> None:
    """Write a line-delimited, versioned, human-diffable snapshot."""
    lines = [json.dumps({"kind": "header", "schema": SCHEMA, "version": intent_set.version,
                         "history": intent_set.history})]
    for intent in intent_set:
        lines.append(json.dumps(intent.to_record()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_intent_set(path: str | Path) -> IntentSet:
    """Load and verify a saved intent set; invariant violations are errors."""
    text = Path(path).read_text(encoding="utf-8")
    loaded = IntentSet()
    header: dict[str, Any] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON record: {exc}", line=lineno) from exc
        kind = rec.get("kind")
        if kind == "header":
            if header is not None:
                raise ParseError("duplicate header record", line=lineno)
            if rec.get("schema") != SCHEMA:
                raise ParseError(f"unsupported schema {rec.get('schema')!r}", reason="bad_enum", line=lineno)
            header = rec
        elif kind == "intent":
            intent = Intent.from_record(rec, lineno)
            intent.validate()
            if intent.key in loaded:
                raise InvariantViolation("unique_key", f"duplicate intent {intent.name} (line {lineno})")
            loaded._intents[intent.key] = intent
        else:
            raise ParseError(f"unknown record kind {kind!r}", reason="bad_enum", line=lineno)
    if header is None:
        raise ParseError("missing header record", reason="missing_key", line=1)
    loaded.version = int(header["version"])
    loaded.history = list(header.get("history", []))
    return loaded


@dataclass
class IntentSetDiff:
    added: list[Intent]
    removed: list[Intent]
    modified: list[tuple[Intent, Intent]]

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.modified)

    def apply(self, intents: dict[tuple[str, str], Intent]) -> dict[tuple[str, str], Intent]:
        """Apply this diff to ``a``'s collection, yielding ``b``'s."""
        out = dict(intents)
        for intent in self.removed:
            out.pop(intent.key, None)
        for before, after in self.modified:
            out[after.key] = after
        for intent in self.added:
            out[intent.key] = intent
        return out


def diff_intent_sets(a: IntentSet, b: IntentSet) -> IntentSetDiff:
    """Structured diff of two intent sets by (topic, subtopic) key."""
    a_map, b_map = a.snapshot(), b.snapshot()
    added = [b_map[k] for k in b_map if k not in a_map]
    removed = [a_map[k] for k in a_map if k not in b_map]
    modified = [(a_map[k], b_map[k]) for k in a_map if k in b_map and a_map[k] != b_map[k]]
    return IntentSetDiff(added=added, removed=removed, modified=modified)
