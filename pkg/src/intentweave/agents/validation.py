"""Exact-match rejection gate for agent actions.

An action is accepted only when (a) the response declared itself valid,
(b) every referenced topic.subtopic resolves to a live intent (or to the
proposal under review), (c) every cited example matches a source utterance
byte-for-byte after normalization, and (d) kind-specific structural rules
hold. Anything else is a rejection with an enumerated reason; gates never
raise on bad content.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..model import AgentAction, IntentSet
from ..preprocess import normalize

REJECT_REASONS = ("self_invalid", "unknown_intent", "fabricated_example", "structural")


@dataclass
class Proposal:
    """A proposer-stage intent candidate tied to one verbatim data example."""

    example: str
    proposed_topic: str
    proposed_subtopic: str
    state: str = "proposed"      # proposed | judged_ok | refined | rejected
    topic_description: str = ""
    subtopic_description: str = ""
    relevance: int = 0
    extra_examples: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"{self.proposed_topic}.{self.proposed_subtopic}"

    @property
    def examples(self) -> list[str]:
        return [self.example] + self.extra_examples


def split_intent_name(name: str) -> tuple[str, str] | None:
    """Parse a ``topic.subtopic`` reference; tolerate surrounding parentheses."""
    flat = name.strip().strip("()").strip()
    if flat.count(".") != 1:
        return None
    topic, subtopic = flat.split(".")
    topic, subtopic = topic.strip(), subtopic.strip()
    if not topic or not subtopic:
        return None
    return topic, subtopic


def _norm_set(utterances: Iterable[str]) -> set[str]:
    return {normalize(u) for u in utterances}


def _match_all(cited: Iterable[str], source: set[str]) -> bool:
    return all(normalize(c) in source for c in cited)


def validate_action(action: AgentAction, intent_set: IntentSet, data: Iterable[str],
                    *, expected_topic: str | None = None,
                    proposal: Proposal | None = None,
                    enrich_example_cap: int = 3) -> AgentAction:
    """Apply the rejection gate; returns the action with its verdict set."""
    if not action.self_valid:
        return action.reject("self_invalid")
    if action.parsed is None:
        return action.reject("structural")

    data_norm = _norm_set(data)
    payload = action.parsed
    kind = action.kind

    if kind == "generate":
        return _validate_generate(action, payload, intent_set, data_norm, expected_topic)
    if kind == "merge":
        return _validate_merge(action, payload, intent_set)
    if kind == "propose":
        return _validate_propose(action, payload, intent_set, data_norm)
    if kind in ("judge", "refine"):
        return _validate_echo(action, payload, intent_set, proposal, renamable=(kind == "refine"))
    if kind == "add_examples":
        return _validate_add(action, payload, intent_set, data_norm, enrich_example_cap)
    return action.reject("structural")


def _validate_generate(action, payload, intent_set, data_norm, expected_topic):
    subs = payload.get("sub_topics") or []
    if not subs:
        return action.reject("structural")
    if expected_topic is not None:
        got = payload.get("overall_topic", "")
        if normalize(got) != normalize(expected_topic):
            return action.reject("unknown_intent")
    seen_examples: set[str] = set()
    seen_subtopics: set[str] = set()
    for sub in subs:
        name = sub.get("sub_topic", "")
        examples = sub.get("examples") or []
        relevance = sub.get("relevance")
        if not name or name in seen_subtopics:
            return action.reject("structural")
        seen_subtopics.add(name)
        if len(examples) < 2:
            return action.reject("structural")
        if not isinstance(relevance, int) or not (0 <= relevance <= 100):
            return action.reject("structural")
        topic = expected_topic if expected_topic is not None else payload.get("overall_topic", "")
        if (topic, name) in intent_set:
            return action.reject("structural")
        for ex in examples:
            if normalize(ex) in seen_examples:
                return action.reject("structural")     # one subtopic per example
            seen_examples.add(normalize(ex))
        if not _match_all(examples, data_norm):
            return action.reject("fabricated_example")
    return action.accept()


def _resolve_active(intent_set, name):
    parsed = split_intent_name(name)
    if parsed is None:
        return None
    intent = intent_set.get(*parsed)
    if intent is None or intent.status != "active":
        return None
    return intent


def _validate_merge(action, payload, intent_set):
    keep = _resolve_active(intent_set, payload.get("keep", ""))
    eliminate = _resolve_active(intent_set, payload.get("eliminate", ""))
    if keep is None or eliminate is None:
        return action.reject("unknown_intent")
    if keep.key == eliminate.key:
        return action.reject("structural")
    keep_examples = payload.get("keep_examples") or []
    elim_examples = payload.get("eliminate_examples") or []
    if not keep_examples or not elim_examples:
        return action.reject("structural")
    if not _match_all(keep_examples, _norm_set(keep.examples)):
        return action.reject("fabricated_example")
    if not _match_all(elim_examples, _norm_set(eliminate.examples)):
        return action.reject("fabricated_example")
    return action.accept()


def _validate_propose(action, payload, intent_set, data_norm):
    entries = payload.get("examples") or []
    if not entries:
        return action.reject("structural")
    seen: set[tuple[str, str]] = set()
    for entry in entries:
        parsed = split_intent_name(entry.get("proposed_intent", ""))
        if parsed is None or parsed in seen:
            return action.reject("structural")
        if parsed in intent_set:
            return action.reject("structural")     # subtopic must be new
        seen.add(parsed)
        if normalize(entry.get("example", "")) not in data_norm:
            return action.reject("fabricated_example")
    return action.accept()


def _validate_echo(action, payload, intent_set, proposal, renamable):
    if proposal is None:
        return action.reject("structural")
    name = payload.get("topic", "")
    parsed = split_intent_name(name)
    if parsed is None:
        return action.reject("unknown_intent")
    if renamable:
        # Refiner may rename, but must not collide with an existing key.
        if parsed in intent_set:
            return action.reject("structural")
    else:
        if normalize(name) != normalize(proposal.name):
            return action.reject("unknown_intent")
    echoes = payload.get("topic_examples") or []
    if not echoes:
        return action.reject("structural")
    source = _norm_set(proposal.examples)
    if not _match_all(echoes, source):
        return action.reject("fabricated_example")
    relevance = payload.get("relevance")
    if not isinstance(relevance, int) or not (0 <= relevance <= 100):
        return action.reject("structural")
    return action.accept()


def _validate_add(action, payload, intent_set, data_norm, enrich_example_cap):
    target = _resolve_active(intent_set, payload.get("topic", ""))
    if target is None:
        return action.reject("unknown_intent")
    if len(target.examples) >= enrich_example_cap:
        return action.reject("structural")      # default policy: only under-exampled intents
    examples = payload.get("topic_examples") or []
    if not examples:
        return action.reject("structural")
    if not _match_all(examples, data_norm):
        return action.reject("fabricated_example")
    other_examples: set[str] = set()
    for intent in intent_set:
        if intent.key != target.key:
            other_examples.update(normalize(e) for e in intent.examples)
    if any(normalize(e) in other_examples for e in examples):
        return action.reject("structural")
    return action.accept()
