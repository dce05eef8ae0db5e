"""Prompt-template assets: loading, slot substitution, intent-set context.

Templates live as versioned text files under ``intentweave/prompts`` with
``{slot}`` markers. Only whitelisted slot names are substituted, so literal
braces elsewhere in a template (e.g. JSON examples) pass through untouched.
"""

from __future__ import annotations

import random
import re
from functools import lru_cache
from importlib import resources

from ..errors import MissingSlot
from ..model import Intent, IntentSet

SLOT_NAMES = frozenset({
    "institution", "examples", "intent", "intent_description", "intent_set",
    "unlabeled_examples", "proposed_intent", "example_subset", "needy_intents",
    "keyword", "words", "label", "description", "cross_class_shots",
    "in_class_block", "batch_size", "real_examples", "exemplar_descriptions",
    "example_1", "example_2",
})

_SLOT_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

# (system template, user template) per agent/task kind.
TEMPLATES: dict[str, tuple[str, str]] = {
    "generator": ("system_agent", "intent_generator"),
    "merger": ("system_agent", "intent_merger"),
    "proposer": ("system_agent", "intent_proposer"),
    "judge": ("system_agent", "intent_judge"),
    "refiner": ("system_agent", "intent_refiner"),
    "adder": ("system_agent", "examples_adder"),
    "rating": ("system_agent", "rating_task"),
    "intruder": ("system_agent", "intruder_task"),
    "description": ("description_system", "description_user"),
    "utterance": ("utterance_system", "utterance_user"),
    "discrimination": ("discrimination_system", "discrimination_user"),
}


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("intentweave").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")


def fill_template(template: str, slots: dict[str, str]) -> str:
    """Substitute whitelisted slots; every slot present in the template is required."""
    needed = set(_SLOT_RE.findall(template)) & SLOT_NAMES

    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in needed:
            return match.group(0)
        if name not in slots:
            raise MissingSlot(name)
        return str(slots[name])

    missing = needed - set(slots)
    if missing:
        raise MissingSlot(", ".join(sorted(missing)))
    return _SLOT_RE.sub(sub, template)


def render_prompt(kind: str, slots: dict[str, str]) -> tuple[str, str]:
    """Render the (system, user) prompt pair for an agent or judged task."""
    try:
        system_name, user_name = TEMPLATES[kind]
    except KeyError:
        raise KeyError(f"unknown prompt kind {kind!r}") from None
    return fill_template(load_template(system_name), slots), fill_template(load_template(user_name), slots)


def format_intent(intent: Intent, include_examples: bool = True) -> str:
    lines = [f"{intent.name}: {intent.subtopic_description}"]
    if include_examples:
        lines.extend(f"- {ex}" for ex in intent.examples)
    return "\n".join(lines)


def format_intent_set(intent_set: IntentSet, shuffle_seed: int,
                      extra: list[Intent] | None = None,
                      include_examples: bool = True) -> str:
    """Serialize active intents, shuffled at the topic level by the seed.

    ``extra`` holds provisional (not yet finalized) intents that should be
    visible as context; they are appended under their topics.
    """
    intents = intent_set.active() + list(extra or [])
    by_topic: dict[str, list[Intent]] = {}
    for intent in intents:
        by_topic.setdefault(intent.topic, []).append(intent)
    topics = list(by_topic)
    random.Random(shuffle_seed).shuffle(topics)
    blocks = []
    for topic in topics:
        for intent in by_topic[topic]:
            blocks.append(format_intent(intent, include_examples=include_examples))
    return "\n".join(blocks)


def format_utterances(utterances: list[str]) -> str:
    return "\n".join(f"- {u}" for u in utterances)
