"""Agent loops: subtopic generation, merging, gap bridging, enrichment.

Every loop follows the same discipline: render the prompt (intent set
shuffled at topic level), call the model, parse strictly, run the rejection
gate, and only then mutate shared state. Rejections are cheap and expected;
the merger in particular runs until a streak of consecutive failures hits
its budget.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from ..errors import BudgetExhausted, ParseError
from ..gateway import Gateway
from ..model import AgentAction, Corpus, Intent, IntentSet
from ..preprocess import normalize
from ..structured import Field, Schema, parse_structured
from .rendering import format_intent_set, format_utterances, render_prompt
from .validation import Proposal, split_intent_name, validate_action

logger = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    max_consecutive_failures: int = 1000
    sample_size: int = 200
    shuffle_seed: int = 0
    institution_name: str = "Acme Bank"
    generator_budget: int = 5
    proposer_budget: int = 5
    judge_budget: int = 3
    adder_budget: int = 3
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.max_consecutive_failures < 1:
            raise ValueError("max_consecutive_failures must be >= 1")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


def derive_seed(base: int, *parts: Any) -> int:
    """Stable child seed for a named sub-stream of the master seed."""
    key = f"{base}|" + "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


GENERATOR_SCHEMA = Schema("yaml", (
    Field("data_reasoning"),
    Field("overall_topic"),
    Field("overall_topic_description"),
    Field("sub_topics", kind="maplist", nonempty=True, item_fields=(
        Field("sub_topic"),
        Field("description"),
        Field("examples", kind="list"),
        Field("relevance", kind="int"),
    )),
))

MERGER_SCHEMA = Schema("yaml", (
    Field("reasoning_across_topics"),
    Field("reasoning_within_topics"),
    Field("pair"),
    Field("keep"),
    Field("keep_examples", kind="list"),
    Field("eliminate"),
    Field("eliminate_examples", kind="list"),
    Field("valid", kind="bool"),
))

PROPOSER_SCHEMA = Schema("yaml", (
    Field("reasoning"),
    Field("examples", kind="maplist", required=False, item_fields=(
        Field("example"),
        Field("proposed_intent"),
    )),
    Field("valid", kind="bool"),
))

_ECHO_FIELDS = (
    Field("reasoning"),
    Field("topic"),
    Field("topic_description"),
    Field("sub_topic_description"),
    Field("topic_examples", kind="list"),
    Field("relevance", kind="int"),
    Field("worth_adding", kind="bool"),
)
JUDGE_SCHEMA = Schema("yaml", _ECHO_FIELDS)
REFINER_SCHEMA = JUDGE_SCHEMA
ADDER_SCHEMA = JUDGE_SCHEMA


def make_action(kind: str, raw: str, schema: Schema, valid_key: str | None) -> AgentAction:
    """Parse a raw response into an action; parse failures arrive pre-rejected."""
    try:
        payload = parse_structured(raw, schema)
    except ParseError as exc:
        action = AgentAction(kind=kind, raw_response=raw, parsed=None, self_valid=False)
        return action.reject(f"parse:{exc.reason}")
    self_valid = bool(payload.get(valid_key, True)) if valid_key else True
    return AgentAction(kind=kind, raw_response=raw, parsed=payload, self_valid=self_valid)


def _canonical_map(utterances: Iterable[str]) -> dict[str, str]:
    """normalized form -> canonical source string (first occurrence wins)."""
    out: dict[str, str] = {}
    for u in utterances:
        out.setdefault(normalize(u), u)
    return out


def _canonicalize(cited: Sequence[str], source: dict[str, str]) -> list[str]:
    return [source[normalize(c)] for c in cited]


def _audit_action(gateway: Gateway, action: AgentAction, version_before: int,
                  version_after: int, seeds: dict[str, int] | None = None) -> None:
    gateway.audit.emit(
        "action",
        action.kind,
        verdict=action.verdict,
        seeds=seeds or {},
        version_before=version_before,
        version_after=version_after,
        extra={"action_id": action.id, "reason": action.reject_reason or ""},
    )


def run_intent_generator(gateway: Gateway, intent_set: IntentSet, topic: str,
                         topic_description: str, queries: Sequence[str],
                         cfg: AgentConfig) -> list[Intent]:
    """Expand one seed topic into subtopic intents; retries on rejection."""
    if not queries:
        raise ValueError(f"no queries supplied for topic {topic!r}")
    canon = _canonical_map(queries)
    for attempt in range(cfg.generator_budget):
        system, user = render_prompt("generator", {
            "institution": cfg.institution_name,
            "examples": format_utterances(list(queries)),
            "intent": topic,
            "intent_description": topic_description,
        })
        raw = gateway.chat("generator", system, user, temperature=cfg.temperature,
                           max_output_tokens=cfg.max_output_tokens)
        action = make_action("generate", raw, GENERATOR_SCHEMA, None)
        before = intent_set.version
        if action.verdict != "rejected":
            validate_action(action, intent_set, queries, expected_topic=topic)
        if action.verdict == "accepted":
            intents = [
                Intent(
                    topic=topic,
                    topic_description=action.parsed["overall_topic_description"],
                    subtopic=sub["sub_topic"],
                    subtopic_description=sub["description"],
                    examples=_canonicalize(sub["examples"], canon),
                    relevance=sub["relevance"],
                    provenance="generated",
                )
                for sub in action.parsed["sub_topics"]
            ]
            intent_set.add(intents, action.id)
            _audit_action(gateway, action, before, intent_set.version)
            return intents
        _audit_action(gateway, action, before, intent_set.version)
    raise BudgetExhausted(f"generator budget exhausted for topic {topic!r}")


@dataclass
class MergeAction:
    keep: tuple[str, str]
    eliminate: tuple[str, str]
    keep_examples: list[str]
    eliminate_examples: list[str]
    action_id: str
    conflicting: bool = False

    def to_record(self) -> dict[str, Any]:
        return {
            "keep": list(self.keep),
            "eliminate": list(self.eliminate),
            "keep_examples": self.keep_examples,
            "eliminate_examples": self.eliminate_examples,
            "action_id": self.action_id,
            "conflicting": self.conflicting,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "MergeAction":
        return cls(
            keep=tuple(rec["keep"]),
            eliminate=tuple(rec["eliminate"]),
            keep_examples=list(rec["keep_examples"]),
            eliminate_examples=list(rec["eliminate_examples"]),
            action_id=rec["action_id"],
            conflicting=bool(rec.get("conflicting", False)),
        )


def run_intent_merger(gateway: Gateway, intent_set: IntentSet, cfg: AgentConfig) -> list[MergeAction]:
    """Collect merge actions until the consecutive-failure budget is hit.

    Accepted merges are recorded, never applied here; application is gated
    on human review. The failure counter resets on every acceptance.
    """
    merges: list[MergeAction] = []
    touched: set[tuple[str, str]] = set()
    failures = 0
    calls = 0
    while failures < cfg.max_consecutive_failures:
        shuffle = derive_seed(cfg.shuffle_seed, "merger", calls)
        system, user = render_prompt("merger", {
            "institution": cfg.institution_name,
            "intent_set": format_intent_set(intent_set, shuffle),
        })
        raw = gateway.chat("merger", system, user, temperature=cfg.temperature,
                           max_output_tokens=cfg.max_output_tokens)
        calls += 1
        action = make_action("merge", raw, MERGER_SCHEMA, "valid")
        before = intent_set.version
        if action.verdict != "rejected":
            validate_action(action, intent_set, [])
        _audit_action(gateway, action, before, intent_set.version, seeds={"shuffle": shuffle})
        if action.verdict != "accepted":
            failures += 1
            continue
        keep = split_intent_name(action.parsed["keep"])
        eliminate = split_intent_name(action.parsed["eliminate"])
        merge = MergeAction(
            keep=keep,
            eliminate=eliminate,
            keep_examples=action.parsed["keep_examples"],
            eliminate_examples=action.parsed["eliminate_examples"],
            action_id=action.id,
            conflicting=bool({keep, eliminate} & touched),
        )
        touched.update((keep, eliminate))
        merges.append(merge)
        failures = 0
    return merges


def apply_merge(intent_set: IntentSet, merge: MergeAction) -> None:
    """Retire the eliminated intent and fold its examples into the kept one."""
    intent_set.merge(merge.keep, merge.eliminate, merge.action_id)


ReviewDecision = tuple[str, int] | Sequence[bool] | Callable[[int, MergeAction], bool]


def review_merges(intent_set: IntentSet, merges: Sequence[MergeAction],
                  decision: ReviewDecision) -> list[MergeAction]:
    """Apply the human-approved subset of recorded merges, in order."""
    if isinstance(decision, tuple) and len(decision) == 2 and decision[0] == "prefix":
        k = int(decision[1])
        verdicts = [i < k for i in range(len(merges))]
    elif callable(decision):
        verdicts = [bool(decision(i, m)) for i, m in enumerate(merges)]
    else:
        verdicts = [bool(v) for v in decision]
        if len(verdicts) != len(merges):
            raise ValueError(f"{len(verdicts)} verdicts for {len(merges)} merges")
    applied = []
    for merge, ok in zip(merges, verdicts):
        if ok:
            apply_merge(intent_set, merge)
            applied.append(merge)
    return applied


def _provisional_intent(proposal: Proposal) -> Intent:
    return Intent(
        topic=proposal.proposed_topic,
        topic_description=proposal.topic_description,
        subtopic=proposal.proposed_subtopic,
        subtopic_description=proposal.subtopic_description,
        examples=list(proposal.examples),
        relevance=proposal.relevance,
        provenance="proposed",
    )


def _format_proposal(proposal: Proposal) -> str:
    return "\n".join([proposal.name] + [f"- {ex}" for ex in proposal.examples])


def run_intent_proposer(gateway: Gateway, intent_set: IntentSet, sample: Sequence[str],
                        cfg: AgentConfig, provisional: list[Intent] | None = None,
                        call_index: int = 0) -> list[Proposal]:
    """Propose out-of-taxonomy intents for one sample block.

    A self-declared ``Valid: False`` is the default no-op and returns an
    empty list; only parse and gate failures consume retry budget.
    """
    provisional = provisional or []
    extra_keys = {i.key for i in provisional}
    canon = _canonical_map(sample)
    for attempt in range(cfg.proposer_budget):
        shuffle = derive_seed(cfg.shuffle_seed, "proposer", call_index, attempt)
        system, user = render_prompt("proposer", {
            "institution": cfg.institution_name,
            "intent_set": format_intent_set(intent_set, shuffle, extra=provisional),
            "unlabeled_examples": format_utterances(list(sample)),
        })
        raw = gateway.chat("proposer", system, user, temperature=cfg.temperature,
                           max_output_tokens=cfg.max_output_tokens)
        action = make_action("propose", raw, PROPOSER_SCHEMA, "valid")
        before = intent_set.version
        if action.verdict != "rejected":
            if not action.self_valid:
                action.reject("self_invalid")
                _audit_action(gateway, action, before, intent_set.version)
                return []
            _validate_proposer(action, intent_set, sample, extra_keys)
        if action.verdict == "accepted":
            _audit_action(gateway, action, before, intent_set.version)
            return [
                Proposal(
                    example=canon[normalize(entry["example"])],
                    proposed_topic=split_intent_name(entry["proposed_intent"])[0],
                    proposed_subtopic=split_intent_name(entry["proposed_intent"])[1],
                )
                for entry in action.parsed["examples"]
            ]
        _audit_action(gateway, action, before, intent_set.version)
    raise BudgetExhausted("proposer budget exhausted for sample block")


def _validate_proposer(action: AgentAction, intent_set: IntentSet, sample: Sequence[str],
                       extra_keys: set[tuple[str, str]]) -> AgentAction:
    validated = validate_action(action, intent_set, sample)
    if validated.verdict != "accepted":
        return validated
    # Provisional proposals from earlier blocks also reserve their keys.
    for entry in action.parsed.get("examples") or []:
        parsed = split_intent_name(entry["proposed_intent"])
        if parsed in extra_keys:
            return validated.reject("structural")
    return validated


def _run_echo_agent(gateway: Gateway, kind: str, prompt_kind: str, intent_set: IntentSet,
                    proposal: Proposal, cfg: AgentConfig, budget: int,
                    provisional: list[Intent], extra_keys: set[tuple[str, str]],
                    call_index: int = 0) -> AgentAction | None:
    """Shared judge/refiner loop; returns the accepted action or None."""
    for attempt in range(budget):
        shuffle = derive_seed(cfg.shuffle_seed, kind, call_index, attempt)
        system, user = render_prompt(prompt_kind, {
            "institution": cfg.institution_name,
            "intent_set": format_intent_set(intent_set, shuffle, extra=provisional),
            "proposed_intent": _format_proposal(proposal),
        })
        raw = gateway.chat(prompt_kind, system, user, temperature=cfg.temperature,
                           max_output_tokens=cfg.max_output_tokens)
        action = make_action(kind, raw, JUDGE_SCHEMA, "worth_adding")
        before = intent_set.version
        if action.verdict != "rejected":
            if not action.self_valid:
                action.reject("self_invalid")
                _audit_action(gateway, action, before, intent_set.version)
                return None                      # default rejection, definitive
            validate_action(action, intent_set, [], proposal=proposal)
            if action.verdict == "accepted" and action.kind == "refine":
                parsed = split_intent_name(action.parsed["topic"])
                if parsed in extra_keys:
                    action.reject("structural")
        _audit_action(gateway, action, before, intent_set.version)
        if action.verdict == "accepted":
            return action
    return None


def run_intent_judge(gateway: Gateway, intent_set: IntentSet, proposal: Proposal,
                     cfg: AgentConfig, provisional: list[Intent] | None = None,
                     call_index: int = 0) -> str:
    """Judge a proposal; returns ``judged_ok`` or ``rejected``."""
    action = _run_echo_agent(gateway, "judge", "judge", intent_set, proposal, cfg,
                             cfg.judge_budget, provisional or [], set(), call_index)
    if action is None:
        proposal.state = "rejected"
        return "rejected"
    proposal.topic_description = action.parsed["topic_description"]
    proposal.subtopic_description = action.parsed["sub_topic_description"]
    proposal.relevance = action.parsed["relevance"]
    proposal.state = "judged_ok"
    return "judged_ok"


def run_intent_refiner(gateway: Gateway, intent_set: IntentSet, proposal: Proposal,
                       cfg: AgentConfig, provisional: list[Intent] | None = None,
                       extra_keys: set[tuple[str, str]] | None = None,
                       call_index: int = 0) -> Intent | None:
    """Refine a judged proposal into its final name; None drops it."""
    if proposal.state != "judged_ok":
        raise ValueError(f"proposal {proposal.name} is {proposal.state}, not judged_ok")
    action = _run_echo_agent(gateway, "refine", "refiner", intent_set, proposal, cfg,
                             cfg.judge_budget, provisional or [], extra_keys or set(), call_index)
    if action is None:
        return None
    topic, subtopic = split_intent_name(action.parsed["topic"])
    proposal.state = "refined"
    intent = Intent(
        topic=topic,
        topic_description=action.parsed["topic_description"],
        subtopic=subtopic,
        subtopic_description=action.parsed["sub_topic_description"],
        examples=list(proposal.examples),
        relevance=action.parsed["relevance"],
        provenance="proposed",
    )
    intent_set.add([intent], action.id)
    return intent


def run_examples_adder(gateway: Gateway, intent_set: IntentSet, sample: Sequence[str],
                       cfg: AgentConfig, call_index: int = 0) -> AgentAction | None:
    """Enrich at most one under-exampled intent from one sample block."""
    needy = [i for i in intent_set.active() if len(i.examples) < 3]
    if not needy:
        return None
    canon = _canonical_map(sample)
    for attempt in range(cfg.adder_budget):
        shuffle = derive_seed(cfg.shuffle_seed, "adder", call_index, attempt)
        system, user = render_prompt("adder", {
            "institution": cfg.institution_name,
            "example_subset": format_utterances(list(sample)),
            "intent_set": format_intent_set(intent_set, shuffle),
            "needy_intents": "\n".join(f"{i.name}: {len(i.examples)} examples" for i in needy),
        })
        raw = gateway.chat("adder", system, user, temperature=cfg.temperature,
                           max_output_tokens=cfg.max_output_tokens)
        action = make_action("add_examples", raw, ADDER_SCHEMA, "worth_adding")
        before = intent_set.version
        if action.verdict != "rejected":
            if not action.self_valid:
                action.reject("self_invalid")
                _audit_action(gateway, action, before, intent_set.version)
                return None                      # default rejection honored
            validate_action(action, intent_set, sample)
        if action.verdict == "accepted":
            key = split_intent_name(action.parsed["topic"])
            examples = _canonicalize(action.parsed["topic_examples"], canon)
            new = [e for e in examples
                   if normalize(e) not in {normalize(x) for x in intent_set.get(*key).examples}]
            intent_set.extend_examples(key, new, action.id, provenance="enriched")
            _audit_action(gateway, action, before, intent_set.version)
            return action
        _audit_action(gateway, action, before, intent_set.version)
    logger.warning("examples adder budget exhausted for sample block %d", call_index)
    return None


def _label_topic(label: Any) -> str | None:
    if label is None:
        return None
    if isinstance(label, (tuple, list)):
        return str(label[0])
    return str(label)


@dataclass
class HteResult:
    intent_set: IntentSet
    merges: list[MergeAction]
    applied: list[MergeAction]
    warnings: list[str] = field(default_factory=list)


def hte_pipeline(gateway: Gateway, seed_topics: Sequence[tuple[str, str]],
                 proxy_corpus: Corpus, cfg: AgentConfig,
                 review: ReviewDecision | None = None) -> HteResult:
    """Generate subtopics for every seed topic, then run the merge loop.

    Merge application is deferred to review; pass ``review`` to apply a
    decision in the same run, or review later from the recorded merges.
    """
    intent_set = IntentSet()
    warnings: list[str] = []
    for topic, description in seed_topics:
        queries = [q.normalized for q in proxy_corpus if _label_topic(q.label) == topic]
        if not queries:
            warnings.append(f"topic {topic!r} skipped: no proxy-labeled queries")
            logger.warning("topic %r skipped: no proxy-labeled queries", topic)
            continue
        try:
            run_intent_generator(gateway, intent_set, topic, description, queries, cfg)
        except BudgetExhausted as exc:
            warnings.append(str(exc))
            logger.warning("%s", exc)
    merges: list[MergeAction] = []
    if len(intent_set.active()) >= 2:
        merges = run_intent_merger(gateway, intent_set, cfg)
    applied: list[MergeAction] = []
    if review is not None:
        applied = review_merges(intent_set, merges, review)
    return HteResult(intent_set=intent_set, merges=merges, applied=applied, warnings=warnings)


@dataclass
class TgbResult:
    intent_set: IntentSet
    discovered: list[Intent]
    warnings: list[str] = field(default_factory=list)


def tgb_pipeline(gateway: Gateway, intent_set: IntentSet, unlabeled_corpus: Corpus,
                 cfg: AgentConfig) -> TgbResult:
    """Propose, judge, refine, then enrich, over seeded exhaustive samples."""
    texts = [q.normalized for q in unlabeled_corpus]
    warnings: list[str] = []
    order = list(range(len(texts)))
    random.Random(derive_seed(cfg.shuffle_seed, "tgb-order")).shuffle(order)
    blocks = [order[i:i + cfg.sample_size] for i in range(0, len(order), cfg.sample_size)]

    proposals: list[Proposal] = []
    provisional: dict[str, Intent] = {}        # proposal name -> context intent
    for block_idx, block in enumerate(blocks):
        sample = [texts[i] for i in block]
        try:
            found = run_intent_proposer(gateway, intent_set, sample, cfg,
                                        provisional=list(provisional.values()),
                                        call_index=block_idx)
        except BudgetExhausted as exc:
            warnings.append(f"sample block {block_idx} skipped: {exc}")
            logger.warning("sample block %d skipped: %s", block_idx, exc)
            continue
        for proposal in found:
            proposals.append(proposal)
            provisional[proposal.name] = _provisional_intent(proposal)

    for idx, proposal in enumerate(proposals):
        context = [v for k, v in provisional.items() if k != proposal.name]
        verdict = run_intent_judge(gateway, intent_set, proposal, cfg,
                                   provisional=context, call_index=idx)
        if verdict == "rejected":
            provisional.pop(proposal.name, None)
        else:
            provisional[proposal.name] = _provisional_intent(proposal)

    discovered: list[Intent] = []
    judged = [p for p in proposals if p.state == "judged_ok"]
    for idx, proposal in enumerate(judged):
        provisional.pop(proposal.name, None)
        pending_keys = {v.key for v in provisional.values()}
        intent = run_intent_refiner(gateway, intent_set, proposal, cfg,
                                    provisional=list(provisional.values()),
                                    extra_keys=pending_keys, call_index=idx)
        if intent is not None:
            discovered.append(intent)

    adder_order = list(range(len(texts)))
    random.Random(derive_seed(cfg.shuffle_seed, "adder-order")).shuffle(adder_order)
    adder_blocks = [adder_order[i:i + cfg.sample_size]
                    for i in range(0, len(adder_order), cfg.sample_size)]
    for block_idx, block in enumerate(adder_blocks):
        run_examples_adder(gateway, intent_set, [texts[i] for i in block], cfg,
                           call_index=block_idx)

    return TgbResult(intent_set=intent_set, discovered=discovered, warnings=warnings)
