"""Taxonomy agents: prompt rendering, the rejection gate, and orchestration."""

from .loops import (
    AgentConfig,
    HteResult,
    MergeAction,
    TgbResult,
    apply_merge,
    derive_seed,
    hte_pipeline,
    make_action,
    review_merges,
    run_examples_adder,
    run_intent_generator,
    run_intent_judge,
    run_intent_merger,
    run_intent_proposer,
    run_intent_refiner,
    tgb_pipeline,
)
from .rendering import fill_template, format_intent_set, format_utterances, render_prompt
from .validation import Proposal, split_intent_name, validate_action

__all__ = [
    "AgentConfig",
    "HteResult",
    "MergeAction",
    "Proposal",
    "TgbResult",
    "apply_merge",
    "derive_seed",
    "fill_template",
    "format_intent_set",
    "format_utterances",
    "hte_pipeline",
    "make_action",
    "render_prompt",
    "review_merges",
    "run_examples_adder",
    "run_intent_generator",
    "run_intent_judge",
    "run_intent_merger",
    "run_intent_proposer",
    "run_intent_refiner",
    "split_intent_name",
    "tgb_pipeline",
    "validate_action",
]
