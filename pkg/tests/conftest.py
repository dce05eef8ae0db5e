"""Shared fixtures: canned agent responses and small corpora."""

from __future__ import annotations

import pytest

from intentweave.model import Corpus, Intent, IntentSet
from intentweave.preprocess import make_query


def merger_yaml(keep: str, keep_examples: list[str], eliminate: str,
                eliminate_examples: list[str], valid: bool = True) -> str:
    keep_block = "\n".join(f"- {e}" for e in keep_examples)
    elim_block = "\n".join(f"- {e}" for e in eliminate_examples)
    return (
        "Reasoning_across_topics: candidates reviewed\n"
        "Reasoning_within_topics: candidates reviewed\n"
        f"Pair: ({keep}, {eliminate})\n"
        f"Keep: {keep}\n"
        f"Keep Examples:\n{keep_block}\n"
        f"Eliminate: {eliminate}\n"
        f"Eliminate Examples:\n{elim_block}\n"
        f"Valid: {valid}\n"
    )


def merger_reject_yaml() -> str:
    return merger_yaml("a.b", ["x"], "a.c", ["y"], valid=False)


def generator_yaml(topic: str, description: str, subs: list[dict]) -> str:
    lines = [
        'data_reasoning: "grouped the queries by need"',
        f'overall_topic: "{topic}"',
        f'overall_topic_description: "{description}"',
        "sub_topics:",
    ]
    for sub in subs:
        lines.append(f'  - sub_topic: "{sub["name"]}"')
        lines.append(f'    description: "{sub["description"]}"')
        lines.append("    examples:")
        for ex in sub["examples"]:
            lines.append(f'      - "{ex}"')
        lines.append(f'    relevance: {sub["relevance"]}')
    return "\n".join(lines) + "\n"


def proposer_yaml(entries: list[tuple[str, str]], valid: bool = True) -> str:
    lines = ['Reasoning: "gap analysis"']
    if entries:
        lines.append("Examples:")
        for example, name in entries:
            lines.append(f'  - example: "{example}"')
            lines.append(f'    proposed_intent: "{name}"')
    lines.append(f"Valid: {valid}")
    return "\n".join(lines) + "\n"


def proposer_reject_yaml() -> str:
    return 'Reasoning: "everything is covered"\nValid: False\n'


def echo_yaml(name: str, examples: list[str], relevance: int = 80,
              worth_adding: bool = True, topic_description: str = "topic purpose",
              subtopic_description: str = "subtopic purpose") -> str:
    block = "\n".join(f"- {e}" for e in examples)
    return (
        "Reasoning: matched against the taxonomy\n"
        f"Topic: {name}\n"
        f"Topic_description: {topic_description}\n"
        f"Sub_topic_description: {subtopic_description}\n"
        f"Topic_Examples:\n{block}\n"
        f"Relevance: {relevance}\n"
        f"Worth_Adding: {worth_adding}\n"
    )


def echo_reject_yaml() -> str:
    return echo_yaml("none.none", ["none"], worth_adding=False)


def utterance_json(utterances: list[str], label: str = "label") -> str:
    import json

    return json.dumps({
        "label": label,
        "reflection": "planned around the shots",
        "generated_utterances": [
            {
                "reasoning": f"plan {i}",
                "utterance": u,
                "explanation": f"distinct phrasing {i}",
            }
            for i, u in enumerate(utterances)
        ],
    })


def description_yaml(description: str = "view and manage the thing",
                     keywords: list[str] | None = None) -> str:
    kw = "\n".join(f'- "{k}"' for k in (keywords or ["manage", "thing"]))
    return (
        'customer_need: "manage the thing"\n'
        'reflection: "used the exemplars"\n'
        f'description: "{description}"\n'
        f"keywords:\n{kw}\n"
        'explanation: "covers the need"\n'
    )


def full_mock_script() -> list[dict]:
    """Script entries covering every stage of the offline pipeline."""
    open_account = generator_yaml("openAccount", "account opening", [
        {"name": "openChecking", "description": "open a checking account", "relevance": 95,
         "examples": ["open checking account", "open new checking account"]},
        {"name": "openSavings", "description": "open a savings account", "relevance": 93,
         "examples": ["open savings account", "open a savings acct"]},
    ])
    payments = generator_yaml("payments", "making payments", [
        {"name": "payCreditCard", "description": "pay a credit card bill", "relevance": 90,
         "examples": ["pay my credit card bill", "pay credit card"]},
        {"name": "sendMoney", "description": "send money to people", "relevance": 88,
         "examples": ["send money to a friend", "send money"]},
    ])
    merge = merger_yaml("openAccount.openChecking", ["open checking account"],
                        "openAccount.openSavings", ["open savings account"])
    judge = echo_yaml("cardSecurity.freezeCard", ["freeze my card please"], relevance=85,
                      topic_description="card security needs",
                      subtopic_description="freeze a card")
    adder = echo_yaml("cardSecurity.freezeCard", ["lock my debit card"], relevance=85)
    return [
        {"tag": "generator", "prompt_contains": "openAccount", "response": open_account},
        {"tag": "generator", "prompt_contains": "payments", "response": payments},
        {"tag": "merger", "response": merge},
        {"tag": "merger", "response": merger_reject_yaml(), "repeat": True},
        {"tag": "proposer", "prompt_contains": "freeze my card please",
         "response": proposer_yaml([("freeze my card please", "cardSecurity.freezeCard")])},
        {"tag": "proposer", "response": proposer_reject_yaml(), "repeat": True},
        {"tag": "judge", "response": judge},
        {"tag": "refiner", "response": judge},
        {"tag": "adder", "prompt_contains": "lock my debit card", "response": adder},
        {"tag": "adder", "response": echo_reject_yaml(), "repeat": True},
        {"tag": "description", "response": description_yaml(), "repeat": True},
        {"tag": "utterance", "prompt_contains": 'User Intent: "payBill"',
         "response": utterance_json([f"pay the bill v{i}" for i in range(5)], "payBill"),
         "repeat": True},
        {"tag": "utterance", "prompt_contains": 'User Intent: "viewStatement"',
         "response": utterance_json([f"see statement v{i}" for i in range(5)], "viewStatement"),
         "repeat": True},
        {"tag": "rating", "response": "3", "repeat": True},
        {"tag": "intruder", "response": "not the right one", "repeat": True},
        {"tag": "discrimination", "response": "Reasoning: r\nAnswer: 1", "repeat": True},
    ]


def build_workspace(tmp_path) -> None:
    """Write raw corpora, topics, descriptions, config, and the mock script."""
    import json

    (tmp_path / "script.json").write_text(json.dumps(full_mock_script()))
    (tmp_path / "proxy.tsv").write_text(
        "open checking account\topenAccount\n"
        "open new checking account\topenAccount\n"
        "open savings account\topenAccount\n"
        "open a savings acct\topenAccount\n"
        "pay my credit card bill\tpayments\n"
        "pay credit card\tpayments\n"
        "send money to a friend\tpayments\n"
        "send money\tpayments\n")
    (tmp_path / "unlabeled.txt").write_text(
        "freeze my card please\nlock my debit card\nopen accou\nsend\n"
        "what is my balance\nshow account balance\n")
    bank = {"payBill": ["pay", "bill", "card", "due", "autopay", "balance"],
            "viewStatement": ["statement", "view", "download", "monthly", "pdf", "history"]}
    train_lines, test_lines = [], []
    for label, words in bank.items():
        for i in range(30):
            train_lines.append(f"{words[i % 6]} {words[(i + 1) % 6]} number {i}\t{label}")
        for i in range(6):
            test_lines.append(f"{words[i % 6]} {words[(i + 2) % 6]} held out {i}\t{label}")
    (tmp_path / "train.tsv").write_text("\n".join(train_lines) + "\n")
    (tmp_path / "test.tsv").write_text("\n".join(test_lines) + "\n")
    (tmp_path / "topics.json").write_text(json.dumps([
        {"topic": "openAccount", "description": "account opening page"},
        {"topic": "payments", "description": "payments page"},
    ]))
    (tmp_path / "human_descriptions.jsonl").write_text(
        '{"label": "payBill", "description": "pay a bill from the app", "keywords": ["pay"]}\n'
        '{"label": "viewStatement", "description": "view monthly statements", '
        '"keywords": ["statement"]}\n')
    config = {"max_consecutive_failures": 3, "sample_size": 3, "eval_trials": 2,
              "discrimination_trials": 5, "gen_total": 10, "master_seed": 42}
    (tmp_path / "config.json").write_text(json.dumps(config))


@pytest.fixture
def two_topic_set() -> IntentSet:
    s = IntentSet()
    s.add([
        Intent("openAccount", "account opening", "openChecking", "open a checking account",
               ["open checking account", "open new checking account"], 95, "generated"),
        Intent("openAccount", "account opening", "openSavings", "open a savings account",
               ["open savings account", "open a savings acct"], 93, "generated"),
        Intent("payments", "making payments", "payCreditCard", "pay a credit card bill",
               ["pay my credit card bill", "pay credit card"], 90, "generated"),
        Intent("payments", "making payments", "sendMoney", "send money to people",
               ["send money to a friend", "send money"], 88, "generated"),
    ], "seed-fixture")
    return s


@pytest.fixture
def proxy_corpus() -> Corpus:
    rows = [
        ("open checking account", "openAccount"),
        ("open new checking account", "openAccount"),
        ("open savings account", "openAccount"),
        ("open a savings acct", "openAccount"),
        ("pay my credit card bill", "payments"),
        ("pay credit card", "payments"),
        ("send money to a friend", "payments"),
        ("send money", "payments"),
    ]
    return Corpus(make_query(text, "proxy_labeled", label=label) for text, label in rows)


@pytest.fixture
def unlabeled_corpus() -> Corpus:
    rows = [
        "freeze my card please",
        "lock my debit card",
        "open accou",
        "send",
        "what is my balance",
        "show account balance",
    ]
    return Corpus(make_query(text, "unlabeled") for text in rows)
