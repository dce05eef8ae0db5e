"""Topic coherence metrics and judged rating/intruder tasks.

Co-occurrence statistics come from fixed-length sliding windows that never
cross document boundaries; documents shorter than the window form a single
window. Judged tasks render prompt assets and run against any backend,
including scripted or computed mocks.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents.loops import derive_seed
from .agents.rendering import render_prompt
from .errors import InsufficientData, IntentweaveError, UnknownWord
from .gateway import Gateway
from .model import Corpus, IntentSet
from .preprocess import TokenFilterConfig, normalize, tokenize_for_eval

logger = logging.getLogger(__name__)


class InsufficientWords(IntentweaveError):
    pass


class UnparsableRating(IntentweaveError):
    pass


class NoValidIntruder(IntentweaveError):
    pass


@dataclass
class TopicDocs:
    """One topic's assigned documents with its ranked top words."""

    topic: str
    documents: list[list[str]]              # tokenized queries
    utterances: list[str] = field(default_factory=list)
    top_words: list[tuple[str, int]] = field(default_factory=list)

    @classmethod
    def build(cls, topic: str, utterances: Sequence[str],
              token_cfg: TokenFilterConfig | None = None) -> "TopicDocs":
        documents = [tokenize_for_eval(normalize(u), token_cfg) for u in utterances]
        counts: dict[str, int] = {}
        for doc in documents:
            for tok in doc:
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(topic=topic, documents=documents, utterances=list(utterances), top_words=ranked)

    def top_items(self, level: str, k: int) -> list[str]:
        """Most frequent words or utterances; ties break lexicographically."""
        if level == "word":
            return [w for w, _ in self.top_words[:k]]
        if level == "document":
            counts: dict[str, int] = {}
            for u in self.utterances:
                counts[u] = counts.get(u, 0) + 1
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            return [u for u, _ in ranked[:k]]
        raise ValueError(f"unknown level {level!r}")


class WindowCounts:
    """Sliding-window occurrence counts over a tokenized document list."""

    def __init__(self, documents: Sequence[Sequence[str]], window: int = 10):
        if window < 2:
            raise ValueError("window must be >= 2")
        self.window = window
        self.windows: list[frozenset[str]] = []
        for doc in documents:
            if len(doc) <= window:
                if doc:
                    self.windows.append(frozenset(doc))
            else:
                for i in range(len(doc) - window + 1):
                    self.windows.append(frozenset(doc[i:i + window]))
        self.total = len(self.windows)
        self._single: dict[str, int] = {}
        for win in self.windows:
            for w in win:
                self._single[w] = self._single.get(w, 0) + 1

    def count(self, word: str) -> int:
        return self._single.get(word, 0)

    def pair_count(self, wi: str, wj: str) -> int:
        return sum(1 for win in self.windows if wi in win and wj in win)


def npmi_from_counts(counts: WindowCounts, wi: str, wj: str) -> float:
    n_i, n_j = counts.count(wi), counts.count(wj)
    if n_i == 0:
        raise UnknownWord(wi)
    if n_j == 0:
        raise UnknownWord(wj)
    n_ij = counts.pair_count(wi, wj)
    if n_ij == 0:
        return -1.0
    if n_ij == n_i == n_j:
        return 1.0        # perfect co-occurrence, including the all-windows case
    total = counts.total
    p_i, p_j, p_ij = n_i / total, n_j / total, n_ij / total
    value = math.log(p_ij / (p_i * p_j)) / (-math.log(p_ij))
    return max(-1.0, min(1.0, value))


def npmi_pair(wi: str, wj: str, corpus: Sequence[Sequence[str]], window: int = 10) -> float:
    """Normalized PMI of a word pair over sliding windows of the corpus."""
    return npmi_from_counts(WindowCounts(corpus, window), wi, wj)


def topic_npmi(topic: TopicDocs, top_k: int = 10, window: int = 10) -> float:
    """Mean pairwise NPMI over the topic's top ``top_k`` words."""
    words = [w for w, _ in topic.top_words[:top_k]]
    if len(words) < 2:
        raise InsufficientWords(f"topic {topic.topic!r} has {len(words)} ranked words")
    counts = WindowCounts(topic.documents, window)
    values = [npmi_from_counts(counts, words[i], words[j])
              for i in range(len(words)) for j in range(i + 1, len(words))]
    return float(np.mean(values))


def c_v(topic: TopicDocs, top_k: int = 10, window: int = 10) -> float:
    """Mean cosine between per-word NPMI vectors and the topic's sum vector.

    The word-by-word matrix uses NPMI with a unit diagonal; a degenerate
    all-zero word vector contributes 0 and is logged.
    """
    words = [w for w, _ in topic.top_words[:top_k]]
    if len(words) < 2:
        raise InsufficientWords(f"topic {topic.topic!r} has {len(words)} ranked words")
    counts = WindowCounts(topic.documents, window)
    n = len(words)
    matrix = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = npmi_from_counts(counts, words[i], words[j])
    topic_vec = matrix.sum(axis=0)
    topic_norm = float(np.linalg.norm(topic_vec))
    sims = []
    for i in range(n):
        word_norm = float(np.linalg.norm(matrix[i]))
        if word_norm == 0.0 or topic_norm == 0.0:
            logger.warning("degenerate NPMI vector for %r in topic %r", words[i], topic.topic)
            sims.append(0.0)
            continue
        sims.append(float(np.dot(matrix[i], topic_vec)) / (word_norm * topic_norm))
    return float(np.mean(sims))


_INT_RE = re.compile(r"-?\d+")


def rating_task(level: str, topic: TopicDocs, judge: Gateway, seed: int,
                institution: str = "Acme Bank") -> int:
    """Ask the judge to rate the topic's shuffled top-10 items from 1 to 3."""
    keyword = "word" if level == "word" else "utterance"
    items = topic.top_items(level, 10)
    if not items:
        raise InsufficientData(f"topic {topic.topic!r} has no {keyword}s")
    if len(items) < 10:
        logger.warning("topic %r rating uses %d %ss (fewer than 10)", topic.topic, len(items), keyword)
    items = list(items)
    random.Random(seed).shuffle(items)
    system, user = render_prompt("rating", {
        "institution": institution,
        "keyword": keyword,
        "words": ", ".join(items),
    })
    text = judge.chat("rating", system, user)
    for line in reversed(text.strip().splitlines()):
        match = _INT_RE.search(line)
        if match:
            value = int(match.group(0))
            if value in (1, 2, 3):
                return value
            break
    raise UnparsableRating(f"no 1-3 rating in response tail: {text[-80:]!r}")


def _pick_intruder(rng: random.Random, topic: TopicDocs, all_topics: Sequence[TopicDocs],
                   level: str) -> str:
    own = {normalize(x) for x in topic.top_items(level, 50)}
    others = [t for t in all_topics if t.topic != topic.topic]
    if not others:
        raise NoValidIntruder("no other topics to draw an intruder from")
    rng.shuffle(others)
    for other in others:
        candidates = [x for x in other.top_items(level, 50) if normalize(x) not in own]
        if candidates:
            return rng.choice(candidates)
    raise NoValidIntruder(f"no intruder outside top-50 of topic {topic.topic!r}")


def intruder_task(level: str, topic: TopicDocs, all_topics: Sequence[TopicDocs],
                  judge: Gateway, trials: int, seed: int,
                  institution: str = "Acme Bank") -> float:
    """Accuracy of the judge at spotting a planted out-of-topic item."""
    keyword = "word" if level == "word" else "utterance"
    pool = topic.top_items(level, 50)
    if len(pool) < 5:
        raise InsufficientData(f"topic {topic.topic!r} has {len(pool)} ranked items, need 5")
    correct = 0
    for trial in range(trials):
        rng = random.Random(derive_seed(seed, "intruder", topic.topic, level, trial))
        shown = rng.sample(pool, 5)
        intruder = _pick_intruder(rng, topic, list(all_topics), level)
        items = shown + [intruder]
        rng.shuffle(items)
        system, user = render_prompt("intruder", {
            "institution": institution,
            "keyword": keyword,
            "words": ", ".join(items),
        })
        text = judge.chat("intruder", system, user)
        answer = ""
        for line in reversed(text.strip().splitlines()):
            if line.strip():
                answer = line.strip().strip("\"'[]")
                break
        if normalize(answer) == normalize(intruder):
            correct += 1
    return correct / trials


@dataclass
class EvalConfig:
    top_k: int = 10
    window: int = 10
    trials: int = 10
    seed: int = 0
    institution: str = "Acme Bank"
    token_cfg: TokenFilterConfig = field(default_factory=TokenFilterConfig)


@dataclass
class CoherenceReport:
    """Table-shaped coherence results: per-topic values plus aggregates."""

    per_topic: dict[str, dict[str, float]]
    aggregates: dict[str, tuple[float, float]]
    annotations: list[str]
    trials: int
    stopword_digest: str

    METRICS = ("npmi", "c_v", "intruder_word", "intruder_doc", "rating_word", "rating_doc")

    def to_json(self) -> str:
        return json.dumps({
            "per_topic": self.per_topic,
            "aggregates": {k: list(v) for k, v in self.aggregates.items()},
            "annotations": self.annotations,
            "trials": self.trials,
            "stopword_digest": self.stopword_digest,
        }, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def render_table(self, name: str = "topic set") -> str:
        header = (f"{'Topic Set':<20} {'# of Topics':>11} {'NPMI':>16} {'C_V':>16} "
                  f"{'Intruder W':>10} {'Intruder D':>10} {'Rating W':>14} {'Rating D':>14}")
        def ms(metric: str, pct: bool = False) -> str:
            if metric not in self.aggregates:
                return "n/a"
            mean, std = self.aggregates[metric]
            if pct:
                return f"{100 * mean:.1f}%"
            return f"{mean:.3f} +/- {std:.3f}"
        row = (f"{name:<20} {len(self.per_topic):>11} {ms('npmi'):>16} {ms('c_v'):>16} "
               f"{ms('intruder_word', pct=True):>10} {ms('intruder_doc', pct=True):>10} "
               f"{ms('rating_word'):>14} {ms('rating_doc'):>14}")
        return header + "\n" + row


def topic_docs_from_intent_set(intent_set: IntentSet, corpus: Corpus | None = None,
                               token_cfg: TokenFilterConfig | None = None) -> list[TopicDocs]:
    """A topic's documents are its intents' examples plus same-labeled queries."""
    labeled: dict[str, list[str]] = {}
    if corpus is not None:
        for q in corpus:
            if q.label is None:
                continue
            name = ".".join(q.label) if isinstance(q.label, (tuple, list)) else str(q.label)
            labeled.setdefault(name, []).append(q.normalized)
    out = []
    for intent in intent_set.active():
        utterances = list(intent.examples) + labeled.get(intent.name, [])
        out.append(TopicDocs.build(intent.name, utterances, token_cfg))
    return out


def evaluate_topic_set(intent_set: IntentSet, corpus: Corpus | None, judge: Gateway,
                       cfg: EvalConfig) -> CoherenceReport:
    """Compute all five metric families per topic with mean/std aggregates."""
    topics = topic_docs_from_intent_set(intent_set, corpus, cfg.token_cfg)
    per_topic: dict[str, dict[str, float]] = {}
    annotations: list[str] = []
    multi_topic = len(topics) >= 2
    if not multi_topic:
        annotations.append("intruder tasks skipped: need at least 2 topics")
    for topic in topics:
        row: dict[str, float] = {}
        try:
            row["npmi"] = topic_npmi(topic, cfg.top_k, cfg.window)
            row["c_v"] = c_v(topic, cfg.top_k, cfg.window)
        except (InsufficientWords, UnknownWord) as exc:
            annotations.append(f"{topic.topic}: coherence skipped ({exc})")
        for level, suffix in (("word", "word"), ("document", "doc")):
            ratings = []
            for trial in range(cfg.trials):
                try:
                    ratings.append(rating_task(level, topic, judge,
                                               derive_seed(cfg.seed, "rating", topic.topic, level, trial),
                                               cfg.institution))
                except UnparsableRating as exc:
                    annotations.append(f"{topic.topic}: rating trial discarded ({exc})")
                except InsufficientData as exc:
                    annotations.append(f"{topic.topic}: rating skipped ({exc})")
                    break
            if ratings:
                row[f"rating_{suffix}"] = float(np.mean(ratings))
            if multi_topic:
                try:
                    row[f"intruder_{suffix}"] = intruder_task(level, topic, topics, judge,
                                                              cfg.trials, cfg.seed, cfg.institution)
                except (InsufficientData, NoValidIntruder) as exc:
                    annotations.append(f"{topic.topic}: intruder skipped ({exc})")
        per_topic[topic.topic] = row
    aggregates: dict[str, tuple[float, float]] = {}
    for metric in CoherenceReport.METRICS:
        values = [row[metric] for row in per_topic.values() if metric in row]
        if values:
            aggregates[metric] = (float(np.mean(values)), float(np.std(values)))
    return CoherenceReport(per_topic=per_topic, aggregates=aggregates,
                           annotations=annotations, trials=cfg.trials,
                           stopword_digest=cfg.token_cfg.stopword_digest)
