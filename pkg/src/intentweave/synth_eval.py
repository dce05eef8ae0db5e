"""Intrinsic synthetic-data metrics and the real-vs-synthetic judge task.

Compression ratios use a pinned raw-DEFLATE codec (no container header) at a
fixed level so values are stable across runs and platforms. The bundled POS
tagger is a deterministic closed-class lexicon plus suffix rules with a noun
default, keeping CR-POS dependency-free.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents.loops import derive_seed
from .agents.rendering import render_prompt
from .errors import EmptyDataset, InsufficientData, ParseError
from .gateway import Gateway
from .preprocess import normalize
from .structured import Field, Schema, parse_structured

logger = logging.getLogger(__name__)

DEFLATE_LEVEL = 9          # pinned codec level; golden ratios depend on it


def seq_length_stats(dataset: Sequence[str]) -> tuple[float, float]:
    """Mean and population std of utterance length in characters."""
    if not dataset:
        raise EmptyDataset("sequence-length stats need at least one utterance")
    lengths = np.array([len(u) for u in dataset], dtype=float)
    return float(lengths.mean()), float(lengths.std())


def distinct_n(dataset: Sequence[str], max_n: int = 4) -> float:
    """Mean unique/total n-gram ratio for n = 1..max_n, pooled over the dataset.

    N-grams never cross utterance boundaries; values of n with zero total
    n-grams are skipped rather than defining 0/0.
    """
    if not dataset:
        raise EmptyDataset("distinct-n needs at least one utterance")
    tokenized = [normalize(u).split() for u in dataset]
    ratios = []
    for n in range(1, max_n + 1):
        total = 0
        unique: set[tuple[str, ...]] = set()
        for tokens in tokenized:
            for i in range(len(tokens) - n + 1):
                total += 1
                unique.add(tuple(tokens[i:i + n]))
        if total:
            ratios.append(len(unique) / total)
    if not ratios:
        raise EmptyDataset("no n-grams at any order; dataset has no tokens")
    return float(np.mean(ratios))


def _deflate(data: bytes) -> bytes:
    compressor = zlib.compressobj(DEFLATE_LEVEL, zlib.DEFLATED, -zlib.MAX_WBITS)
    return compressor.compress(data) + compressor.flush()


def compression_ratio(dataset: Sequence[str]) -> float:
    """Compressed / original byte size of the newline-joined utterances."""
    if not dataset:
        raise EmptyDataset("compression ratio needs at least one utterance")
    payload = "\n".join(dataset).encode("utf-8")
    if not payload:
        raise EmptyDataset("dataset holds zero bytes")
    return len(_deflate(payload)) / len(payload)


TAGSET = ("noun", "verb", "adj", "adv", "pron", "det", "adp", "num",
          "conj", "part", "punct", "other")

_LEXICON: dict[str, str] = {}
for _tag, _words in {
    "det": "the a an my your his her its our their this that these those any some each every no",
    "pron": "i me you he him she it we us they them mine yours hers ours theirs myself yourself "
            "himself herself itself ourselves themselves who whom what which someone anyone",
    "adp": "in on at to from with for of by about against between into through during before "
           "after above below up down over under off near onto via per",
    "conj": "and or but nor so yet because if while although since unless whereas",
    "part": "not n't",
    "verb": "is am are was were be been being have has had having do does did doing can could "
            "will would shall should may might must need want open close check view send pay "
            "transfer find show see get make go help update cancel change add remove set tell "
            "give take ask know deposit withdraw apply activate report dispute order stop lock "
            "unlock reset enroll schedule increase decrease redeem claim verify confirm",
    "adv": "very really quite too also just now then here there when where why how again soon "
           "never always often sometimes please today tomorrow yesterday",
}.items():
    for _w in _words.split():
        _LEXICON[_w] = _tag

_SUFFIX_RULES = (
    ("ly", "adv"),
    ("ing", "verb"),
    ("ed", "verb"),
    ("ize", "verb"),
    ("ify", "verb"),
    ("ous", "adj"),
    ("ful", "adj"),
    ("ive", "adj"),
    ("able", "adj"),
    ("ible", "adj"),
    ("al", "adj"),
    ("ic", "adj"),
    ("less", "adj"),
)

_PUNCT_RE = re.compile(r"^[^\w\s]+$")
_NUM_RE = re.compile(r"^[\d.,:%$#-]*\d[\d.,:%$#-]*$")


@dataclass(frozen=True)
class PosTagger:
    """Total, deterministic tagger over a fixed coarse tagset."""

    kind: str = "bundled_rule_tagger"       # or "external_pretagged"
    tagset: str = "coarse-12"

    def tag_token(self, token: str) -> str:
        if _PUNCT_RE.match(token):
            return "punct"
        if _NUM_RE.match(token):
            return "num"
        flat = token.lower()
        if flat in _LEXICON:
            return _LEXICON[flat]
        for suffix, tag in _SUFFIX_RULES:
            if len(flat) > len(suffix) + 1 and flat.endswith(suffix):
                return tag
        return "noun"


def pos_tag(text: str, tagger: PosTagger | None = None) -> list[str]:
    """One tag per whitespace token; unknown tokens default to noun."""
    tagger = tagger or PosTagger()
    return [tagger.tag_token(tok) for tok in text.split()]


def cr_pos(dataset: Sequence[str], tagger: PosTagger | None = None) -> float:
    """Compression ratio of the rendered POS-tag sequences.

    With an ``external_pretagged`` tagger the dataset items are already
    space-joined tag strings and pass through unchanged.
    """
    if not dataset:
        raise EmptyDataset("CR-POS needs at least one utterance")
    tagger = tagger or PosTagger()
    if tagger.kind == "external_pretagged":
        rendered = list(dataset)
    else:
        rendered = [" ".join(pos_tag(normalize(u), tagger)) for u in dataset]
    rendered = [r for r in rendered if r]
    if not rendered:
        raise EmptyDataset("no POS tags produced")
    return compression_ratio(rendered)


def qms(dataset: Sequence[str], average: str = "vocabulary") -> tuple[float, float]:
    """Mean and population std of per-term IDF (ln base).

    ``average="vocabulary"`` (the default) averages over unique terms;
    ``average="tokens"`` weights each term by its occurrence count instead.
    """
    if not dataset:
        raise EmptyDataset("QMS needs at least one utterance")
    if average not in ("vocabulary", "tokens"):
        raise ValueError(f"unknown averaging mode {average!r}")
    n_docs = len(dataset)
    df: dict[str, int] = {}
    tf: dict[str, int] = {}
    for utterance in dataset:
        tokens = normalize(utterance).split()
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
        for term in tokens:
            tf[term] = tf.get(term, 0) + 1
    if not df:
        raise EmptyDataset("QMS found no terms")
    weights = {t: (1 if average == "vocabulary" else tf[t]) for t in df}
    values = np.array([v for t in sorted(df) for v in [math.log(n_docs / df[t])] * weights[t]])
    return float(values.mean()), float(values.std())


DISCRIMINATION_SCHEMA = Schema("yaml", (
    Field("reasoning"),
    Field("answer", kind="int"),
))


def discrimination_accuracy(real_set: Sequence[str], synth_set: Sequence[str],
                            judge: Gateway, trials: int = 100, few_shot: int = 10,
                            seed: int = 0, institution: str = "Acme Bank") -> float:
    """Share of trials where the judge names the synthetic slot correctly.

    Per trial one real and one synthetic example are drawn, the slot order
    randomized, and ten real few-shots shown for context. Unparsable answers
    count as incorrect.
    """
    if not real_set or not synth_set:
        raise InsufficientData("both real and synthetic sets must be non-empty")
    if len(real_set) < trials or len(synth_set) < trials:
        logger.warning("sampling with replacement: %d real / %d synthetic for %d trials",
                       len(real_set), len(synth_set), trials)
    correct = 0
    for trial in range(trials):
        rng = random.Random(derive_seed(seed, "discrimination", trial))
        real = rng.choice(real_set)
        synth = rng.choice(synth_set)
        pool = [r for r in real_set if r != real] or list(real_set)
        shots = pool if len(pool) <= few_shot else rng.sample(pool, few_shot)
        synth_first = rng.random() < 0.5
        example_1, example_2 = (synth, real) if synth_first else (real, synth)
        system, user = render_prompt("discrimination", {
            "real_examples": "\n".join(f"- {s}" for s in shots),
            "example_1": example_1,
            "example_2": example_2,
        })
        text = judge.chat("discrimination", system, user)
        try:
            payload = parse_structured(text, DISCRIMINATION_SCHEMA)
            answer = payload["answer"]
        except ParseError as exc:
            logger.warning("discrimination trial %d unparsable: %s", trial, exc)
            continue
        if answer not in (1, 2):
            logger.warning("discrimination trial %d answer %r out of range", trial, answer)
            continue
        if answer == (1 if synth_first else 2):
            correct += 1
    return correct / trials


@dataclass
class IntrinsicReport:
    """Table-shaped intrinsic metrics per dataset cell plus the real baseline."""

    rows: dict[str, dict[str, float | None]]
    annotations: list[str] = field(default_factory=list)

    COLUMNS = ("seq_mean", "seq_std", "distinct_n", "cr", "cr_pos",
               "qms_mean", "qms_std", "discrimination")

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "annotations": self.annotations},
                          indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def render_table(self) -> str:
        header = (f"{'Dataset':<32} {'Seq. Length':>18} {'Distinct-N':>10} {'CR':>7} "
                  f"{'CR-POS':>7} {'QMS':>16} {'Discr. Acc.':>11}")
        lines = [header]
        for name, row in self.rows.items():
            seq = f"{row['seq_mean']:.1f} +/- {row['seq_std']:.1f}"
            qms_s = f"{row['qms_mean']:.2f} +/- {row['qms_std']:.2f}"
            disc = "N/A" if row.get("discrimination") is None else f"{row['discrimination']:.2f}"
            lines.append(f"{name:<32} {seq:>18} {row['distinct_n']:>10.3f} {row['cr']:>7.3f} "
                         f"{row['cr_pos']:>7.3f} {qms_s:>16} {disc:>11}")
        return "\n".join(lines)


def intrinsic_report(cells: dict[str, Sequence[str]], real_baseline: Sequence[str],
                     judge: Gateway | None = None, trials: int = 100,
                     seed: int = 0, tagger: PosTagger | None = None,
                     institution: str = "Acme Bank") -> IntrinsicReport:
    """All six metrics per experiment cell; baseline discrimination is N/A."""
    rows: dict[str, dict[str, float | None]] = {}
    annotations: list[str] = []

    def metric_row(dataset: Sequence[str], discrimination: float | None) -> dict[str, float | None]:
        seq_mean, seq_std = seq_length_stats(dataset)
        qms_mean, qms_std = qms(dataset)
        return {
            "seq_mean": seq_mean, "seq_std": seq_std,
            "distinct_n": distinct_n(dataset),
            "cr": compression_ratio(dataset),
            "cr_pos": cr_pos(dataset, tagger),
            "qms_mean": qms_mean, "qms_std": qms_std,
            "discrimination": discrimination,
        }

    for name, dataset in cells.items():
        try:
            disc = None
            if judge is not None:
                disc = discrimination_accuracy(real_baseline, dataset, judge, trials=trials,
                                               seed=derive_seed(seed, "cell", name),
                                               institution=institution)
            rows[name] = metric_row(dataset, disc)
        except (EmptyDataset, InsufficientData) as exc:
            annotations.append(f"{name}: {exc}")
    try:
        rows["real_baseline"] = metric_row(real_baseline, None)
    except EmptyDataset as exc:
        annotations.append(f"real_baseline: {exc}")
    return IntrinsicReport(rows=rows, annotations=annotations)
