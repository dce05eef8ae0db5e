"""Privacy scrubbing, normalization, dedup, and the evaluation tokenizer.

Scrubbing covers exactly two transforms: digits are scrambled and email
local parts get seeded character noise. Both are pure functions of
(text, seed). The evaluation tokenizer drops stopwords (bundled English
list), tokens with fewer than three letters, and numeric-only tokens.
"""

from __future__ import annotations

import hashlib
import random
import re
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .model import Corpus, Query

_EMAIL_RE = re.compile(r"([A-Za-z0-9._%+-]+)@([A-Za-z0-9.-]+\.[A-Za-z]{2,})")
_TOKEN_SPLIT_RE = re.compile(r"[^0-9a-zA-Z]+")

DIGITS = string.digits


@dataclass(frozen=True)
class ScrubConfig:
    seed: int = 0
    digit_scramble: str = "fixed_permutation"   # or "per_digit_random"
    email_noise: str = "perturb_local_part"

    def __post_init__(self) -> None:
        if self.digit_scramble not in ("fixed_permutation", "per_digit_random"):
            raise ValueError(f"unknown digit_scramble {self.digit_scramble!r}")
        if self.email_noise != "perturb_local_part":
            raise ValueError(f"unknown email_noise {self.email_noise!r}")


def digit_permutation(seed: int) -> dict[str, str]:
    """Seeded permutation of the ten digits; equal digits map equally."""
    digits = list(DIGITS)
    random.Random(seed).shuffle(digits)
    return dict(zip(DIGITS, digits))


def _perturb_local_part(local: str, seed: int) -> str:
    rng = random.Random(f"email:{seed}:{local}")
    out = []
    for ch in local:
        if ch.islower():
            out.append(rng.choice(string.ascii_lowercase))
        elif ch.isupper():
            out.append(rng.choice(string.ascii_uppercase))
        elif ch.isdigit():
            out.append(rng.choice(DIGITS))
        else:
            out.append(ch)
    return "".join(out)


def scrub(text: str, cfg: ScrubConfig) -> str:
    """Scramble digits and add noise to email local parts.

    Pure function of (text, seed). Not idempotent: scrubbing already-scrubbed
    text scrambles it again.
    """

    def sub_email(match: re.Match) -> str:
        return _perturb_local_part(match.group(1), cfg.seed) + "@" + match.group(2)

    scrubbed = _EMAIL_RE.sub(sub_email, text)
    if cfg.digit_scramble == "fixed_permutation":
        table = digit_permutation(cfg.seed)
        scrubbed = "".join(table.get(ch, ch) for ch in scrubbed)
    else:
        rng = random.Random(f"digits:{cfg.seed}:{scrubbed}")
        scrubbed = "".join(str(rng.randrange(10)) if ch.isdigit() else ch for ch in scrubbed)
    return scrubbed


def normalize(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace runs."""
    return " ".join(text.lower().split())


def dedupe(corpus: Corpus) -> Corpus:
    """Keep the first occurrence of each query id, preserving order."""
    return Corpus(corpus.queries)


@lru_cache(maxsize=4)
def _load_stopwords(path_str: str | None) -> tuple[frozenset[str], str]:
    if path_str is None:
        data = resources.files("intentweave").joinpath("data/stopwords_english.txt").read_bytes()
    else:
        data = Path(path_str).read_bytes()
    words = frozenset(w.strip() for w in data.decode("utf-8").splitlines() if w.strip())
    return words, hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class TokenFilterConfig:
    stopword_list: str = "english"
    stopword_path: str | None = None    # None = bundled list
    min_letters: int = 3
    drop_numeric_only: bool = True

    @property
    def stopwords(self) -> frozenset[str]:
        return _load_stopwords(self.stopword_path)[0]

    @property
    def stopword_digest(self) -> str:
        """Hash of the stopword file, recorded in evaluation reports."""
        return _load_stopwords(self.stopword_path)[1]


def tokenize_for_eval(text: str, cfg: TokenFilterConfig | None = None) -> list[str]:
    """Word-level tokens for topic evaluation; text should be normalized."""
    cfg = cfg or TokenFilterConfig()
    stop = cfg.stopwords
    tokens = []
    for tok in _TOKEN_SPLIT_RE.split(text):
        if not tok:
            continue
        if tok in stop:
            continue
        if sum(ch.isalpha() for ch in tok) < cfg.min_letters:
            continue
        if cfg.drop_numeric_only and tok.isdigit():
            continue
        tokens.append(tok)
    return tokens


def make_query(raw: str, source: str, label=None, scrub_cfg: ScrubConfig | None = None) -> Query:
    """Scrub (optionally) and normalize one utterance into a Query."""
    scrubbed = scrub(raw, scrub_cfg) if scrub_cfg is not None else raw
    return Query(raw=scrubbed, normalized=normalize(scrubbed), source=source, label=label)


def read_corpus(path: str | Path, source: str, labeled: bool = False,
                delimiter: str = "\t", scrub_cfg: ScrubConfig | None = None) -> Corpus:
    """Read a line-delimited text file (optionally two-column text<TAB>label)."""
    corpus = Corpus()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if labeled:
            text, _, label = line.partition(delimiter)
            corpus.append(make_query(text, source, label=label.strip() or None, scrub_cfg=scrub_cfg))
        else:
            corpus.append(make_query(line, source, scrub_cfg=scrub_cfg))
    return corpus


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    import json

    lines = []
    for q in corpus:
        label = list(q.label) if isinstance(q.label, tuple) else q.label
        lines.append(json.dumps({"raw": q.raw, "normalized": q.normalized,
                                 "source": q.source, "label": label, "id": q.id},
                                sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_corpus(path: str | Path) -> Corpus:
    import json

    corpus = Corpus()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        label = tuple(rec["label"]) if isinstance(rec["label"], list) else rec["label"]
        corpus.append(Query(raw=rec["raw"], normalized=rec["normalized"],
                            source=rec["source"], label=label, id=rec["id"]))
    return corpus
