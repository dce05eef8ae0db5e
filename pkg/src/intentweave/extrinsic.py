"""Training-set assembly, the proxy classifier, macro-F1, and the t-test.

Three assembly configurations: baseline (real only), approach1 (a quarter of
rows replaced within-label by synthetic rows), approach2 (a quarter of labels
replaced entirely by capped synthetic rows). Few-shot ids used during
generation are excluded from every synthetic-bearing training set.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.linear_model import LogisticRegression

from .agents.loops import derive_seed
from .errors import DegenerateData, IntentweaveError
from .model import query_id
from .preprocess import normalize

logger = logging.getLogger(__name__)

APPROACHES = ("baseline", "approach1", "approach2")


class InsufficientSynthetic(IntentweaveError):
    pass


class MissingLabelInSynth(IntentweaveError):
    pass


class LengthMismatch(IntentweaveError):
    pass


class InsufficientSamples(IntentweaveError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: str
    synthetic: bool = False
    id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            object.__setattr__(self, "id", query_id(normalize(self.text)))


@dataclass
class AssemblyPlan:
    approach: str
    replace_fraction: float = 0.25
    per_label_cap: int = 100
    seed: int = 0
    excluded_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.approach not in APPROACHES:
            raise ValueError(f"unknown approach {self.approach!r}")


def _by_label(rows: Sequence[LabeledExample]) -> dict[str, list[LabeledExample]]:
    out: dict[str, list[LabeledExample]] = {}
    for row in rows:
        out.setdefault(row.label, []).append(row)
    return out


def assemble(train: Sequence[LabeledExample], synth: dict[str, list[LabeledExample]],
             plan: AssemblyPlan) -> list[LabeledExample]:
    """Build one training set per the plan; see the module docstring."""
    if plan.approach == "baseline":
        return list(train)

    real = [r for r in train if r.id not in plan.excluded_ids]
    labels = sorted({r.label for r in real})

    if plan.approach == "approach1":
        out = list(real)
        grouped = _by_label(real)
        positions: dict[str, list[int]] = {}
        for idx, row in enumerate(out):
            positions.setdefault(row.label, []).append(idx)
        for label in labels:
            n = len(grouped[label])
            k = round(plan.replace_fraction * n)
            if k == 0:
                continue
            pool = synth.get(label)
            if not pool:
                raise MissingLabelInSynth(label)
            if len(pool) < k:
                raise InsufficientSynthetic(f"{label}: need {k}, have {len(pool)}")
            rng = random.Random(derive_seed(plan.seed, "approach1", label))
            replace_at = rng.sample(positions[label], k)
            replacements = rng.sample(pool, k)
            for pos, new_row in zip(sorted(replace_at), replacements):
                out[pos] = new_row
        return out

    # approach2: replace whole labels, capped at per_label_cap synthetic rows.
    rng = random.Random(derive_seed(plan.seed, "approach2", "labels"))
    n_chosen = round(plan.replace_fraction * len(labels))
    chosen = set(rng.sample(labels, n_chosen))
    out = [r for r in real if r.label not in chosen]
    for label in sorted(chosen):
        pool = synth.get(label)
        if pool is None:
            raise MissingLabelInSynth(label)
        if len(pool) < plan.per_label_cap:
            raise InsufficientSynthetic(
                f"{label}: need {plan.per_label_cap}, have {len(pool)}")
        label_rng = random.Random(derive_seed(plan.seed, "approach2", label))
        out.extend(label_rng.sample(pool, plan.per_label_cap))
    return out


@dataclass
class ClassifierConfig:
    """Proxy classifier settings: unigram+bigram TF-IDF into weighted logit."""

    regularization: float = 1.0
    tol: float = 1e-4
    max_iter: int = 1000
    seed: int = 0
    min_df: int = 1

    def digest(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


class TextClassifier:
    def __init__(self, vectorizer: TfidfVectorizer, model: LogisticRegression, converged: bool):
        self.vectorizer = vectorizer
        self.model = model
        self.converged = converged

    def predict(self, texts: Sequence[str]) -> list[str]:
        return list(self.model.predict(self.vectorizer.transform(texts)))


def train_classifier(dataset: Sequence[LabeledExample], cfg: ClassifierConfig) -> TextClassifier:
    """Class-weighted multinomial logistic regression over TF-IDF features."""
    labels = [r.label for r in dataset]
    counts: dict[str, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    if len(counts) < 2:
        raise DegenerateData(f"need at least 2 labels, got {len(counts)}")
    if min(counts.values()) < 2:
        worst = min(counts, key=counts.get)
        raise DegenerateData(f"label {worst!r} has {counts[worst]} row(s), need 2")
    vectorizer = TfidfVectorizer(ngram_range=(1, 2), norm="l2", min_df=cfg.min_df)
    features = vectorizer.fit_transform([r.text for r in dataset])
    model = LogisticRegression(
        C=cfg.regularization,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        class_weight="balanced",
        random_state=cfg.seed,
        solver="lbfgs",
    )
    model.fit(features, labels)
    converged = all(n < cfg.max_iter for n in np.atleast_1d(model.n_iter_))
    if not converged:
        logger.warning("classifier stopped at max_iter=%d before tolerance", cfg.max_iter)
    return TextClassifier(vectorizer, model, converged)


def macro_f1(predictions: Sequence[str], golds: Sequence[str]) -> tuple[float, dict[str, float]]:
    """Unweighted mean of per-class F1; undefined precision/recall count as 0."""
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    classes = sorted(set(golds))
    per_class: dict[str, float] = {}
    for cls in classes:
        tp = sum(1 for p, g in zip(predictions, golds) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(predictions, golds) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(predictions, golds) if p != cls and g == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[cls] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return sum(per_class.values()) / len(per_class), per_class


@dataclass
class TTestResult:
    t: float
    p: float
    df: float
    degenerate: bool = False


def per_class_ttest(f1_a: Sequence[float], f1_b: Sequence[float]) -> TTestResult:
    """Welch's two-sample two-tailed t-test over per-class score samples."""
    if len(f1_a) < 2 or len(f1_b) < 2:
        raise InsufficientSamples("both samples need at least 2 entries")
    a = np.asarray(f1_a, dtype=float)
    b = np.asarray(f1_b, dtype=float)
    var_a, var_b = a.var(ddof=1), b.var(ddof=1)
    mean_diff = a.mean() - b.mean()
    if var_a == 0.0 and var_b == 0.0:
        if mean_diff == 0.0:
            return TTestResult(t=0.0, p=1.0, df=float(len(a) + len(b) - 2))
        return TTestResult(t=math.copysign(math.inf, mean_diff), p=0.0,
                           df=float(len(a) + len(b) - 2), degenerate=True)
    sa, sb = var_a / len(a), var_b / len(b)
    t_stat = mean_diff / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa ** 2 / (len(a) - 1) + sb ** 2 / (len(b) - 1))
    # Two-tailed p from the t survival function via the incomplete beta.
    p_value = float(special.betainc(df / 2.0, 0.5, df / (df + t_stat ** 2)))
    return TTestResult(t=float(t_stat), p=p_value, df=float(df))


@dataclass
class ExtrinsicReport:
    approach: str
    macro_f1: float
    per_class_f1: dict[str, float]
    config_digest: str
    cell: str = ""
    converged: bool = True
    ttest_all: TTestResult | None = None
    ttest_replaced: TTestResult | None = None
    replaced_labels: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        rec = {
            "approach": self.approach,
            "cell": self.cell,
            "macro_f1": self.macro_f1,
            "per_class_f1": self.per_class_f1,
            "config_digest": self.config_digest,
            "converged": self.converged,
            "replaced_labels": self.replaced_labels,
        }
        for name, result in (("ttest_all", self.ttest_all), ("ttest_replaced", self.ttest_replaced)):
            if result is not None:
                rec[name] = {"t": result.t, "p": result.p, "df": result.df,
                             "degenerate": result.degenerate}
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True)


def export_datasets(assemblies: dict[str, Sequence[LabeledExample]], out_dir: str | Path,
                    split_for: dict[str, str] | None = None) -> list[Path]:
    """Write line-delimited (text, label, split, approach) files, byte-stable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in assemblies.items():
        split = (split_for or {}).get(name, "test" if name == "test" else "train")
        path = out_dir / f"{name}.jsonl"
        lines = [json.dumps({"text": r.text, "label": r.label, "split": split,
                             "approach": name}, sort_keys=True) for r in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def load_exported(path: str | Path) -> list[LabeledExample]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        rows.append(LabeledExample(text=rec["text"], label=rec["label"]))
    return rows


def verify_disjoint(train: Sequence[LabeledExample], test: Sequence[LabeledExample]) -> None:
    overlap = {r.id for r in train} & {r.id for r in test}
    if overlap:
        raise IntentweaveError(f"train/test overlap on {len(overlap)} ids")


def run_extrinsic(train: Sequence[LabeledExample], test: Sequence[LabeledExample],
                  synth_cells: dict[str, dict[str, list[LabeledExample]]],
                  cfg: ClassifierConfig, plan_seed: int = 0,
                  excluded_ids: frozenset[str] = frozenset(),
                  replace_fraction: float = 0.25,
                  per_label_cap: int = 100) -> dict[str, ExtrinsicReport]:
    """Baseline plus approach1/approach2 per cell, with baseline-vs-approach2
    t-tests over all classes and over the replaced classes alone."""
    verify_disjoint(train, test)
    test_texts = [r.text for r in test]
    test_golds = [r.label for r in test]

    reports: dict[str, ExtrinsicReport] = {}
    baseline_model = train_classifier(list(train), cfg)
    base_macro, base_per_class = macro_f1(baseline_model.predict(test_texts), test_golds)
    reports["baseline"] = ExtrinsicReport(
        approach="baseline", macro_f1=base_macro, per_class_f1=base_per_class,
        config_digest=cfg.digest(), converged=baseline_model.converged)

    for cell, synth in synth_cells.items():
        for approach in ("approach1", "approach2"):
            plan = AssemblyPlan(approach=approach, replace_fraction=replace_fraction,
                                per_label_cap=per_label_cap, seed=plan_seed,
                                excluded_ids=excluded_ids)
            assembled = assemble(train, synth, plan)
            model = train_classifier(assembled, cfg)
            macro, per_class = macro_f1(model.predict(test_texts), test_golds)
            report = ExtrinsicReport(
                approach=approach, cell=cell, macro_f1=macro, per_class_f1=per_class,
                config_digest=cfg.digest(), converged=model.converged)
            if approach == "approach2":
                replaced = sorted({r.label for r in assembled if r.synthetic})
                report.replaced_labels = replaced
                common = sorted(set(base_per_class) & set(per_class))
                if len(common) >= 2:
                    report.ttest_all = per_class_ttest(
                        [base_per_class[c] for c in common], [per_class[c] for c in common])
                replaced_common = [c for c in common if c in replaced]
                if len(replaced_common) >= 2:
                    report.ttest_replaced = per_class_ttest(
                        [base_per_class[c] for c in replaced_common],
                        [per_class[c] for c in replaced_common])
            reports[f"{cell}/{approach}"] = report
    return reports


def render_extrinsic_table(reports: dict[str, ExtrinsicReport]) -> str:
    """Rows are experiment cells, columns the two approaches; baseline apart."""
    header = f"{'Few-Shots / Desc. Type':<36} {'Approach 1':>10} {'Approach 2':>10}"
    lines = [header]
    cells = sorted({r.cell for k, r in reports.items() if r.cell})
    for cell in cells:
        a1 = reports.get(f"{cell}/approach1")
        a2 = reports.get(f"{cell}/approach2")
        lines.append(f"{cell:<36} "
                     f"{a1.macro_f1 if a1 else float('nan'):>10.3f} "
                     f"{a2.macro_f1 if a2 else float('nan'):>10.3f}")
    if "baseline" in reports:
        lines.append(f"{'Real (Baseline)':<36} {reports['baseline'].macro_f1:>21.3f}")
    return "\n".join(lines)
