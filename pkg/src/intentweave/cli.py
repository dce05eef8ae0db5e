"""Command-line entry point wiring configs, seeds, corpora, and backends.

Every stage reads prior outputs from the run directory and writes its own
outputs plus audit records there. Stage outputs are files, never in-memory
handoffs, so human review and external harnesses can slot between stages.
Offline runs use ``--mock <script.json>``; no network is ever touched then.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import agents, extrinsic, preprocess, synth_eval, synth_gen, topic_eval
from .errors import (
    AuthError,
    IntentweaveError,
    InvariantViolation,
    ParseError,
    RetriesExhausted,
    TransportError,
    UnscriptedRequest,
)
from .gateway import BackendConfig, Gateway, HttpBackend, load_mock_script
from .model import AuditLog, load_intent_set, save_intent_set

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_VALIDATION = 5


@dataclass
class RunConfig:
    endpoint: str = "https://api.example.com/v1/chat/completions"
    model: str = "gpt-4o-2024-05-13"
    credential_env: str = "INTENTWEAVE_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    master_seed: int = 0
    institution: str = "Acme Bank"
    scrub_seed: int = 0
    digit_scramble: str = "fixed_permutation"
    max_consecutive_failures: int = 1000
    sample_size: int = 200
    generator_budget: int = 5
    proposer_budget: int = 5
    judge_budget: int = 3
    adder_budget: int = 3
    gen_batch_size: int = 5
    gen_total: int = 100
    gen_temperature: float = 0.7
    cross_class_shots: int = 10
    in_class_shots: int = 10
    eval_trials: int = 10
    discrimination_trials: int = 100
    top_k: int = 10
    window: int = 10
    replace_fraction: float = 0.25
    per_label_cap: int = 100

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:12]

    def agent_config(self) -> agents.AgentConfig:
        return agents.AgentConfig(
            max_consecutive_failures=self.max_consecutive_failures,
            sample_size=self.sample_size,
            shuffle_seed=self.master_seed,
            institution_name=self.institution,
            generator_budget=self.generator_budget,
            proposer_budget=self.proposer_budget,
            judge_budget=self.judge_budget,
            adder_budget=self.adder_budget,
        )


class _MockClock:
    """Deterministic per-run clock so mock runs are byte-identical."""

    def __init__(self) -> None:
        self.tick = 0.0

    def __call__(self) -> float:
        self.tick += 1.0
        return self.tick


@contextlib.contextmanager
def run_lock(run_dir: Path):
    """One subcommand at a time per run directory."""
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise IntentweaveError(
            f"run directory is locked by another process ({lock}); remove the "
            f"lock file if that process is gone") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class Stage:
    """Shared per-invocation context: run dir, config, gateway, manifest."""

    def __init__(self, args: argparse.Namespace):
        self.run_dir = Path(args.run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        config_path = self.run_dir / "config.json"
        if getattr(args, "config", None):
            self.config = RunConfig.from_file(args.config)
        elif config_path.exists():
            self.config = RunConfig.from_file(config_path)
        else:
            self.config = RunConfig()
        if getattr(args, "seed", None) is not None:
            self.config.master_seed = args.seed
        if getattr(args, "institution", None):
            self.config.institution = args.institution
        config_path.write_text(self.config.to_json() + "\n", encoding="utf-8")
        self.mock_path = getattr(args, "mock", None)
        clock = _MockClock() if self.mock_path else None
        self.audit = AuditLog(self.run_dir / "audit.jsonl",
                              **({"clock": clock} if clock else {}))

    def gateway(self) -> Gateway:
        if self.mock_path:
            backend = load_mock_script(self.mock_path)
            return Gateway(backend, audit=self.audit, clock=self.audit.clock,
                           sleep=lambda _s: None)
        backend = HttpBackend(BackendConfig(
            endpoint=self.config.endpoint, model=self.config.model,
            credential_env=self.config.credential_env, timeout=self.config.timeout,
            max_retries=self.config.max_retries, backoff_base=self.config.backoff_base))
        return Gateway(backend, audit=self.audit)

    def record_output(self, *paths: Path) -> None:
        manifest_path = self.run_dir / "manifest.json"
        manifest = {}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        for path in paths:
            manifest[str(path.relative_to(self.run_dir))] = self.config.digest()
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")

    def path(self, name: str) -> Path:
        return self.run_dir / name


def _load_labeled_queries(path: str | Path) -> list:
    corpus = preprocess.load_corpus(path)
    return [q for q in corpus if q.label is not None]


def cmd_preprocess(stage: Stage, args: argparse.Namespace) -> int:
    scrub_cfg = preprocess.ScrubConfig(seed=stage.config.scrub_seed,
                                       digit_scramble=stage.config.digit_scramble)
    corpus = preprocess.read_corpus(args.input, args.source, labeled=args.labeled,
                                    scrub_cfg=scrub_cfg)
    corpus = preprocess.dedupe(corpus)
    out = stage.path(f"corpus_{args.name}.jsonl")
    preprocess.save_corpus(corpus, out)
    stage.record_output(out)
    print(f"wrote {len(corpus)} queries to {out}")
    return EXIT_OK


def cmd_hte(stage: Stage, args: argparse.Namespace) -> int:
    topics = json.loads(Path(args.topics).read_text(encoding="utf-8"))
    seed_topics = [(t["topic"], t.get("description", "")) for t in topics]
    corpus = preprocess.load_corpus(args.corpus)
    gateway = stage.gateway()
    result = agents.hte_pipeline(gateway, seed_topics, corpus, stage.config.agent_config())
    set_path = stage.path("intent_set_hte.jsonl")
    save_intent_set(result.intent_set, set_path)
    merges_path = stage.path("merges_pending.jsonl")
    merges_path.write_text(
        "".join(json.dumps(m.to_record(), sort_keys=True) + "\n" for m in result.merges),
        encoding="utf-8")
    stage.record_output(set_path, merges_path)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"{len(result.intent_set.active())} intents, {len(result.merges)} pending merges")
    return EXIT_OK


def _read_merges(path: Path) -> list[agents.MergeAction]:
    return [agents.MergeAction.from_record(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_review_merges(stage: Stage, args: argparse.Namespace) -> int:
    intent_set = load_intent_set(args.intent_set or stage.path("intent_set_hte.jsonl"))
    merges = _read_merges(Path(args.merges) if args.merges else stage.path("merges_pending.jsonl"))
    if args.accept_prefix is not None:
        decision: agents.ReviewDecision = ("prefix", args.accept_prefix)
    elif args.verdicts is not None:
        decision = [v.strip() in ("1", "y", "yes", "ok") for v in args.verdicts.split(",")]
    else:
        verdicts = []
        for i, merge in enumerate(merges):
            answer = input(f"[{i + 1}/{len(merges)}] keep {'.'.join(merge.keep)}, "
                           f"eliminate {'.'.join(merge.eliminate)} -- apply? [y/N] ")
            verdicts.append(answer.strip().lower() in ("y", "yes"))
        decision = verdicts
    applied = agents.review_merges(intent_set, merges, decision)
    out = stage.path("intent_set_reviewed.jsonl")
    save_intent_set(intent_set, out)
    decisions_path = stage.path("review_decisions.json")
    decisions_path.write_text(json.dumps({
        "applied": [m.action_id for m in applied],
        "total": len(merges),
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stage.audit.emit("note", "review", verdict=f"applied {len(applied)}/{len(merges)}")
    stage.record_output(out, decisions_path)
    print(f"applied {len(applied)} of {len(merges)} merges")
    return EXIT_OK


def cmd_tgb(stage: Stage, args: argparse.Namespace) -> int:
    intent_set = load_intent_set(args.intent_set)
    corpus = preprocess.load_corpus(args.corpus)
    gateway = stage.gateway()
    result = agents.tgb_pipeline(gateway, intent_set, corpus, stage.config.agent_config())
    out = stage.path("intent_set_tgb.jsonl")
    save_intent_set(result.intent_set, out)
    stage.record_output(out)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"discovered {len(result.discovered)} intents; "
          f"{len(result.intent_set.active())} active total")
    return EXIT_OK


def cmd_gen_descriptions(stage: Stage, args: argparse.Namespace) -> int:
    train = _load_labeled_queries(args.train)
    labels = args.labels.split(",") if args.labels else sorted({q.label for q in train})
    gateway = stage.gateway()
    descriptions = {}
    for label in labels:
        examples = [q.raw for q in train if q.label == label]
        descriptions[label] = synth_gen.generate_label_description(
            gateway, label, examples, institution=stage.config.institution)
    out = stage.path("descriptions.jsonl")
    synth_gen.save_descriptions(descriptions, out)
    stage.record_output(out)
    print(f"wrote {len(descriptions)} descriptions to {out}")
    return EXIT_OK


def cmd_gen_utterances(stage: Stage, args: argparse.Namespace) -> int:
    train = _load_labeled_queries(args.train)
    labels = args.labels.split(",") if args.labels else sorted({q.label for q in train})
    human = synth_gen.load_human_descriptions(args.human_descriptions) \
        if args.human_descriptions else None
    cells = synth_gen.CELLS
    if args.cells:
        wanted = set(args.cells.split(","))
        cells = tuple(c for c in synth_gen.CELLS
                      if synth_gen.cell_name(c[0] == "with_in_class", c[1]) in wanted)
    defaults = synth_gen.GenSpec(label="", batch_size=stage.config.gen_batch_size,
                                 total=stage.config.gen_total,
                                 temperature=stage.config.gen_temperature,
                                 cross_class_shots=stage.config.cross_class_shots,
                                 in_class_shots=stage.config.in_class_shots)
    gateway = stage.gateway()
    run = synth_gen.run_generation(gateway, labels, train, human, defaults=defaults,
                                   seed=stage.config.master_seed,
                                   institution=stage.config.institution, cells=cells)
    synth_dir = stage.path("synth")
    synth_dir.mkdir(exist_ok=True)
    written = []
    for cell, records in run.records.items():
        out = synth_dir / f"{cell}.jsonl"
        synth_gen.save_synthetic_corpus(records, out)
        written.append(out)
    exclusions = stage.path("fewshot_exclusions.json")
    exclusions.write_text(json.dumps({
        "excluded_ids": run.excluded_ids,
        "duplicate_counts": run.duplicate_counts,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(exclusions)
    stage.record_output(*written)
    for warning in run.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for cell in run.records:
        print(f"{cell}: {len(run.records[cell])} utterances "
              f"(duplicate rate {run.duplicate_rate(cell):.3f})")
    return EXIT_OK


def cmd_eval_topics(stage: Stage, args: argparse.Namespace) -> int:
    intent_set = load_intent_set(args.intent_set)
    corpus = preprocess.load_corpus(args.corpus) if args.corpus else None
    gateway = stage.gateway()
    cfg = topic_eval.EvalConfig(top_k=stage.config.top_k, window=stage.config.window,
                                trials=stage.config.eval_trials, seed=stage.config.master_seed,
                                institution=stage.config.institution)
    report = topic_eval.evaluate_topic_set(intent_set, corpus, gateway, cfg)
    reports = stage.path("reports")
    reports.mkdir(exist_ok=True)
    out_json = reports / "topic_eval.json"
    report.save(out_json)
    out_txt = reports / "topic_eval.txt"
    out_txt.write_text(report.render_table() + "\n", encoding="utf-8")
    stage.record_output(out_json, out_txt)
    print(report.render_table())
    return EXIT_OK


def _cells_from_dir(synth_dir: Path) -> dict[str, list[synth_gen.SyntheticRecord]]:
    cells = {}
    for path in sorted(synth_dir.glob("*.jsonl")):
        cells[path.stem] = synth_gen.load_synthetic_corpus(path)
    if not cells:
        raise IntentweaveError(f"no synthetic corpora under {synth_dir}")
    return cells


def cmd_eval_intrinsic(stage: Stage, args: argparse.Namespace) -> int:
    baseline = [q.raw for q in preprocess.load_corpus(args.baseline)]
    cells: dict[str, list[str]] = {}
    if args.synth_dir:
        for cell, records in _cells_from_dir(Path(args.synth_dir)).items():
            cells[cell] = [r.utterance for r in records]
    judge = stage.gateway() if args.judge else None
    report = synth_eval.intrinsic_report(
        cells, baseline, judge=judge, trials=stage.config.discrimination_trials,
        seed=stage.config.master_seed, institution=stage.config.institution)
    reports = stage.path("reports")
    reports.mkdir(exist_ok=True)
    out_json = reports / "intrinsic.json"
    report.save(out_json)
    out_txt = reports / "intrinsic.txt"
    out_txt.write_text(report.render_table() + "\n", encoding="utf-8")
    stage.record_output(out_json, out_txt)
    print(report.render_table())
    return EXIT_OK


def _labeled_examples(path: str | Path) -> list[extrinsic.LabeledExample]:
    return [extrinsic.LabeledExample(text=q.raw, label=str(q.label))
            for q in _load_labeled_queries(path)]


def _synth_examples(synth_dir: Path) -> dict[str, dict[str, list[extrinsic.LabeledExample]]]:
    out: dict[str, dict[str, list[extrinsic.LabeledExample]]] = {}
    for cell, records in _cells_from_dir(synth_dir).items():
        per_label: dict[str, list[extrinsic.LabeledExample]] = {}
        for rec in records:
            per_label.setdefault(rec.label, []).append(
                extrinsic.LabeledExample(text=rec.utterance, label=rec.label, synthetic=True))
        out[cell] = per_label
    return out


def _excluded_ids(path: str | None) -> frozenset[str]:
    if not path:
        return frozenset()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return frozenset(data.get("excluded_ids", []))


def cmd_eval_extrinsic(stage: Stage, args: argparse.Namespace) -> int:
    train = _labeled_examples(args.train)
    test = _labeled_examples(args.test)
    synth_cells = _synth_examples(Path(args.synth_dir))
    cfg = extrinsic.ClassifierConfig(seed=stage.config.master_seed)
    reports = extrinsic.run_extrinsic(
        train, test, synth_cells, cfg, plan_seed=stage.config.master_seed,
        excluded_ids=_excluded_ids(args.exclusions),
        replace_fraction=stage.config.replace_fraction,
        per_label_cap=stage.config.per_label_cap)
    reports_dir = stage.path("reports")
    reports_dir.mkdir(exist_ok=True)
    out_json = reports_dir / "extrinsic.json"
    payload = {name: r.to_record() for name, r in reports.items()}
    payload["config_digest"] = stage.config.digest()
    out_json.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    out_txt = reports_dir / "extrinsic.txt"
    out_txt.write_text(extrinsic.render_extrinsic_table(reports) + "\n", encoding="utf-8")
    stage.record_output(out_json, out_txt)
    print(extrinsic.render_extrinsic_table(reports))
    return EXIT_OK


def cmd_export(stage: Stage, args: argparse.Namespace) -> int:
    train = _labeled_examples(args.train)
    test = _labeled_examples(args.test)
    synth_cells = _synth_examples(Path(args.synth_dir))
    cell = args.cell or sorted(synth_cells)[0]
    synth = synth_cells[cell]
    excluded = _excluded_ids(args.exclusions)
    assemblies: dict[str, list[extrinsic.LabeledExample]] = {"test": test}
    for approach in extrinsic.APPROACHES:
        plan = extrinsic.AssemblyPlan(approach=approach, seed=stage.config.master_seed,
                                      replace_fraction=stage.config.replace_fraction,
                                      per_label_cap=stage.config.per_label_cap,
                                      excluded_ids=excluded)
        assemblies[approach] = extrinsic.assemble(train, synth, plan)
    out_dir = stage.path("exports")
    written = extrinsic.export_datasets(assemblies, out_dir)
    stage.record_output(*written)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_report(stage: Stage, args: argparse.Namespace) -> int:
    reports = stage.path("reports")
    path = reports / f"{args.kind}.txt"
    if args.kind == "topics":
        path = reports / "topic_eval.txt"
    if not path.exists():
        raise IntentweaveError(f"no report at {path}; run the matching eval subcommand first")
    print(path.read_text(encoding="utf-8").rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentweave",
        description="Intent-taxonomy expansion, synthetic query generation, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--run-dir", required=True, help="run directory for stage outputs")
        p.add_argument("--config", help="run config JSON (copied into the run dir)")
        p.add_argument("--mock", help="mock script fixture for offline runs")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--institution", help="institution name substituted into prompts")

    p = sub.add_parser("preprocess", help="scrub, normalize, and dedupe a raw corpus")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--name", required=True, help="corpus name (output corpus_<name>.jsonl)")
    p.add_argument("--source", default="unlabeled",
                   choices=["proxy_labeled", "unlabeled", "synthetic"])
    p.add_argument("--labeled", action="store_true", help="input lines are text<TAB>label")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("hte", help="generate subtopics per seed topic, then the merge loop")
    common(p)
    p.add_argument("--topics", required=True, help="JSON list of {topic, description}")
    p.add_argument("--corpus", required=True, help="proxy-labeled corpus JSONL")
    p.set_defaults(fn=cmd_hte)

    p = sub.add_parser("review-merges", help="apply the human-approved merge subset")
    common(p)
    p.add_argument("--intent-set")
    p.add_argument("--merges")
    p.add_argument("--accept-prefix", type=int)
    p.add_argument("--verdicts", help="comma-separated per-merge verdicts (1/0)")
    p.set_defaults(fn=cmd_review_merges)

    p = sub.add_parser("tgb", help="propose, judge, refine, and enrich from unlabeled data")
    common(p)
    p.add_argument("--intent-set", required=True)
    p.add_argument("--corpus", required=True, help="unlabeled corpus JSONL")
    p.set_defaults(fn=cmd_tgb)

    p = sub.add_parser("gen-descriptions", help="generate label descriptions and keywords")
    common(p)
    p.add_argument("--train", required=True, help="labeled corpus JSONL")
    p.add_argument("--labels", help="comma-separated subset of labels")
    p.set_defaults(fn=cmd_gen_descriptions)

    p = sub.add_parser("gen-utterances", help="generate synthetic queries per label and cell")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--labels")
    p.add_argument("--human-descriptions", help="JSONL of human descriptions keyed by label")
    p.add_argument("--cells", help="comma-separated cell subset")
    p.set_defaults(fn=cmd_gen_utterances)

    p = sub.add_parser("eval-topics", help="coherence metrics and judged tasks")
    common(p)
    p.add_argument("--intent-set", required=True)
    p.add_argument("--corpus")
    p.set_defaults(fn=cmd_eval_topics)

    p = sub.add_parser("eval-intrinsic", help="intrinsic synthetic-data metrics")
    common(p)
    p.add_argument("--baseline", required=True, help="real corpus JSONL")
    p.add_argument("--synth-dir")
    p.add_argument("--judge", action="store_true", help="run the discrimination task")
    p.set_defaults(fn=cmd_eval_intrinsic)

    p = sub.add_parser("eval-extrinsic", help="proxy classifier over the three assemblies")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--synth-dir", required=True)
    p.add_argument("--exclusions", help="fewshot_exclusions.json from gen-utterances")
    p.set_defaults(fn=cmd_eval_extrinsic)

    p = sub.add_parser("export", help="export assembled train/test sets for external harnesses")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--synth-dir", required=True)
    p.add_argument("--cell", help="synthetic cell to assemble from (default: first)")
    p.add_argument("--exclusions")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("report", help="print a rendered report table")
    common(p)
    p.add_argument("--kind", required=True, choices=["topics", "intrinsic", "extrinsic"])
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        stage = Stage(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with run_lock(stage.run_dir):
            return args.fn(stage, args)
    except (AuthError, TransportError, RetriesExhausted, UnscriptedRequest) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InvariantViolation, ParseError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IntentweaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
