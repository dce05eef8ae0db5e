import json
import socket

import pytest

from intentweave import cli

from conftest import build_workspace


@pytest.fixture
def no_network(monkeypatch):
    def guard(*args, **kwargs):
        raise AssertionError("network access attempted during a --mock run")

    monkeypatch.setattr(socket, "socket", guard)
    monkeypatch.setattr(socket, "create_connection", guard)


@pytest.fixture
def workspace(tmp_path):
    build_workspace(tmp_path)
    return tmp_path


def run(workspace, *argv) -> int:
    run_dir = workspace / "run"
    base = ["--run-dir", str(run_dir), "--mock", str(workspace / "script.json"),
            "--config", str(workspace / "config.json")]
    return cli.main([argv[0], *base, *argv[1:]])


def preprocess_all(workspace):
    assert run(workspace, "preprocess", "--input", str(workspace / "proxy.tsv"),
               "--name", "proxy", "--source", "proxy_labeled", "--labeled") == 0
    assert run(workspace, "preprocess", "--input", str(workspace / "unlabeled.txt"),
               "--name", "unlabeled", "--source", "unlabeled") == 0
    assert run(workspace, "preprocess", "--input", str(workspace / "train.tsv"),
               "--name", "train", "--source", "proxy_labeled", "--labeled") == 0
    assert run(workspace, "preprocess", "--input", str(workspace / "test.tsv"),
               "--name", "test", "--source", "proxy_labeled", "--labeled") == 0


class TestPipelineOffline:
    def test_full_pipeline_no_network(self, workspace, no_network):
        run_dir = workspace / "run"
        preprocess_all(workspace)

        assert run(workspace, "hte", "--topics", str(workspace / "topics.json"),
                   "--corpus", str(run_dir / "corpus_proxy.jsonl")) == 0
        assert (run_dir / "intent_set_hte.jsonl").exists()
        assert (run_dir / "merges_pending.jsonl").exists()
        assert (run_dir / "audit.jsonl").exists()

        assert run(workspace, "review-merges", "--accept-prefix", "1") == 0
        from intentweave.model import load_intent_set
        reviewed = load_intent_set(run_dir / "intent_set_reviewed.jsonl")
        assert len(reviewed.active()) == 3

        assert run(workspace, "tgb", "--intent-set", str(run_dir / "intent_set_reviewed.jsonl"),
                   "--corpus", str(run_dir / "corpus_unlabeled.jsonl")) == 0
        final = load_intent_set(run_dir / "intent_set_tgb.jsonl")
        assert final.get("cardSecurity", "freezeCard") is not None

        assert run(workspace, "gen-utterances", "--train", str(run_dir / "corpus_train.jsonl"),
                   "--human-descriptions", str(workspace / "human_descriptions.jsonl")) == 0
        synth_dir = run_dir / "synth"
        assert len(list(synth_dir.glob("*.jsonl"))) == 4

        assert run(workspace, "eval-topics", "--intent-set",
                   str(run_dir / "intent_set_tgb.jsonl"),
                   "--corpus", str(run_dir / "corpus_proxy.jsonl")) == 0
        assert (run_dir / "reports" / "topic_eval.json").exists()

        assert run(workspace, "eval-intrinsic", "--baseline", str(run_dir / "corpus_train.jsonl"),
                   "--synth-dir", str(synth_dir), "--judge") == 0
        intrinsic = json.loads((run_dir / "reports" / "intrinsic.json").read_text())
        assert intrinsic["rows"]["real_baseline"]["discrimination"] is None

        assert run(workspace, "eval-extrinsic", "--train", str(run_dir / "corpus_train.jsonl"),
                   "--test", str(run_dir / "corpus_test.jsonl"),
                   "--synth-dir", str(synth_dir),
                   "--exclusions", str(run_dir / "fewshot_exclusions.json")) == 0
        extrinsic = json.loads((run_dir / "reports" / "extrinsic.json").read_text())
        assert "baseline" in extrinsic

        assert run(workspace, "export", "--train", str(run_dir / "corpus_train.jsonl"),
                   "--test", str(run_dir / "corpus_test.jsonl"),
                   "--synth-dir", str(synth_dir),
                   "--exclusions", str(run_dir / "fewshot_exclusions.json")) == 0
        assert len(list((run_dir / "exports").glob("*.jsonl"))) == 4

        assert run(workspace, "report", "--kind", "topics") == 0
        assert run(workspace, "report", "--kind", "extrinsic") == 0

        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest        # every stage registered its outputs against the config digest

    def test_gen_descriptions(self, workspace, no_network):
        preprocess_all(workspace)
        run_dir = workspace / "run"
        assert run(workspace, "gen-descriptions", "--train",
                   str(run_dir / "corpus_train.jsonl")) == 0
        lines = (run_dir / "descriptions.jsonl").read_text().splitlines()
        assert len(lines) == 2

    def test_hte_rerun_byte_identical(self, workspace, no_network):
        preprocess_all(workspace)
        run_dir = workspace / "run"
        assert run(workspace, "hte", "--topics", str(workspace / "topics.json"),
                   "--corpus", str(run_dir / "corpus_proxy.jsonl")) == 0
        first = (run_dir / "intent_set_hte.jsonl").read_bytes()
        assert run(workspace, "hte", "--topics", str(workspace / "topics.json"),
                   "--corpus", str(run_dir / "corpus_proxy.jsonl")) == 0
        assert (run_dir / "intent_set_hte.jsonl").read_bytes() == first


class TestExitCodes:
    def test_missing_input_is_data_error(self, workspace):
        assert run(workspace, "preprocess", "--input", str(workspace / "nope.txt"),
                   "--name", "x") == cli.EXIT_DATA

    def test_bad_config_key(self, workspace, tmp_path):
        bad = workspace / "bad_config.json"
        bad.write_text('{"no_such_key": 1}')
        code = cli.main(["preprocess", "--run-dir", str(workspace / "run2"),
                         "--config", str(bad), "--input", str(workspace / "proxy.tsv"),
                         "--name", "x"])
        assert code == cli.EXIT_CONFIG

    def test_unscripted_request_is_backend_error(self, workspace):
        preprocess_all(workspace)
        script = workspace / "script.json"
        script.write_text(json.dumps([{"tag": "nothing", "response": "x"}]))
        code = run(workspace, "hte", "--topics", str(workspace / "topics.json"),
                   "--corpus", str(workspace / "run" / "corpus_proxy.jsonl"))
        assert code == cli.EXIT_BACKEND

    def test_invalid_intent_set_is_validation_error(self, workspace):
        run_dir = workspace / "run"
        run_dir.mkdir(exist_ok=True)
        bad_set = run_dir / "bad.jsonl"
        bad_set.write_text('{"kind": "header", "schema": "intentset/1", "version": 0, "history": []}\n'
                           '{"kind": "intent", "topic": "a", "topic_description": "d", '
                           '"subtopic": "b", "subtopic_description": "d", "examples": ["x"], '
                           '"relevance": 150, "provenance": "seed", "status": "active"}\n')
        code = run(workspace, "tgb", "--intent-set", str(bad_set),
                   "--corpus", str(run_dir / "nope.jsonl"))
        assert code == cli.EXIT_VALIDATION

    def test_lock_contention(self, workspace):
        run_dir = workspace / "run"
        run_dir.mkdir(exist_ok=True)
        (run_dir / ".lock").write_text("12345")
        code = run(workspace, "report", "--kind", "topics")
        assert code == cli.EXIT_DATA
        (run_dir / ".lock").unlink()
