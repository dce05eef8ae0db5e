import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from intentweave.errors import ConflictingMerge, InvariantViolation, ParseError
from intentweave.model import (
    AuditLog,
    Corpus,
    Intent,
    IntentSet,
    diff_intent_sets,
    load_intent_set,
    query_id,
    save_intent_set,
)
from intentweave.preprocess import make_query


def make_set(*intents: Intent) -> IntentSet:
    s = IntentSet()
    if intents:
        s.add(list(intents), "t0")
    return s


def intent(topic="a", subtopic="b", examples=None, relevance=50, provenance="seed",
           status="active") -> Intent:
    return Intent(topic, f"{topic} desc", subtopic, f"{subtopic} desc",
                  examples if examples is not None else ["x one", "x two"],
                  relevance, provenance, status)


class TestPersistence:
    def test_empty_set_roundtrip(self, tmp_path):
        path = tmp_path / "set.jsonl"
        save_intent_set(IntentSet(), path)
        loaded = load_intent_set(path)
        assert len(loaded) == 0
        assert loaded.version == 0

    def test_checking_account_intent_roundtrip(self, tmp_path):
        s = make_set(Intent(
            "Open Account",
            "Customer inquiries and actions related to opening and managing various types of accounts.",
            "Open Checking Account",
            "Inquiries and actions related to opening a new checking account.",
            ["Open checking account", "Open new checking account"],
            98, "generated"))
        path = tmp_path / "set.jsonl"
        save_intent_set(s, path)
        assert load_intent_set(path).deep_equals(s)
        # byte-identical on re-save
        first = path.read_bytes()
        save_intent_set(load_intent_set(path), path)
        assert path.read_bytes() == first

    def test_duplicate_key_rejected_on_load(self, tmp_path):
        s = make_set(intent())
        path = tmp_path / "set.jsonl"
        save_intent_set(s, path)
        record = path.read_text().splitlines()[1]
        path.write_text(path.read_text() + record + "\n")
        with pytest.raises(InvariantViolation) as err:
            load_intent_set(path)
        assert err.value.invariant == "unique_key"

    def test_relevance_range_rejected_on_load(self, tmp_path):
        path = tmp_path / "set.jsonl"
        save_intent_set(make_set(intent()), path)
        path.write_text(path.read_text().replace('"relevance": 50', '"relevance": 150'))
        with pytest.raises(InvariantViolation) as err:
            load_intent_set(path)
        assert err.value.invariant == "relevance_range"

    def test_min_examples_invariant(self, tmp_path):
        path = tmp_path / "set.jsonl"
        save_intent_set(make_set(intent(provenance="generated")), path)
        text = path.read_text().replace('["x one", "x two"]', '["x one"]')
        path.write_text(text)
        with pytest.raises(InvariantViolation) as err:
            load_intent_set(path)
        assert err.value.invariant == "min_examples"

    def test_missing_header_is_parse_error(self, tmp_path):
        path = tmp_path / "set.jsonl"
        path.write_text('{"kind": "intent"}\n')
        with pytest.raises(ParseError):
            load_intent_set(path)

    def test_bad_enum_is_parse_error(self, tmp_path):
        path = tmp_path / "set.jsonl"
        save_intent_set(make_set(intent()), path)
        path.write_text(path.read_text().replace('"provenance": "seed"', '"provenance": "typo"'))
        with pytest.raises(ParseError) as err:
            load_intent_set(path)
        assert err.value.reason == "bad_enum"

    def test_version_preserved(self, tmp_path):
        s = make_set(intent())
        s.add([intent(subtopic="c")], "t1")
        path = tmp_path / "set.jsonl"
        save_intent_set(s, path)
        assert load_intent_set(path).version == 2

    def test_278_intent_roundtrip(self, tmp_path):
        s = IntentSet()
        s.add([intent(topic=f"topic{i // 10}", subtopic=f"sub{i}",
                      examples=[f"example {i} a", f"example {i} b"],
                      relevance=i % 101, provenance="generated")
               for i in range(278)], "bulk")
        path = tmp_path / "set.jsonl"
        save_intent_set(s, path)
        assert load_intent_set(path).deep_equals(s)


_label = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
_example = st.text(alphabet="abc xyz", min_size=1, max_size=12)


@st.composite
def intent_sets(draw):
    n = draw(st.integers(min_value=0, max_value=6))
    s = IntentSet()
    keys = set()
    batch = []
    for i in range(n):
        topic = draw(_label)
        subtopic = f"{draw(_label)}{i}"
        if (topic, subtopic) in keys:
            continue
        keys.add((topic, subtopic))
        provenance = draw(st.sampled_from(["seed", "generated", "proposed"]))
        min_ex = 2 if provenance == "generated" else 1
        examples = draw(st.lists(_example, min_size=min_ex, max_size=4, unique=True))
        batch.append(Intent(topic, "td", subtopic, "sd", examples,
                            draw(st.integers(0, 100)), provenance))
    if batch:
        s.add(batch, "gen")
    return s


class TestRoundTripProperty:
    @settings(max_examples=60, deadline=None)
    @given(intent_sets())
    def test_load_save_identity(self, tmp_path_factory, s):
        path = tmp_path_factory.mktemp("rt") / "set.jsonl"
        save_intent_set(s, path)
        assert load_intent_set(path).deep_equals(s)


class TestIntentSet:
    def test_version_strictly_increases(self):
        s = make_set(intent())
        v0 = s.version
        s.add([intent(subtopic="c")], "t1")
        assert s.version == v0 + 1
        s.extend_examples(("a", "b"), ["x three"], "t2")
        assert s.version == v0 + 2

    def test_duplicate_add_rejected(self):
        s = make_set(intent())
        with pytest.raises(InvariantViolation):
            s.add([intent()], "t1")

    def test_merge_retires_and_folds_examples(self):
        s = make_set(intent(subtopic="x", examples=["one a", "one b"]),
                     intent(subtopic="y", examples=["two a", "two b"]))
        s.merge(("a", "x"), ("a", "y"), "m1")
        kept = s.get("a", "x")
        gone = s.get("a", "y")
        assert gone.status == "retired"
        assert gone.examples == ["two a", "two b"]        # preserved on the retired record
        assert kept.examples == ["one a", "one b", "two a", "two b"]
        assert kept.provenance == "merged"
        assert len(s.active()) == 1

    def test_merge_retired_again_conflicts(self):
        s = make_set(intent(subtopic="x"), intent(subtopic="y"), intent(subtopic="z"))
        s.merge(("a", "x"), ("a", "y"), "m1")
        with pytest.raises(ConflictingMerge):
            s.merge(("a", "z"), ("a", "y"), "m2")

    def test_cross_topic_merge(self):
        s = make_set(intent(topic="a", subtopic="x"), intent(topic="b", subtopic="z"))
        before = len(s.active())
        s.merge(("a", "x"), ("b", "z"), "m1")
        assert len(s.active()) == before - 1


class TestDiff:
    def test_identical_sets_empty_diff(self, two_topic_set):
        assert diff_intent_sets(two_topic_set, two_topic_set).is_empty()

    def test_added_intent(self, two_topic_set):
        other = make_set(*[dataclasses.replace(i, examples=list(i.examples))
                           for i in two_topic_set])
        other.add([intent(topic="new", subtopic="thing")], "t9")
        d = diff_intent_sets(two_topic_set, other)
        assert [i.key for i in d.added] == [("new", "thing")]
        assert not d.removed and not d.modified

    def test_merge_shows_removed_and_modified(self):
        a = make_set(intent(subtopic="x", examples=["e1", "e2"]),
                     intent(subtopic="y", examples=["e3", "e4"]))
        b = make_set(intent(subtopic="x", examples=["e1", "e2"]),
                     intent(subtopic="y", examples=["e3", "e4"]))
        b.merge(("a", "x"), ("a", "y"), "m")
        d = diff_intent_sets(a, b)
        assert not d.added and not d.removed
        assert {before.key for before, _ in d.modified} == {("a", "x"), ("a", "y")}

    def test_apply_diff_yields_target_collection(self, two_topic_set):
        other = make_set(intent(topic="q", subtopic="r"))
        d = diff_intent_sets(two_topic_set, other)
        assert d.apply(two_topic_set.snapshot()) == other.snapshot()


class TestCorpusAndAudit:
    def test_query_id_stable(self):
        q = make_query("Open  Account", "unlabeled")
        assert q.id == query_id("open account")

    def test_corpus_dedupes_on_append(self):
        c = Corpus([make_query("a", "unlabeled"), make_query("A ", "unlabeled"),
                    make_query("b", "unlabeled")])
        assert [q.normalized for q in c] == ["a", "b"]

    def test_audit_append_only_counts(self, tmp_path):
        log = AuditLog(tmp_path / "audit.jsonl")
        for i in range(3):
            log.emit("note", "test", verdict=str(i))
        assert len(log) == 3
        lines = (tmp_path / "audit.jsonl").read_text().splitlines()
        assert len(lines) == 3
