import pytest

from intentweave.errors import BudgetExhausted
from intentweave.gateway import FunctionBackend, Gateway, ScriptEntry, mock_backend
from intentweave.model import Query
from intentweave.preprocess import make_query
from intentweave.synth_gen import (
    CELLS,
    FewShots,
    GenSpec,
    LabelDescription,
    cell_name,
    generate_batch,
    generate_label_description,
    load_human_descriptions,
    load_synthetic_corpus,
    run_generation,
    sample_few_shots,
    save_synthetic_corpus,
)

from conftest import description_yaml, utterance_json


def train_fixture(n_per_label=40, labels=("payBill", "viewStatement")) -> list[Query]:
    rows = []
    for label in labels:
        for i in range(n_per_label):
            rows.append(make_query(f"{label} utterance {i}", "proxy_labeled", label=label))
    return rows


class TestGenSpec:
    def test_total_divisible(self):
        with pytest.raises(ValueError):
            GenSpec(label="x", total=101, batch_size=5)

    def test_batches(self):
        assert GenSpec(label="x").n_batches == 20


class TestLabelDescription:
    def test_scripted_payload(self):
        gateway = Gateway(mock_backend([ScriptEntry(response=description_yaml(), tag="description")]))
        desc = generate_label_description(gateway, "payBill", ["pay my bill"])
        assert desc.source == "synthetic"
        assert desc.keywords
        assert desc.description

    def test_missing_keywords_retries(self):
        incomplete = ('customer_need: "x"\nreflection: "r"\ndescription: "d"\n'
                      'explanation: "e"\n')
        gateway = Gateway(mock_backend([
            ScriptEntry(response=incomplete, tag="description"),
            ScriptEntry(response=description_yaml(), tag="description"),
        ]))
        desc = generate_label_description(gateway, "payBill", ["pay my bill"])
        assert desc.keywords
        assert len(gateway.backend.calls) == 2

    def test_budget_exhausted(self):
        gateway = Gateway(mock_backend([ScriptEntry(response="not yaml at all", tag="description",
                                                    repeat=True)]))
        with pytest.raises(BudgetExhausted):
            generate_label_description(gateway, "payBill", ["pay my bill"], budget=2)

    def test_deterministic_under_mock(self):
        def run():
            gateway = Gateway(mock_backend([ScriptEntry(response=description_yaml(),
                                                        tag="description")]))
            return generate_label_description(gateway, "payBill", ["pay my bill"])
        assert run() == run()

    def test_synthetic_requires_keywords(self):
        with pytest.raises(ValueError):
            LabelDescription(label="x", description="d", keywords=[], source="synthetic")


class TestFewShots:
    def test_k_distinct_rows(self):
        shots = sample_few_shots(train_fixture(), k=10, seed=1)
        assert len(shots.queries) == 10
        assert len(set(shots.ids)) == 10
        assert not shots.short_supply

    def test_in_class_short_supply(self):
        train = train_fixture(n_per_label=4)
        shots = sample_few_shots(train, k=10, seed=1, scope="in_class", label="payBill")
        assert len(shots.queries) == 4
        assert shots.short_supply
        assert all(q.label == "payBill" for q in shots.queries)

    def test_same_seed_identical(self):
        train = train_fixture()
        a = sample_few_shots(train, seed=7)
        b = sample_few_shots(train, seed=7)
        assert a.ids == b.ids

    def test_exclusion_list_subset_of_train(self):
        train = train_fixture()
        shots = sample_few_shots(train, seed=3)
        train_ids = {q.id for q in train}
        assert set(shots.ids) <= train_ids


def human_desc(label="payBill") -> LabelDescription:
    return LabelDescription(label=label, description="pay a bill", keywords=["pay"],
                            source="human")


class TestGenerateBatch:
    def spec(self):
        return GenSpec(label="payBill", description_source="human", batch_size=5, total=100)

    def shots(self):
        train = train_fixture()
        return sample_few_shots(train, seed=1), sample_few_shots(train, seed=2, scope="in_class",
                                                                 label="payBill")

    def test_five_in_order(self):
        cross, in_class = self.shots()
        gateway = Gateway(mock_backend([
            ScriptEntry(response=utterance_json([f"pay bill {i}" for i in range(5)]),
                        tag="utterance")]))
        batch = generate_batch(gateway, self.spec(), human_desc(), cross, in_class, batch_id=0)
        assert [g.utterance for g in batch] == [f"pay bill {i}" for i in range(5)]
        assert [g.position_in_batch for g in batch] == list(range(5))
        assert all(g.reasoning and g.explanation for g in batch)

    def test_intra_batch_duplicate_retries(self):
        cross, in_class = self.shots()
        dup = utterance_json(["same", "same", "c", "d", "e"])
        ok = utterance_json(["a", "b", "c", "d", "e"])
        gateway = Gateway(mock_backend([
            ScriptEntry(response=dup, tag="utterance"),
            ScriptEntry(response=ok, tag="utterance"),
        ]))
        batch = generate_batch(gateway, self.spec(), human_desc(), cross, in_class, batch_id=0)
        assert len(gateway.backend.calls) == 2
        assert len(batch) == 5

    def test_wrong_count_retries(self):
        cross, in_class = self.shots()
        short = utterance_json(["a", "b", "c"])
        ok = utterance_json(["a", "b", "c", "d", "e"])
        gateway = Gateway(mock_backend([
            ScriptEntry(response=short, tag="utterance"),
            ScriptEntry(response=ok, tag="utterance"),
        ]))
        batch = generate_batch(gateway, self.spec(), human_desc(), cross, in_class, batch_id=0)
        assert len(batch) == 5

    def test_description_source_mismatch(self):
        cross, in_class = self.shots()
        gateway = Gateway(mock_backend([ScriptEntry(response="x", tag="utterance")]))
        synth = LabelDescription(label="payBill", description="d", keywords=["k"],
                                 source="synthetic")
        with pytest.raises(ValueError):
            generate_batch(gateway, self.spec(), synth, cross, in_class, batch_id=0)


def counting_backend():
    """Backend yielding unique utterances per (label, batch) from the prompt."""
    counters = {}

    def respond(req):
        if req.request_tag == "description":
            return description_yaml()
        label = next(ln for ln in req.user_prompt.splitlines()
                     if ln.startswith("User Intent:")).split('"')[1]
        counters[label] = counters.get(label, 0) + 1
        base = counters[label] * 10
        return utterance_json([f"{label} synthetic {base + i}" for i in range(5)], label=label)

    return FunctionBackend(respond)


class TestRunGeneration:
    LABELS = ("payBill", "viewStatement")

    def run(self, total=20):
        gateway = Gateway(counting_backend())
        defaults = GenSpec(label="", total=total, batch_size=5)
        return run_generation(gateway, list(self.LABELS), train_fixture(),
                              {l: human_desc(l) for l in self.LABELS},
                              defaults=defaults, seed=11)

    def test_two_labels_four_cells(self):
        run = self.run()
        assert set(run.records) == {cell_name(ic, ds) for (sm, ds) in CELLS
                                    for ic in [sm == "with_in_class"]}
        for cell, records in run.records.items():
            assert len(records) == 2 * 20
            for label in self.LABELS:
                rows = [r for r in records if r.label == label]
                assert len(rows) == 20
                assert sorted({r.batch_id for r in rows}) == list(range(4))

    def test_every_record_has_reasoning_and_explanation(self):
        run = self.run()
        for records in run.records.values():
            for r in records:
                assert r.reasoning and r.explanation

    def test_exclusions_cover_all_cells_shots(self):
        run = self.run()
        assert run.excluded_ids
        train_ids = {q.id for q in train_fixture()}
        assert set(run.excluded_ids) <= train_ids

    def test_in_class_block_only_in_half_the_cells(self):
        gateway = Gateway(counting_backend())
        defaults = GenSpec(label="", total=10, batch_size=5)
        captured = []
        original = gateway.backend.fn

        def spy(req):
            captured.append((req.request_tag, req.user_prompt))
            return original(req)

        gateway.backend.fn = spy
        run_generation(gateway, ["payBill"], train_fixture(), {"payBill": human_desc()},
                       defaults=defaults, seed=1)
        utterance_prompts = [p for tag, p in captured if tag == "utterance"]
        with_block = [p for p in utterance_prompts if "Few-Shot Specific Examples:" in p]
        assert len(with_block) == len(utterance_prompts) // 2

    def test_byte_reproducible(self, tmp_path):
        a, b = self.run(), self.run()
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        cell = cell_name(True, "human")
        save_synthetic_corpus(a.records[cell], pa)
        save_synthetic_corpus(b.records[cell], pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_corpus_roundtrip(self, tmp_path):
        run = self.run()
        cell = cell_name(False, "human")
        path = tmp_path / "cell.jsonl"
        save_synthetic_corpus(run.records[cell], path)
        loaded = load_synthetic_corpus(path)
        assert loaded == run.records[cell]

    def test_missing_human_description_is_error(self):
        gateway = Gateway(counting_backend())
        with pytest.raises(KeyError):
            run_generation(gateway, ["payBill"], train_fixture(), {},
                           defaults=GenSpec(label="", total=5, batch_size=5), seed=1)

    def test_human_description_file_roundtrip(self, tmp_path):
        path = tmp_path / "descs.jsonl"
        path.write_text('{"label": "payBill", "description": "pay a bill", "keywords": ["pay"]}\n')
        loaded = load_human_descriptions(path)
        assert loaded["payBill"].source == "human"
