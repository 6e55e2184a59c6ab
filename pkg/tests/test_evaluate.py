import pytest

from refexec.data import build_qa_dataset
from refexec.encoder import EncoderConfig, GroundingModel
from refexec.evaluate import (CALIBRATED_QA_THRESHOLD, evaluate_qa,
                              evaluate_rec, qa_metrics, read_records,
                              rec_metrics, write_records)


@pytest.fixture(scope="module")
def oracle_records(tiny_splits):
    return evaluate_rec(tiny_splits.test, tiny_splits.scenes,
                        tiny_splits.vocabulary)


def test_calibrated_threshold_value():
    assert CALIBRATED_QA_THRESHOLD == pytest.approx(4 / 9)


def test_oracle_rec_is_perfect(oracle_records, tiny_splits):
    assert len(oracle_records) == len(tiny_splits.test)
    assert all(r["correct"] for r in oracle_records)
    assert all(not r["empty"] for r in oracle_records)
    metrics = rec_metrics(oracle_records)
    assert metrics["overall"] == 1.0
    assert metrics["view_dependent"] == 1.0
    assert metrics["empty_rate"] == 0.0
    assert all(v == 1.0 for v in metrics["by_family"].values())


def test_rec_metrics_counts(oracle_records):
    metrics = rec_metrics(oracle_records)
    assert metrics["n"] == len(oracle_records)
    assert metrics["n_view_dependent"] == sum(
        r["view_dependent"] for r in oracle_records)
    assert set(metrics["by_family"]) == {r["family"] for r in oracle_records}


def test_rec_metrics_empty_input():
    metrics = rec_metrics([])
    assert metrics["n"] == 0
    assert metrics["overall"] is None
    assert metrics["view_dependent"] is None


def test_metrics_recomputable_from_jsonl(tmp_path, oracle_records):
    path = str(tmp_path / "records.jsonl")
    write_records(path, oracle_records)
    loaded = read_records(path)
    assert loaded == oracle_records
    assert rec_metrics(loaded) == rec_metrics(oracle_records)


def test_traces_attached_on_request(tiny_splits):
    sample = tiny_splits.test[:5]
    records = evaluate_rec(sample, tiny_splits.scenes,
                           tiny_splits.vocabulary, collect_traces=True)
    for record in records:
        assert "trace" in record
        steps = record["trace"]["records"]
        assert steps and all("op" in s and "scores" in s for s in steps)
        assert record["trace"]["target"] == record["predicted"]


def test_random_model_rec_runs(tiny_splits):
    model = GroundingModel(tiny_splits.vocabulary, EncoderConfig(seed=9))
    sample = [i for i in tiny_splits.test[:12]]
    records = evaluate_rec(sample, tiny_splits.scenes,
                           tiny_splits.vocabulary, model=model)
    assert len(records) == len(sample)
    assert all(isinstance(r["correct"], bool) for r in records)
    assert all(0 <= r["predicted"] < tiny_splits.scenes[r["scene_seed"]].m
               for r in records)


# ---------------------------------------------------------------------------
# QA
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def qa_setup(tiny_corpus):
    scenes = {s: tiny_corpus.scenes[s] for s in sorted(tiny_corpus.scenes)[:10]}
    items = build_qa_dataset(list(scenes.values()), tiny_corpus.vocabulary,
                             n_items=24, seed=3)
    return items, scenes


def test_oracle_qa_is_perfect(qa_setup, tiny_corpus):
    items, scenes = qa_setup
    records = evaluate_qa(items, scenes, tiny_corpus.vocabulary)
    assert all(r["correct"] for r in records), \
        [r for r in records if not r["correct"]]
    metrics = qa_metrics(records)
    assert metrics["breakdown"]["All"] == 1.0
    for label in ("Exist", "Count", "Obj", "Rel"):
        assert metrics["breakdown"][label] == 1.0


def test_qa_breakdown_partition(qa_setup, tiny_corpus):
    items, scenes = qa_setup
    records = evaluate_qa(items, scenes, tiny_corpus.vocabulary)
    metrics = qa_metrics(records)
    assert list(metrics["breakdown"]) == ["All", "Exist", "Count", "Obj", "Rel"]
    parts = [sum(1 for r in records if r["qtype"] == q)
             for q in ("exist", "count", "object", "relation")]
    assert sum(parts) == metrics["n"] == len(items)


def test_qa_raw_threshold_breaks_oracle_exist(qa_setup, tiny_corpus):
    """The uncalibrated 0.8 sigmoid threshold can never answer yes on
    log-space scores; every positive exist item must then fail."""
    items, scenes = qa_setup
    positives = [i for i in items if i.qtype == "exist" and i.answer == "yes"]
    assert positives
    records = evaluate_qa(positives, scenes, tiny_corpus.vocabulary,
                          qa_threshold=0.8)
    assert all(r["predicted"] == "no" for r in records)
