import json
import os

import pytest
from click.testing import CliRunner

from refexec.cli import main
from refexec.vocab import Vocabulary


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory, runner):
    path = str(tmp_path_factory.mktemp("cli") / "ds")
    result = runner.invoke(main, [
        "generate", "--out", path, "--scenes", "16", "--instances", "4",
        "--qa", "8", "--seed", "11"])
    assert result.exit_code == 0, result.output
    return path


def test_generate_writes_dataset(dataset_dir):
    with open(os.path.join(dataset_dir, "meta.json")) as fh:
        meta = json.load(fh)
    assert meta["counts"]["train"] > 0
    for name in ("meta.json", "configs.json", "scenes.jsonl", "train.jsonl",
                 "val.jsonl", "test.jsonl", "qa.jsonl"):
        assert os.path.exists(os.path.join(dataset_dir, name)), name


def test_generate_summary_json(runner, tmp_path):
    out = str(tmp_path / "ds2")
    result = runner.invoke(main, [
        "generate", "--out", out, "--scenes", "4", "--instances", "4"])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output.strip().splitlines()[-1])
    assert summary["scenes"] == 4
    assert summary["train"] + summary["val"] + summary["test"] == 16
    assert summary["qa"] == 0


def test_split_command(runner, dataset_dir, tmp_path):
    out = str(tmp_path / "pairs")
    result = runner.invoke(main, [
        "split", "--data", dataset_dir, "--out", out, "--split", "pairs"])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output.strip().splitlines()[-1])
    assert summary["train"] > 0 and summary["test"] > 0
    assert os.path.exists(os.path.join(out, "train.jsonl"))


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, runner, dataset_dir):
    base = tmp_path_factory.mktemp("ckpt")
    ckpt = str(base / "model.ns3d")
    report = str(base / "report.json")
    result = runner.invoke(main, [
        "train", "--data", dataset_dir, "--out", ckpt,
        "--stage1-epochs", "2", "--stage2-epochs", "1", "--quiet",
        "--report", report])
    assert result.exit_code == 0, result.output
    return ckpt, report


def test_train_writes_checkpoint_and_report(checkpoint):
    ckpt, report_path = checkpoint
    assert os.path.exists(ckpt)
    with open(report_path) as fh:
        report = json.load(fh)
    assert report["stage1_epochs"] == 2
    assert report["stage2_epochs"] == 1
    stages = [e["stage"] for e in report["epochs"]]
    assert stages == [1, 1, 2]
    assert report["config"]["stage1_epochs"] == 2


def test_eval_oracle_is_perfect(runner, dataset_dir, tmp_path):
    records_path = str(tmp_path / "records.jsonl")
    result = runner.invoke(main, [
        "eval", "--data", dataset_dir, "--records", records_path])
    assert result.exit_code == 0, result.output
    metrics = json.loads(result.output)
    assert metrics["overall"] == 1.0
    with open(records_path) as fh:
        assert len(fh.readlines()) == metrics["n"]


def test_eval_with_trained_model(runner, dataset_dir, checkpoint):
    ckpt, _ = checkpoint
    result = runner.invoke(main, [
        "eval", "--data", dataset_dir, "--model", ckpt, "--split", "val"])
    assert result.exit_code == 0, result.output
    metrics = json.loads(result.output)
    assert 0.0 <= metrics["overall"] <= 1.0


def test_eval_requires_data_or_acceptance(runner):
    result = runner.invoke(main, ["eval"])
    assert result.exit_code != 0
    assert "--data is required" in result.output


def test_qa_oracle(runner, dataset_dir):
    result = runner.invoke(main, ["qa", "--data", dataset_dir])
    assert result.exit_code == 0, result.output
    metrics = json.loads(result.output)
    assert metrics["breakdown"]["All"] == 1.0


def test_exec_query_program(runner, tmp_path):
    trace_path = str(tmp_path / "trace.json")
    result = runner.invoke(main, [
        "exec", "--program", "(query_count (filter chair))",
        "--scene-seed", "3", "--trace", trace_path])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["answer"].isdigit()
    assert out["scene_seed"] == 3
    with open(trace_path) as fh:
        trace = json.load(fh)
    assert trace["records"][-1]["op"] == "query"
    assert trace["records"][-1]["answer"] == out["answer"]


def test_exec_selection_program(runner, dataset_dir):
    with open(os.path.join(dataset_dir, "test.jsonl")) as fh:
        inst = json.loads(fh.readline())
    result = runner.invoke(main, [
        "exec", "--program", inst["program"], "--data", dataset_dir,
        "--scene-seed", str(inst["scene_seed"])])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["target"] == inst["target"]


def test_parse_template_utterance(runner, dataset_dir):
    with open(os.path.join(dataset_dir, "train.jsonl")) as fh:
        inst = json.loads(fh.readline())
    result = runner.invoke(main, ["parse", inst["utterance"]])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["program"] == inst["program"]
    assert out["view_dependent"] == inst["view_dependent"]


def test_parse_count_question(runner):
    result = runner.invoke(main, ["parse", "how many chairs are in the scene?"])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["program"] == "(query_count (filter (scene) chair))"
    assert out["view_dependent"] is False


def test_custom_vocab_flag(runner, tmp_path):
    vocab_path = str(tmp_path / "vocab.json")
    with open(vocab_path, "w") as fh:
        json.dump(Vocabulary().to_json(), fh)
    result = runner.invoke(main, [
        "--vocab", vocab_path, "parse", "how many beds are in the scene?"])
    assert result.exit_code == 0, result.output
    assert "query_count" in json.loads(result.output)["program"]