"""Evaluation: referring-expression accuracy and zero-shot QA.

Execution scores are log selection probabilities (always <= 0), so the raw
sigmoid threshold of 0.8 used for interactive yes/no answers can never fire:
sigmoid(score <= 0) <= 0.5.  Evaluation therefore uses the calibrated
threshold 0.8 / 1.8 = 4/9, which is exactly "selection probability
exp(score) > 0.8" pushed through x -> sigmoid(x) on x <= 0 inputs
(sigmoid(x) = 1 / (1 + e^{-x}) > 4/9  <=>  e^x > 0.8 for x <= 0).

Metric functions are pure: they consume lists of per-instance record dicts
(the same dicts written to JSONL) and nothing else.
"""
from __future__ import annotations

import json
from typing import Iterable

import torch

from . import dsl
from .data import QAInstance, group_by_scene
from .executor import run_program
from .scene import Scene, TaskInstance
from .vocab import Vocabulary

CALIBRATED_QA_THRESHOLD = 0.8 / 1.8


def _features_for(scene: Scene, model, vocabulary: Vocabulary):
    if model is None:
        from .features import OracleFeatures
        return OracleFeatures(scene, vocabulary)
    from .encoder import LearnedFeatures
    return LearnedFeatures.from_scene(model, scene)


def evaluate_rec(instances: list[TaskInstance], scenes: dict[int, Scene],
                 vocabulary: Vocabulary, model=None,
                 collect_traces: bool = False) -> list[dict]:
    """Execute every instance; model=None means oracle features.

    Returns one record per instance:
    {scene_seed, utterance, program, family, view_dependent, target,
     predicted, correct, empty} (+trace when collect_traces).
    """
    records = []
    with torch.no_grad():
        for scene, group in group_by_scene(instances, scenes):
            features = _features_for(scene, model, vocabulary)
            for inst in group:
                program = dsl.lower_anchor(
                    dsl.parse_program(inst.program_text), vocabulary)
                _, trace = run_program(program, features,
                                       collect_trace=collect_traces)
                record = {
                    "scene_seed": inst.scene_seed,
                    "utterance": inst.utterance,
                    "program": inst.program_text,
                    "family": inst.family,
                    "view_dependent": inst.view_dependent,
                    "target": inst.target,
                    "predicted": trace.target,
                    "correct": bool(trace.target == inst.target),
                    "empty": bool(trace.empty_denotation),
                }
                if collect_traces:
                    record["trace"] = trace.to_json()
                records.append(record)
    return records


def rec_metrics(records: list[dict]) -> dict:
    def acc(rows):
        return sum(r["correct"] for r in rows) / len(rows) if rows else None

    by_family = {}
    for record in records:
        by_family.setdefault(record["family"], []).append(record)
    view = [r for r in records if r["view_dependent"]]
    return {
        "n": len(records),
        "overall": acc(records),
        "view_dependent": acc(view),
        "n_view_dependent": len(view),
        "by_family": {f: acc(rows) for f, rows in sorted(by_family.items())},
        "empty_rate": (sum(r["empty"] for r in records) / len(records)
                       if records else None),
    }


def evaluate_qa(items: list[QAInstance], scenes: dict[int, Scene],
                vocabulary: Vocabulary, model=None,
                qa_threshold: float = CALIBRATED_QA_THRESHOLD) -> list[dict]:
    """Answer every question by exact string match; model=None = oracle."""
    by_seed: dict[int, list[QAInstance]] = {}
    for item in items:
        by_seed.setdefault(item.scene_seed, []).append(item)
    records = []
    with torch.no_grad():
        for seed in sorted(by_seed):
            features = _features_for(scenes[seed], model, vocabulary)
            for item in by_seed[seed]:
                program = dsl.lower_anchor(
                    dsl.parse_program(item.program_text), vocabulary)
                answer, _ = run_program(program, features,
                                        qa_threshold=qa_threshold,
                                        collect_trace=False)
                records.append({
                    "scene_seed": item.scene_seed,
                    "question": item.question,
                    "program": item.program_text,
                    "qtype": item.qtype,
                    "view_dependent": item.view_dependent,
                    "answer": item.answer,
                    "predicted": answer.text,
                    "correct": bool(answer.text == item.answer),
                })
    return records


QA_BREAKDOWN = ("All", "Exist", "Count", "Obj", "Rel")
_QA_LABEL = {"exist": "Exist", "count": "Count", "object": "Obj",
             "relation": "Rel"}


def qa_metrics(records: list[dict]) -> dict:
    def acc(rows):
        return sum(r["correct"] for r in rows) / len(rows) if rows else None

    breakdown = {"All": acc(records)}
    for qtype, label in _QA_LABEL.items():
        breakdown[label] = acc([r for r in records if r["qtype"] == qtype])
    return {"n": len(records), "breakdown": breakdown}


def write_records(path: str, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_records(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
