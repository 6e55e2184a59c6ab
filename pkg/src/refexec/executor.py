"""Differentiable program executor over log-probability score vectors.

A score vector holds one log-probability per scene object: the degree to
which that object is currently selected.  Operators combine scores with
min (conjunction) and softmax-weighted expectation (soft reference choice):

    scene                y_i = 0
    filter(x, c)         y_i = min(x_i, cat_c_i)
    relate(xt, xr, r)    y_i = min(xt_i, sum_j softmax(xr)_j * rel_r[i, j])
    ternary_relate       y_i = min(xt_i, sum_jk softmax(xr1)_j softmax(xr2)_k
                                           * trel[i, j, k])

An object never serves as its own reference: relate masks the diagonal and
ternary_relate masks i == j and i == k (j == k stays, since the spatial
reference and the view anchor are often the same object).  After every
operator, scores are clamped to [-SCORE_CLAMP, 0].  Ternary scores are
consumed in row chunks so no M^3 intermediate is ever materialized.

Query operators map a final score vector to an answer.  The yes/no and
count threshold follows max_i sigmoid(x_i) > t with t defaulting to
DEFAULT_QA_THRESHOLD; see `evaluate.CALIBRATED_QA_THRESHOLD` for the value
matched to log-probability score vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from . import dsl
from .relations import HARD_FALSE
from .vocab import Vocabulary

SCORE_CLAMP = 50.0
DEFAULT_QA_THRESHOLD = 0.8
# A node output whose best score is below this is treated as an empty
# denotation.  Valid for hard-false scales around -HARD_FALSE and reference
# sets built from category filters.
EMPTY_FLAG_THRESHOLD = -2.0
# Row chunk for ternary mixing; peak extra memory is TERNARY_CHUNK_ROWS * M^2.
TERNARY_CHUNK_ROWS = 32


class ExecutionError(ValueError):
    pass


@dataclass(frozen=True)
class Answer:
    kind: str                  # boolean | integer | category | relation | t_relation
    value: bool | int | str

    @property
    def text(self) -> str:
        if self.kind == "boolean":
            return "yes" if self.value else "no"
        return str(self.value)


@dataclass
class TraceRecord:
    op: str
    concept: str | None
    scores: list[float] | None
    answer: str | None
    empty: bool


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    target: int | None = None
    answer: Answer | None = None
    empty_denotation: bool = False
    ternary_peak_elements: int = 0

    def to_json(self) -> dict:
        return {
            "records": [
                {"op": r.op, "concept": r.concept, "scores": r.scores,
                 "answer": r.answer, "empty": r.empty}
                for r in self.records
            ],
            "target": self.target,
            "answer": self.answer.text if self.answer else None,
            "empty_denotation": self.empty_denotation,
            "ternary_peak_elements": self.ternary_peak_elements,
        }


class _ExecState:
    def __init__(self, features, qa_threshold: float, collect: bool):
        self.features = features
        self.qa_threshold = qa_threshold
        self.collect = collect
        self.trace = Trace()

    def record(self, op: str, concept: str | None, scores: torch.Tensor | None,
               answer: Answer | None = None) -> None:
        if not self.collect:
            return
        empty = scores is not None and bool(
            scores.detach().max().item() <= EMPTY_FLAG_THRESHOLD)
        if empty:
            self.trace.empty_denotation = True
        self.trace.records.append(TraceRecord(
            op=op,
            concept=concept,
            scores=None if scores is None else [float(v) for v in scores.detach()],
            answer=None if answer is None else answer.text,
            empty=empty,
        ))


def _clamp(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(x, min=-SCORE_CLAMP, max=0.0)


_EYE_CACHE: dict[int, torch.Tensor] = {}


def _eye(m: int) -> torch.Tensor:
    mask = _EYE_CACHE.get(m)
    if mask is None:
        mask = _EYE_CACHE.setdefault(m, torch.eye(m, dtype=torch.bool))
    return mask


def exec_scene(features) -> torch.Tensor:
    return torch.zeros(features.m, dtype=features.dtype)


def exec_filter(x: torch.Tensor, category_scores: torch.Tensor) -> torch.Tensor:
    return _clamp(torch.minimum(x, category_scores))


def _masked_relation(matrix: torch.Tensor) -> torch.Tensor:
    return torch.where(_eye(matrix.shape[0]),
                       torch.as_tensor(-HARD_FALSE, dtype=matrix.dtype), matrix)


def exec_relate(x_target: torch.Tensor, x_reference: torch.Tensor,
                relation_matrix: torch.Tensor) -> torch.Tensor:
    matrix = _masked_relation(relation_matrix)
    weights = torch.softmax(x_reference, dim=0)
    mixed = matrix @ weights
    return _clamp(torch.minimum(x_target, mixed))


def _ternary_mix(features, relation: str, w1: torch.Tensor, w2: torch.Tensor,
                 state: _ExecState | None = None) -> torch.Tensor:
    """sum_jk w1_j w2_k trel[i, j, k] with i==j and i==k masked, chunked over i."""
    m = features.m
    arange = torch.arange(m)
    pieces = []
    for start in range(0, m, TERNARY_CHUNK_ROWS):
        rows = arange[start:start + TERNARY_CHUNK_ROWS]
        chunk = features.ternary_rows(relation, rows)
        if state is not None:
            state.trace.ternary_peak_elements = max(
                state.trace.ternary_peak_elements, chunk.numel())
        hit_j = (arange[None, :] == rows[:, None])[:, :, None]   # i == j
        hit_k = (arange[None, :] == rows[:, None])[:, None, :]   # i == k
        chunk = torch.where(hit_j | hit_k,
                            torch.as_tensor(-HARD_FALSE, dtype=chunk.dtype), chunk)
        pieces.append(torch.einsum("cjk,j,k->c", chunk, w1, w2))
    return torch.cat(pieces)


def exec_ternary_relate(x_target: torch.Tensor, x_ref1: torch.Tensor,
                        x_ref2: torch.Tensor, features, relation: str,
                        state: _ExecState | None = None) -> torch.Tensor:
    w1 = torch.softmax(x_ref1, dim=0)
    w2 = torch.softmax(x_ref2, dim=0)
    mixed = _ternary_mix(features, relation, w1, w2, state)
    return _clamp(torch.minimum(x_target, mixed))


def exec_query_exist(x: torch.Tensor, threshold: float = DEFAULT_QA_THRESHOLD) -> Answer:
    present = torch.sigmoid(x) > threshold
    return Answer("boolean", bool(present.any().item()))


def exec_query_count(x: torch.Tensor, threshold: float = DEFAULT_QA_THRESHOLD) -> Answer:
    present = torch.sigmoid(x) > threshold
    return Answer("integer", int(present.sum().item()))


def exec_query_object(x: torch.Tensor, features) -> Answer:
    weights = torch.softmax(x, dim=0)
    scores = weights @ features.all_category_scores()
    idx = int(scores.detach().numpy().argmax())  # ties: lowest concept id
    return Answer("category", features.vocabulary.categories[idx])


def exec_query_relation(x_target: torch.Tensor, x_reference: torch.Tensor,
                        features) -> Answer:
    wt = torch.softmax(x_target, dim=0)
    wr = torch.softmax(x_reference, dim=0)
    scores = torch.stack([
        wt @ _masked_relation(features.relation_scores(name)) @ wr
        for name in features.vocabulary.binary_relations
    ])
    idx = int(scores.detach().numpy().argmax())
    return Answer("relation", features.vocabulary.binary_relations[idx])


def exec_query_t_relation(x_target: torch.Tensor, x_ref1: torch.Tensor,
                          x_ref2: torch.Tensor, features,
                          state: _ExecState | None = None) -> Answer:
    wt = torch.softmax(x_target, dim=0)
    w1 = torch.softmax(x_ref1, dim=0)
    w2 = torch.softmax(x_ref2, dim=0)
    scores = torch.stack([
        wt @ _ternary_mix(features, name, w1, w2, state)
        for name in features.vocabulary.ternary_relations
    ])
    idx = int(scores.detach().numpy().argmax())
    return Answer("t_relation", features.vocabulary.ternary_relations[idx])


def _eval_set(node: dsl.Node, state: _ExecState) -> torch.Tensor:
    features = state.features
    if isinstance(node, dsl.Scene):
        y = exec_scene(features)
        state.record("scene", None, y)
        return y
    if isinstance(node, dsl.Filter):
        x = _eval_set(node.source, state)
        y = exec_filter(x, features.category_scores(node.category))
        state.record("filter", node.category, y)
        return y
    if isinstance(node, dsl.Relate):
        xt = _eval_set(node.target, state)
        xr = _eval_set(node.reference, state)
        y = exec_relate(xt, xr, features.relation_scores(node.relation))
        state.record("relate", node.relation, y)
        return y
    if isinstance(node, dsl.TernaryRelate):
        xt = _eval_set(node.target, state)
        x1 = _eval_set(node.reference1, state)
        x2 = _eval_set(node.reference2, state)
        y = exec_ternary_relate(xt, x1, x2, features, node.relation, state)
        state.record("ternary_relate", node.relation, y)
        return y
    if isinstance(node, dsl.Anchor):
        raise ExecutionError(
            "anchor nodes must be lowered with dsl.lower_anchor before execution")
    raise ExecutionError(f"operator does not produce an object set: {node!r}")


def run_program(program: dsl.Node, features, *,
                qa_threshold: float = DEFAULT_QA_THRESHOLD,
                collect_trace: bool = True) -> tuple[Answer | torch.Tensor, Trace]:
    """Execute a typed, anchor-lowered program against a feature provider.

    Returns (score vector, trace) for object-set programs, with the argmax
    target index (lowest index on exact ties) stored on the trace; returns
    (Answer, trace) for query-rooted programs.  Raises ExecutionError for
    un-lowered anchors and TypecheckError when the program does not fit the
    provider's vocabulary.
    """
    if dsl.contains_anchor(program):
        raise ExecutionError(
            "anchor nodes must be lowered with dsl.lower_anchor before execution")
    dsl.typecheck(program, features.vocabulary)
    state = _ExecState(features, qa_threshold, collect_trace)

    if isinstance(node := program, dsl.QueryExist):
        x = _eval_set(node.source, state)
        ans = exec_query_exist(x, state.qa_threshold)
    elif isinstance(node, dsl.QueryCount):
        x = _eval_set(node.source, state)
        ans = exec_query_count(x, state.qa_threshold)
    elif isinstance(node, dsl.QueryObject):
        x = _eval_set(node.source, state)
        ans = exec_query_object(x, features)
    elif isinstance(node, dsl.QueryRelation):
        xt = _eval_set(node.target, state)
        xr = _eval_set(node.reference, state)
        ans = exec_query_relation(xt, xr, features)
    elif isinstance(node, dsl.QueryTRelation):
        xt = _eval_set(node.target, state)
        x1 = _eval_set(node.reference1, state)
        x2 = _eval_set(node.reference2, state)
        ans = exec_query_t_relation(xt, x1, x2, features, state)
    else:
        scores = _eval_set(program, state)
        final = scores.detach().numpy()
        state.trace.target = int(final.argmax())  # ties: lowest index
        if final.max() <= EMPTY_FLAG_THRESHOLD:
            state.trace.empty_denotation = True
        return scores, state.trace

    state.record("query", None, None, answer=ans)
    state.trace.answer = ans
    return ans, state.trace
