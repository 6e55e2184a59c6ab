"""Crisp set-denotation semantics over exact geometric facts.

This is the discrete counterpart of the differentiable executor: object sets
instead of score vectors, boolean relations instead of log-probabilities.
Relations quantify universally over the reference set, and an object never
serves as its own reference, mirroring the executor's diagonal masking and
its expected-log mixing (a target scores high only when it relates to every
plausible reference).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsl
from .relations import (DEFAULT_THRESHOLDS, RelationThresholds, SceneArrays,
                        binary_truth, ternary_truth)
from .scene import Scene
from .vocab import Vocabulary


@dataclass
class SceneFacts:
    """Boolean relation tables plus category labels for one scene."""

    m: int
    categories: list[str]
    binary: dict[str, np.ndarray]    # name -> (M, M) bool
    ternary: dict[str, np.ndarray]   # name -> (M, M, M) bool
    vocabulary: Vocabulary

    @classmethod
    def from_scene(cls, scene: Scene, vocabulary: Vocabulary,
                   thresholds: RelationThresholds = DEFAULT_THRESHOLDS) -> "SceneFacts":
        arrays = scene.arrays()
        return cls.from_arrays(arrays, scene.categories, vocabulary, thresholds)

    @classmethod
    def from_arrays(cls, arrays: SceneArrays, categories: list[str],
                    vocabulary: Vocabulary,
                    thresholds: RelationThresholds = DEFAULT_THRESHOLDS) -> "SceneFacts":
        binary = {r: binary_truth(arrays, r, thresholds)
                  for r in vocabulary.binary_relations}
        ternary = {r: ternary_truth(arrays, r, thresholds)
                   for r in vocabulary.ternary_relations}
        return cls(m=arrays.m, categories=list(categories), binary=binary,
                   ternary=ternary, vocabulary=vocabulary)


def denote(node: dsl.Node, facts: SceneFacts) -> frozenset[int]:
    """Denotation of an object-set program as a set of object indices."""
    if isinstance(node, dsl.Scene):
        return frozenset(range(facts.m))
    if isinstance(node, dsl.Filter):
        source = denote(node.source, facts)
        return frozenset(i for i in source if facts.categories[i] == node.category)
    if isinstance(node, dsl.Relate):
        targets = denote(node.target, facts)
        refs = denote(node.reference, facts)
        if not refs:
            return frozenset()
        table = facts.binary[node.relation]
        return frozenset(
            i for i in targets
            if all(j != i and table[i, j] for j in refs)
        )
    if isinstance(node, dsl.TernaryRelate):
        targets = denote(node.target, facts)
        refs1 = denote(node.reference1, facts)
        refs2 = denote(node.reference2, facts)
        if not refs1 or not refs2:
            return frozenset()
        table = facts.ternary[node.relation]
        return frozenset(
            i for i in targets
            if all(j != i and k != i and table[i, j, k]
                   for j in refs1 for k in refs2)
        )
    if isinstance(node, dsl.Anchor):
        raise ValueError("anchor nodes must be lowered before denotation")
    raise TypeError(f"not an object-set node: {node!r}")


def answer(node: dsl.Node, facts: SceneFacts):
    """Crisp answer for a query-rooted program.

    query_object returns the set of member categories, query_relation /
    query_t_relation the set of relations holding for every target/reference
    combination; callers wanting a unique gold restrict to singleton results.
    """
    if isinstance(node, dsl.QueryExist):
        return len(denote(node.source, facts)) > 0
    if isinstance(node, dsl.QueryCount):
        return len(denote(node.source, facts))
    if isinstance(node, dsl.QueryObject):
        members = denote(node.source, facts)
        return frozenset(facts.categories[i] for i in members)
    if isinstance(node, dsl.QueryRelation):
        targets = denote(node.target, facts)
        refs = denote(node.reference, facts)
        if not targets or not refs:
            return frozenset()
        return frozenset(
            name for name, table in facts.binary.items()
            if all(i != j and table[i, j] for i in targets for j in refs)
        )
    if isinstance(node, dsl.QueryTRelation):
        targets = denote(node.target, facts)
        refs1 = denote(node.reference1, facts)
        refs2 = denote(node.reference2, facts)
        if not targets or not refs1 or not refs2:
            return frozenset()
        return frozenset(
            name for name, table in facts.ternary.items()
            if all(i != j and i != k and table[i, j, k]
                   for i in targets for j in refs1 for k in refs2)
        )
    raise TypeError(f"not a query node: {node!r}")
