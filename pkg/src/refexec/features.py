"""Feature providers consumed by the executor.

A provider exposes log-probability scores for concepts over one scene:

    m                      number of objects
    vocabulary             the concept vocabulary
    category_scores(name)  (M,) tensor
    all_category_scores()  (M, C) tensor, column order = vocabulary order
    relation_scores(name)  (M, M) tensor, diagonal handled by the executor
    ternary_rows(name, rows)  (len(rows), M, M) tensor for target rows

`OracleFeatures` derives exact scores (0 / -HARD_FALSE) from scene geometry;
the learned provider lives in `encoder`.  Ternary scores are served in row
chunks so providers never have to materialize an M^3 tensor lazily built
from pair features.
"""
from __future__ import annotations

import numpy as np
import torch

from .relations import (DEFAULT_THRESHOLDS, RelationThresholds,
                        oracle_binary, oracle_category, oracle_ternary)
from .scene import Scene
from .vocab import Vocabulary


class OracleFeatures:
    """Exact log-truth features computed from scene geometry."""

    def __init__(self, scene: Scene, vocabulary: Vocabulary,
                 dtype: torch.dtype = torch.float64,
                 thresholds: RelationThresholds = DEFAULT_THRESHOLDS):
        arrays = scene.arrays()
        self.m = scene.m
        self.vocabulary = vocabulary
        self.dtype = dtype
        cat = oracle_category(scene.categories, vocabulary)
        self._categories = torch.from_numpy(cat).to(dtype)
        self._binary = {
            name: torch.from_numpy(oracle_binary(arrays, name, thresholds)).to(dtype)
            for name in vocabulary.binary_relations
        }
        self._ternary = {
            name: torch.from_numpy(oracle_ternary(arrays, name, thresholds)).to(dtype)
            for name in vocabulary.ternary_relations
        }

    def category_scores(self, name: str) -> torch.Tensor:
        return self._categories[:, self.vocabulary.category_id(name)]

    def all_category_scores(self) -> torch.Tensor:
        return self._categories

    def relation_scores(self, name: str) -> torch.Tensor:
        return self._binary[name]

    def ternary_rows(self, name: str, rows: torch.Tensor) -> torch.Tensor:
        return self._ternary[name][rows]


class ArrayFeatures:
    """Provider over explicit score tensors; used by tests and tooling."""

    def __init__(self, vocabulary: Vocabulary, categories: torch.Tensor,
                 binary: dict[str, torch.Tensor], ternary: dict[str, torch.Tensor]):
        self.vocabulary = vocabulary
        self.m = categories.shape[0]
        self.dtype = categories.dtype
        self._categories = categories
        self._binary = binary
        self._ternary = ternary

    def category_scores(self, name: str) -> torch.Tensor:
        return self._categories[:, self.vocabulary.category_id(name)]

    def all_category_scores(self) -> torch.Tensor:
        return self._categories

    def relation_scores(self, name: str) -> torch.Tensor:
        return self._binary[name]

    def ternary_rows(self, name: str, rows: torch.Tensor) -> torch.Tensor:
        return self._ternary[name][rows]


def random_features(vocabulary: Vocabulary, m: int, seed: int,
                    dtype: torch.dtype = torch.float64) -> ArrayFeatures:
    """Random log-probability scores; handy for property tests."""
    rng = np.random.default_rng(seed)

    def logp(shape):
        return torch.from_numpy(np.log(rng.uniform(1e-6, 1.0, shape))).to(dtype)

    return ArrayFeatures(
        vocabulary,
        categories=logp((m, len(vocabulary.categories))),
        binary={r: logp((m, m)) for r in vocabulary.binary_relations},
        ternary={r: logp((m, m, m)) for r in vocabulary.ternary_relations},
    )
