"""Concept vocabulary shared by scenes, programs, and feature providers."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


DEFAULT_CATEGORIES = ("bed", "cabinet", "chair", "lamp", "sofa", "table")
DEFAULT_BINARY_RELATIONS = ("above", "below", "near", "far")
DEFAULT_TERNARY_RELATIONS = (
    "between",
    "anchor-left",
    "anchor-right",
    "anchor-front",
    "anchor-behind",
)

# Ternary relations with this prefix depend on the viewpoint induced by the
# anchor object; programs using them are flagged view-dependent.
ANCHOR_PREFIX = "anchor-"


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Ordered category / relation name sets with dense zero-based ids.

    Names must be unique across all three groups so that surface lexicons
    and program concepts resolve unambiguously.
    """

    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    binary_relations: tuple[str, ...] = DEFAULT_BINARY_RELATIONS
    ternary_relations: tuple[str, ...] = DEFAULT_TERNARY_RELATIONS
    _category_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    _binary_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    _ternary_ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "binary_relations", tuple(self.binary_relations))
        object.__setattr__(self, "ternary_relations", tuple(self.ternary_relations))
        names = self.categories + self.binary_relations + self.ternary_relations
        if len(set(names)) != len(names):
            raise VocabularyError("concept names must be unique across all groups")
        for group in (self.categories, self.binary_relations, self.ternary_relations):
            for name in group:
                if not name or name != name.lower():
                    raise VocabularyError(f"concept name must be lowercase: {name!r}")
        object.__setattr__(self, "_category_ids", {n: i for i, n in enumerate(self.categories)})
        object.__setattr__(self, "_binary_ids", {n: i for i, n in enumerate(self.binary_relations)})
        object.__setattr__(self, "_ternary_ids", {n: i for i, n in enumerate(self.ternary_relations)})

    def category_id(self, name: str) -> int:
        try:
            return self._category_ids[name]
        except KeyError:
            raise VocabularyError(f"unknown category: {name!r}") from None

    def binary_id(self, name: str) -> int:
        try:
            return self._binary_ids[name]
        except KeyError:
            raise VocabularyError(f"unknown binary relation: {name!r}") from None

    def ternary_id(self, name: str) -> int:
        try:
            return self._ternary_ids[name]
        except KeyError:
            raise VocabularyError(f"unknown ternary relation: {name!r}") from None

    def is_category(self, name: str) -> bool:
        return name in self._category_ids

    def is_binary(self, name: str) -> bool:
        return name in self._binary_ids

    def is_ternary(self, name: str) -> bool:
        return name in self._ternary_ids

    def anchor_variant(self, relation: str) -> str | None:
        """Ternary name for a view relation token, e.g. 'right' -> 'anchor-right'."""
        candidate = ANCHOR_PREFIX + relation
        return candidate if candidate in self._ternary_ids else None

    @property
    def anchor_relations(self) -> tuple[str, ...]:
        return tuple(n for n in self.ternary_relations if n.startswith(ANCHOR_PREFIX))

    def to_json(self) -> dict:
        return {
            "categories": list(self.categories),
            "binary_relations": list(self.binary_relations),
            "ternary_relations": list(self.ternary_relations),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        return cls(
            categories=tuple(data["categories"]),
            binary_relations=tuple(data["binary_relations"]),
            ternary_relations=tuple(data["ternary_relations"]),
        )

    @property
    def content_hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


DEFAULT_VOCABULARY = Vocabulary()
