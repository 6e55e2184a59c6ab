"""Template language: utterances <-> programs, both directions exact.

The synthetic language is a closed set of referring-expression and question
templates.  `parse_utterance` inverts `generate_utterance` exactly: every
generated sentence parses back to its source program, for any seed.  Surface
variation lives only in the lexicon (many surface forms per concept), so the
parse side is many-to-one onto the same program.

Referring expressions (object-set programs):

    the {t}
    the {t} that is {rel} the {r}
    the {t} that is between the {r1} and the {r2}
    select the {t} that is {dir} the {r}, facing the front of the {a}

The last form parses to an Anchor node; `dsl.lower_anchor` turns it into the
ternary anchor-{dir} form.  Questions follow the four question families:

    is there a {t} {rel} the {r}?                       -> query_exist
    how many {t}s are in the scene?                     -> query_count
    how many {t}s are {rel} the {r}?                    -> query_count
    what is the item {rel} the {r}?                     -> query_object
    what is the relationship between the {t} and the {r}?  -> query_relation

plus "between the {r1} and the {r2}" and ", facing the front of the {a}"
variants of each set-valued body, and a three-argument relationship form for
ternary query_t_relation.
"""
from __future__ import annotations

import difflib
import random
import re
from dataclasses import dataclass

from . import dsl
from .vocab import ANCHOR_PREFIX, Vocabulary


class LexiconError(ValueError):
    pass


class UtteranceParseError(ValueError):
    def __init__(self, message: str, nearest: str | None = None):
        self.nearest = nearest
        if nearest:
            message = f"{message}; nearest template: {nearest!r}"
        super().__init__(message)


class GenerationError(ValueError):
    pass


DEFAULT_RELATION_FORMS: dict[str, tuple[str, ...]] = {
    "above": ("above", "over"),
    "below": ("below", "under", "beneath"),
    "near": ("near", "beside", "next to", "close to"),
    "far": ("far from", "far away from"),
}

DEFAULT_DIRECTION_FORMS: dict[str, tuple[str, ...]] = {
    "left": ("on the left side of", "to the left of"),
    "right": ("on the right side of", "to the right of"),
    "front": ("in front of",),
    "behind": ("behind",),
}

_PLURAL_EXCEPTIONS = {"shelf": "shelves", "bookshelf": "bookshelves"}


def pluralize(noun: str) -> str:
    if noun in _PLURAL_EXCEPTIONS:
        return _PLURAL_EXCEPTIONS[noun]
    if re.search(r"(s|x|z|ch|sh)$", noun):
        return noun + "es"
    if re.search(r"[^aeiou]y$", noun):
        return noun[:-1] + "ies"
    return noun + "s"


@dataclass
class _Template:
    family: str
    skeleton: str                      # human-readable, for error messages
    pattern: re.Pattern
    build: "callable"


class Lexicon:
    """Surface forms for one vocabulary plus the compiled template set."""

    def __init__(self, vocabulary: Vocabulary,
                 category_forms: dict[str, tuple[str, ...]] | None = None,
                 relation_forms: dict[str, tuple[str, ...]] | None = None,
                 direction_forms: dict[str, tuple[str, ...]] | None = None):
        self.vocabulary = vocabulary
        self.category_forms = {
            c: tuple(category_forms.get(c, (c,))) if category_forms else (c,)
            for c in vocabulary.categories}
        self.relation_forms = {
            r: tuple((relation_forms or DEFAULT_RELATION_FORMS).get(r, (r,)))
            for r in vocabulary.binary_relations}
        directions = [n.removeprefix(ANCHOR_PREFIX)
                      for n in vocabulary.anchor_relations]
        self.direction_forms = {
            d: tuple((direction_forms or DEFAULT_DIRECTION_FORMS).get(d, (d,)))
            for d in directions}
        self.has_between = "between" in vocabulary.ternary_relations

        self._category_of: dict[str, str] = {}
        self._category_of_plural: dict[str, str] = {}
        self._relation_of: dict[str, str] = {}
        self._direction_of: dict[str, str] = {}
        self._index_forms()
        self.templates = self._compile_templates()

    # -- lexicon tables ----------------------------------------------------
    def _claim(self, table: dict[str, str], surface: str, concept: str,
               kind: str) -> None:
        surface = surface.lower().strip()
        if not surface:
            raise LexiconError(f"empty surface form for {concept!r}")
        for other in (self._category_of, self._relation_of, self._direction_of):
            if surface in other and other.get(surface) != concept:
                raise LexiconError(
                    f"ambiguous surface form {surface!r}: "
                    f"{other[surface]!r} vs {kind} {concept!r}")
        if surface in table and table[surface] != concept:
            raise LexiconError(
                f"ambiguous surface form {surface!r}: "
                f"{table[surface]!r} vs {concept!r}")
        table[surface] = concept

    def _index_forms(self) -> None:
        for concept, forms in self.category_forms.items():
            for form in forms:
                self._claim(self._category_of, form, concept, "category")
                plural = pluralize(form.lower().strip())
                if plural in self._category_of_plural and \
                        self._category_of_plural[plural] != concept:
                    raise LexiconError(f"ambiguous plural {plural!r}")
                self._category_of_plural[plural] = concept
        for concept, forms in self.relation_forms.items():
            for form in forms:
                self._claim(self._relation_of, form, concept, "relation")
        for concept, forms in self.direction_forms.items():
            for form in forms:
                self._claim(self._direction_of, form, concept, "direction")

    @staticmethod
    def _alternation(forms: "iterable[str]") -> str:
        ordered = sorted({f.lower() for f in forms}, key=lambda s: (-len(s), s))
        if not ordered:
            return r"(?!x)x"  # never matches
        return "|".join(re.escape(f) for f in ordered)

    # -- templates ---------------------------------------------------------
    def _compile_templates(self) -> list[_Template]:
        cat = self._alternation(self._category_of)
        plu = self._alternation(self._category_of_plural)
        rel = self._alternation(self._relation_of)
        drc = self._alternation(self._direction_of)

        def g(name: str, alt: str) -> str:
            return f"(?P<{name}>{alt})"

        def F(group: str, m: re.Match) -> dsl.Node:
            return dsl.Filter(dsl.Scene(), self._category_of[m.group(group)])

        def FP(group: str, m: re.Match) -> dsl.Node:
            return dsl.Filter(dsl.Scene(),
                              self._category_of_plural[m.group(group)])

        def R(m: re.Match, target: dsl.Node) -> dsl.Node:
            return dsl.Relate(target, F("r", m), self._relation_of[m.group("rel")])

        def B(m: re.Match, target: dsl.Node) -> dsl.Node:
            return dsl.TernaryRelate(target, F("r1", m), F("r2", m), "between")

        def A(m: re.Match, target: dsl.Node) -> dsl.Node:
            body = dsl.Relate(target, F("r", m),
                              self._direction_of[m.group("dir")])
            return dsl.Anchor(F("a", m), body)

        anchor_tail = rf", facing the front of the {g('a', cat)}"
        templates: list[_Template] = []

        def add(family: str, skeleton: str, body: str, build) -> None:
            templates.append(_Template(
                family=family, skeleton=skeleton,
                pattern=re.compile(rf"^(?:select )?{body}$"), build=build))

        # ---- referring expressions (object sets) ----
        add("anchor",
            "select the {t} that is {dir} the {r}, facing the front of the {a}",
            rf"the {g('t', cat)} that is {g('dir', drc)} the {g('r', cat)}{anchor_tail}",
            lambda m: A(m, F("t", m)))
        if self.has_between:
            add("between",
                "the {t} that is between the {r1} and the {r2}",
                rf"the {g('t', cat)} that is between the {g('r1', cat)} and the {g('r2', cat)}",
                lambda m: B(m, F("t", m)))
        add("relate",
            "the {t} that is {rel} the {r}",
            rf"the {g('t', cat)} that is {g('rel', rel)} the {g('r', cat)}",
            lambda m: R(m, F("t", m)))
        add("filter", "the {t}", rf"the {g('t', cat)}", lambda m: F("t", m))

        # ---- questions ----
        add("exist_view",
            "is there a {t} {dir} the {r}, facing the front of the {a}?",
            rf"is there a {g('t', cat)} {g('dir', drc)} the {g('r', cat)}{anchor_tail}",
            lambda m: dsl.QueryExist(A(m, F("t", m))))
        if self.has_between:
            add("exist_between",
                "is there a {t} between the {r1} and the {r2}?",
                rf"is there a {g('t', cat)} between the {g('r1', cat)} and the {g('r2', cat)}",
                lambda m: dsl.QueryExist(B(m, F("t", m))))
        add("exist",
            "is there a {t} {rel} the {r}?",
            rf"is there a {g('t', cat)} {g('rel', rel)} the {g('r', cat)}",
            lambda m: dsl.QueryExist(R(m, F("t", m))))
        add("count_view",
            "how many {t}s are {dir} the {r}, facing the front of the {a}?",
            rf"how many {g('t', plu)} are {g('dir', drc)} the {g('r', cat)}{anchor_tail}",
            lambda m: dsl.QueryCount(A(m, FP("t", m))))
        if self.has_between:
            add("count_between",
                "how many {t}s are between the {r1} and the {r2}?",
                rf"how many {g('t', plu)} are between the {g('r1', cat)} and the {g('r2', cat)}",
                lambda m: dsl.QueryCount(B(m, FP("t", m))))
        add("count_relate",
            "how many {t}s are {rel} the {r}?",
            rf"how many {g('t', plu)} are {g('rel', rel)} the {g('r', cat)}",
            lambda m: dsl.QueryCount(R(m, FP("t", m))))
        add("count",
            "how many {t}s are in the scene?",
            rf"how many {g('t', plu)} are in the scene",
            lambda m: dsl.QueryCount(FP("t", m)))
        add("object_view",
            "what is the item {dir} the {r}, facing the front of the {a}?",
            rf"what is the item {g('dir', drc)} the {g('r', cat)}{anchor_tail}",
            lambda m: dsl.QueryObject(A(m, dsl.Scene())))
        if self.has_between:
            add("object_between",
                "what is the item between the {r1} and the {r2}?",
                rf"what is the item between the {g('r1', cat)} and the {g('r2', cat)}",
                lambda m: dsl.QueryObject(B(m, dsl.Scene())))
        add("object",
            "what is the item {rel} the {r}?",
            rf"what is the item {g('rel', rel)} the {g('r', cat)}",
            lambda m: dsl.QueryObject(R(m, dsl.Scene())))
        add("t_relation",
            "what is the relationship between the {t}, the {r1} and the {r2}?",
            rf"what is the relationship between the {g('t', cat)}, "
            rf"the {g('r1', cat)} and the {g('r2', cat)}",
            lambda m: dsl.QueryTRelation(F("t", m), F("r1", m), F("r2", m)))
        add("relation",
            "what is the relationship between the {t} and the {r}?",
            rf"what is the relationship between the {g('t', cat)} and the {g('r', cat)}",
            lambda m: dsl.QueryRelation(F("t", m), F("r", m)))
        return templates

    @property
    def skeletons(self) -> list[str]:
        return [t.skeleton for t in self.templates]


def build_lexicon(vocabulary: Vocabulary, **kwargs) -> Lexicon:
    return Lexicon(vocabulary, **kwargs)


def normalize_utterance(text: str) -> str:
    text = re.sub(r"\s+", " ", text.strip().lower())
    return text.rstrip(" ?.!")


def parse_utterance(utterance: str, lexicon: Lexicon) -> dsl.Node:
    """Deterministic template parse; exact inverse of generate_utterance."""
    text = normalize_utterance(utterance)
    for template in lexicon.templates:
        match = template.pattern.match(text)
        if match:
            return template.build(match)
    nearest = difflib.get_close_matches(text, lexicon.skeletons, n=1, cutoff=0.0)
    raise UtteranceParseError(
        f"no template matches utterance {utterance!r}",
        nearest=nearest[0] if nearest else None)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _unlower(program: dsl.Node, lexicon: Lexicon) -> dsl.Node:
    """Rewrite anchor-* TernaryRelate back to the Anchor surface form."""
    if isinstance(program, dsl.TernaryRelate) and \
            program.relation.startswith(ANCHOR_PREFIX):
        direction = program.relation.removeprefix(ANCHOR_PREFIX)
        if direction in lexicon.direction_forms:
            return dsl.Anchor(program.reference2,
                              dsl.Relate(program.target, program.reference1,
                                         direction))
    return program


def _simple_filter(node: dsl.Node) -> str | None:
    if isinstance(node, dsl.Filter) and isinstance(node.source, dsl.Scene):
        return node.category
    return None


class _Surface:
    def __init__(self, lexicon: Lexicon, rng: random.Random):
        self.lex = lexicon
        self.rng = rng

    def category(self, name: str) -> str:
        return self.rng.choice(self.lex.category_forms[name])

    def category_plural(self, name: str) -> str:
        return pluralize(self.category(name))

    def relation(self, name: str) -> str:
        return self.rng.choice(self.lex.relation_forms[name])

    def direction(self, name: str) -> str:
        return self.rng.choice(self.lex.direction_forms[name])


def _set_phrase(node: dsl.Node, s: _Surface, *, subject: str) -> str:
    """Render an object-set subtree; `subject` carries the already-rendered
    head noun phrase ('the chair' / 'a chair' / 'chairs' / 'the item')."""
    lex = s.lex
    if isinstance(node, (dsl.Filter, dsl.Scene)):
        return subject
    if isinstance(node, dsl.Relate):
        r = _simple_filter(node.reference)
        if r is None:
            raise GenerationError("reference must be a category filter")
        return f"{subject} {s.relation(node.relation)} the {s.category(r)}"
    if isinstance(node, dsl.TernaryRelate) and node.relation == "between":
        r1 = _simple_filter(node.reference1)
        r2 = _simple_filter(node.reference2)
        if r1 is None or r2 is None:
            raise GenerationError("between references must be category filters")
        return (f"{subject} between the {s.category(r1)} "
                f"and the {s.category(r2)}")
    if isinstance(node, dsl.Anchor):
        body = node.body
        if not isinstance(body, dsl.Relate):
            raise GenerationError("anchor body must be a single relation")
        r = _simple_filter(body.reference)
        a = _simple_filter(node.anchor)
        if r is None or a is None:
            raise GenerationError("anchor references must be category filters")
        if body.relation not in lex.direction_forms:
            raise GenerationError(
                f"no view-direction surface form for {body.relation!r}")
        return (f"{subject} {s.direction(body.relation)} the {s.category(r)}, "
                f"facing the front of the {s.category(a)}")
    raise GenerationError(f"no template covers node {type(node).__name__}")


def _head_category(node: dsl.Node) -> str | None:
    """Category of the target-side head filter, if the shape is templated."""
    if isinstance(node, dsl.Filter):
        return _simple_filter(node)
    if isinstance(node, dsl.Relate):
        return _head_category(node.target)
    if isinstance(node, dsl.TernaryRelate):
        return _head_category(node.target)
    if isinstance(node, dsl.Anchor):
        return _head_category(node.body.target) if isinstance(node.body, dsl.Relate) else None
    return None


def generate_utterance(program: dsl.Node, lexicon: Lexicon, seed: int = 0) -> str:
    """Render a program as one grammatical sentence; deterministic per seed.

    Programs outside the template families raise GenerationError.
    """
    rng = random.Random(seed)
    s = _Surface(lexicon, rng)
    node = _unlower(program, lexicon)

    if isinstance(node, dsl.Filter):
        head = _simple_filter(node)
        if head is None:
            raise GenerationError("filter source must be the scene")
        return f"the {s.category(head)}"
    if isinstance(node, dsl.Relate):
        head = _head_category(node)
        if head is None or _simple_filter(node.target) is None:
            raise GenerationError("target must be a category filter")
        body = _set_phrase(node, s, subject=f"the {s.category(head)} that is")
        return body
    if isinstance(node, dsl.TernaryRelate):
        if node.relation != "between" or _simple_filter(node.target) is None:
            raise GenerationError(f"no template for ternary {node.relation!r}")
        return _set_phrase(node, s, subject=f"the {s.category(_head_category(node))} that is")
    if isinstance(node, dsl.Anchor):
        if not (isinstance(node.body, dsl.Relate)
                and _simple_filter(node.body.target) is not None):
            raise GenerationError("anchor body must relate a category filter")
        head = _head_category(node)
        return "select " + _set_phrase(
            node, s, subject=f"the {s.category(head)} that is")

    if isinstance(node, dsl.QueryExist):
        inner = _unlower(node.source, lexicon)
        head = _head_category(inner)
        if head is None or isinstance(inner, (dsl.Filter, dsl.Scene)):
            raise GenerationError("exist questions need a relational body")
        return "is there " + _set_phrase(inner, s, subject=f"a {s.category(head)}") + "?"
    if isinstance(node, dsl.QueryCount):
        inner = _unlower(node.source, lexicon)
        head = _head_category(inner)
        if head is None:
            raise GenerationError("count questions need a category target")
        if isinstance(inner, dsl.Filter):
            return f"how many {s.category_plural(head)} are in the scene?"
        return "how many " + _set_phrase(
            inner, s, subject=f"{s.category_plural(head)} are") + "?"
    if isinstance(node, dsl.QueryObject):
        inner = _unlower(node.source, lexicon)
        if isinstance(inner, (dsl.Filter, dsl.Scene)) or not _is_scene_target(inner):
            raise GenerationError("object questions take an unconstrained item")
        return "what is " + _set_phrase(inner, s, subject="the item") + "?"
    if isinstance(node, dsl.QueryRelation):
        t = _simple_filter(node.target)
        r = _simple_filter(node.reference)
        if t is None or r is None:
            raise GenerationError("relationship questions need category filters")
        return (f"what is the relationship between the {s.category(t)} "
                f"and the {s.category(r)}?")
    if isinstance(node, dsl.QueryTRelation):
        t = _simple_filter(node.target)
        r1 = _simple_filter(node.reference1)
        r2 = _simple_filter(node.reference2)
        if None in (t, r1, r2):
            raise GenerationError("relationship questions need category filters")
        return (f"what is the relationship between the {s.category(t)}, "
                f"the {s.category(r1)} and the {s.category(r2)}?")
    raise GenerationError(f"no template covers {type(node).__name__}")


def _is_scene_target(node: dsl.Node) -> bool:
    if isinstance(node, dsl.Relate):
        return isinstance(node.target, dsl.Scene)
    if isinstance(node, dsl.TernaryRelate):
        return isinstance(node.target, dsl.Scene)
    if isinstance(node, dsl.Anchor):
        return isinstance(node.body, dsl.Relate) and isinstance(node.body.target, dsl.Scene)
    return False
