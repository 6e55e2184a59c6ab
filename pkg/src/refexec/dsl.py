"""Typed program DSL: AST, s-expression syntax, typechecking, anchor lowering.

Programs select objects from a scene (object-set values) and may be rooted in
a single query operator.  Concrete syntax is an s-expression per node:

    (filter (scene) chair)
    (relate (filter (scene) chair) (filter (scene) table) near)
    (anchor (filter (scene) table) (relate (filter (scene) chair)
                                           (filter (scene) table) right))

`(filter chair)` is accepted as shorthand for `(filter (scene) chair)`.
Comments run from ';' to end of line.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .vocab import Vocabulary


class ValueType(enum.Enum):
    OBJECT_SET = "object_set"
    CATEGORY = "category"
    RELATION = "relation"
    T_RELATION = "t_relation"
    BOOLEAN = "boolean"
    INTEGER = "integer"


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class TypecheckError(ValueError):
    pass


class LoweringError(ValueError):
    pass


@dataclass(frozen=True)
class Scene:
    pass


@dataclass(frozen=True)
class Filter:
    source: "Node"
    category: str


@dataclass(frozen=True)
class Relate:
    target: "Node"
    reference: "Node"
    relation: str


@dataclass(frozen=True)
class TernaryRelate:
    target: "Node"
    reference1: "Node"
    reference2: "Node"
    relation: str


@dataclass(frozen=True)
class Anchor:
    """View anchor: the body is evaluated in the frame of the anchor set."""

    anchor: "Node"
    body: "Node"


@dataclass(frozen=True)
class QueryExist:
    source: "Node"


@dataclass(frozen=True)
class QueryCount:
    source: "Node"


@dataclass(frozen=True)
class QueryObject:
    source: "Node"


@dataclass(frozen=True)
class QueryRelation:
    target: "Node"
    reference: "Node"


@dataclass(frozen=True)
class QueryTRelation:
    target: "Node"
    reference1: "Node"
    reference2: "Node"


Node = (Scene | Filter | Relate | TernaryRelate | Anchor | QueryExist
        | QueryCount | QueryObject | QueryRelation | QueryTRelation)

QUERY_KINDS = (QueryExist, QueryCount, QueryObject, QueryRelation, QueryTRelation)

_CONCEPT_RE = re.compile(r"^[a-z][a-z0-9_-]*$")

_OP_NAMES = {
    Scene: "scene",
    Filter: "filter",
    Relate: "relate",
    TernaryRelate: "ternary_relate",
    Anchor: "anchor",
    QueryExist: "query_exist",
    QueryCount: "query_count",
    QueryObject: "query_object",
    QueryRelation: "query_relation",
    QueryTRelation: "query_t_relation",
}
_NAME_OPS = {v: k for k, v in _OP_NAMES.items()}


def children(node: Node) -> tuple[Node, ...]:
    if isinstance(node, Scene):
        return ()
    if isinstance(node, Filter):
        return (node.source,)
    if isinstance(node, Relate):
        return (node.target, node.reference)
    if isinstance(node, TernaryRelate):
        return (node.target, node.reference1, node.reference2)
    if isinstance(node, Anchor):
        return (node.anchor, node.body)
    if isinstance(node, (QueryExist, QueryCount, QueryObject)):
        return (node.source,)
    if isinstance(node, QueryRelation):
        return (node.target, node.reference)
    if isinstance(node, QueryTRelation):
        return (node.target, node.reference1, node.reference2)
    raise TypeError(f"not a program node: {node!r}")


def walk(node: Node):
    """Post-order traversal."""
    for child in children(node):
        yield from walk(child)
    yield node


# ---------------------------------------------------------------------------
# Parsing

@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch in " \t\r":
            col += 1
            i += 1
        elif ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append(_Token(ch, line, col))
            col += 1
            i += 1
        else:
            j = i
            while j < len(text) and text[j] not in " \t\r\n();":
                j += 1
            tokens.append(_Token(text[i:j], line, col))
            col += j - i
            i = j
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], source: str):
        self.tokens = tokens
        self.pos = 0
        self.source = source

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, expect: str | None = None) -> _Token:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("", 1, 1)
            raise ParseError("unexpected end of input", last.line, last.col + len(last.text))
        self.pos += 1
        if expect is not None and tok.text != expect:
            raise ParseError(f"expected {expect!r}, found {tok.text!r}", tok.line, tok.col)
        return tok

    def parse(self) -> Node:
        node = self._expr()
        extra = self._peek()
        if extra is not None:
            raise ParseError(f"unexpected trailing token {extra.text!r}", extra.line, extra.col)
        return node

    def _expr(self) -> Node:
        tok = self._next()
        if tok.text != "(":
            raise ParseError(f"expected '(', found {tok.text!r}", tok.line, tok.col)
        op_tok = self._next()
        op = op_tok.text
        if op not in _NAME_OPS:
            raise ParseError(f"unknown operator {op!r}", op_tok.line, op_tok.col)
        if op == "scene":
            self._next(")")
            return Scene()
        if op == "filter":
            first = self._peek()
            if first is None:
                raise ParseError("unexpected end of input", op_tok.line, op_tok.col)
            if first.text == "(":
                source = self._expr()
                category = self._concept()
            else:
                # shorthand: (filter chair) == (filter (scene) chair)
                source = Scene()
                category = self._concept()
            self._next(")")
            return Filter(source, category)
        if op == "relate":
            target = self._expr()
            reference = self._expr()
            relation = self._concept()
            self._next(")")
            return Relate(target, reference, relation)
        if op == "ternary_relate":
            target = self._expr()
            ref1 = self._expr()
            ref2 = self._expr()
            relation = self._concept()
            self._next(")")
            return TernaryRelate(target, ref1, ref2, relation)
        if op == "anchor":
            anchor = self._expr()
            body = self._expr()
            self._next(")")
            return Anchor(anchor, body)
        if op in ("query_exist", "query_count", "query_object"):
            source = self._expr()
            self._next(")")
            return _NAME_OPS[op](source)
        if op == "query_relation":
            target = self._expr()
            reference = self._expr()
            self._next(")")
            return QueryRelation(target, reference)
        if op == "query_t_relation":
            target = self._expr()
            ref1 = self._expr()
            ref2 = self._expr()
            self._next(")")
            return QueryTRelation(target, ref1, ref2)
        raise ParseError(f"unhandled operator {op!r}", op_tok.line, op_tok.col)

    def _concept(self) -> str:
        tok = self._next()
        if tok.text in "()":
            raise ParseError("expected a concept name", tok.line, tok.col)
        if not _CONCEPT_RE.match(tok.text):
            raise ParseError(f"invalid concept name {tok.text!r}", tok.line, tok.col)
        return tok.text


def parse_program(text: str) -> Node:
    """Parse concrete s-expression syntax into an AST.

    Raises ParseError with line/column positions on malformed input.
    Concept names are kept as raw strings; vocabulary resolution happens in
    `typecheck`.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty program", 1, 1)
    return _Parser(tokens, text).parse()


def print_program(node: Node) -> str:
    """Canonical single-line s-expression (filter always in long form)."""
    if isinstance(node, Scene):
        return "(scene)"
    if isinstance(node, Filter):
        return f"(filter {print_program(node.source)} {node.category})"
    if isinstance(node, Relate):
        return (f"(relate {print_program(node.target)} "
                f"{print_program(node.reference)} {node.relation})")
    if isinstance(node, TernaryRelate):
        return (f"(ternary_relate {print_program(node.target)} "
                f"{print_program(node.reference1)} {print_program(node.reference2)} "
                f"{node.relation})")
    if isinstance(node, Anchor):
        return f"(anchor {print_program(node.anchor)} {print_program(node.body)})"
    if isinstance(node, (QueryExist, QueryCount, QueryObject)):
        return f"({_OP_NAMES[type(node)]} {print_program(node.source)})"
    if isinstance(node, QueryRelation):
        return (f"(query_relation {print_program(node.target)} "
                f"{print_program(node.reference)})")
    if isinstance(node, QueryTRelation):
        return (f"(query_t_relation {print_program(node.target)} "
                f"{print_program(node.reference1)} {print_program(node.reference2)})")
    raise TypeError(f"not a program node: {node!r}")


# ---------------------------------------------------------------------------
# Typechecking

def typecheck(node: Node, vocabulary: Vocabulary) -> ValueType:
    """Validate a program against a vocabulary and return its value type.

    Query operators may appear only as the program root (at most one); this
    also falls out structurally because no operator consumes a query result.
    `Relate` bodies directly under an `Anchor` may use a view relation token
    (one whose `anchor-` variant exists in the ternary vocabulary).
    """
    return _typecheck(node, vocabulary, is_root=True)


def _typecheck(node: Node, vocab: Vocabulary, is_root: bool) -> ValueType:
    if isinstance(node, QUERY_KINDS) and not is_root:
        raise TypecheckError(f"query operator {_OP_NAMES[type(node)]} must be the program root")
    if isinstance(node, Scene):
        return ValueType.OBJECT_SET
    if isinstance(node, Filter):
        _expect_object_set(node.source, vocab, "filter source")
        if not vocab.is_category(node.category):
            raise TypecheckError(f"unknown category {node.category!r}")
        return ValueType.OBJECT_SET
    if isinstance(node, Relate):
        _expect_object_set(node.target, vocab, "relate target")
        _expect_object_set(node.reference, vocab, "relate reference")
        if not vocab.is_binary(node.relation):
            raise TypecheckError(f"unknown binary relation {node.relation!r}")
        return ValueType.OBJECT_SET
    if isinstance(node, TernaryRelate):
        _expect_object_set(node.target, vocab, "ternary_relate target")
        _expect_object_set(node.reference1, vocab, "ternary_relate reference")
        _expect_object_set(node.reference2, vocab, "ternary_relate reference")
        if not vocab.is_ternary(node.relation):
            raise TypecheckError(f"unknown ternary relation {node.relation!r}")
        return ValueType.OBJECT_SET
    if isinstance(node, Anchor):
        _expect_object_set(node.anchor, vocab, "anchor set")
        _check_anchor_body(node.body, vocab)
        return ValueType.OBJECT_SET
    if isinstance(node, QueryExist):
        _expect_object_set(node.source, vocab, "query_exist argument")
        return ValueType.BOOLEAN
    if isinstance(node, QueryCount):
        _expect_object_set(node.source, vocab, "query_count argument")
        return ValueType.INTEGER
    if isinstance(node, QueryObject):
        _expect_object_set(node.source, vocab, "query_object argument")
        return ValueType.CATEGORY
    if isinstance(node, QueryRelation):
        _expect_object_set(node.target, vocab, "query_relation target")
        _expect_object_set(node.reference, vocab, "query_relation reference")
        return ValueType.RELATION
    if isinstance(node, QueryTRelation):
        _expect_object_set(node.target, vocab, "query_t_relation target")
        _expect_object_set(node.reference1, vocab, "query_t_relation reference")
        _expect_object_set(node.reference2, vocab, "query_t_relation reference")
        return ValueType.T_RELATION
    raise TypecheckError(f"not a program node: {node!r}")


def _expect_object_set(node: Node, vocab: Vocabulary, role: str) -> None:
    got = _typecheck(node, vocab, is_root=False)
    if got is not ValueType.OBJECT_SET:
        raise TypecheckError(f"{role} must be an object set, got {got.value}")


def _check_anchor_body(body: Node, vocab: Vocabulary) -> None:
    if not isinstance(body, Relate):
        raise TypecheckError("anchor body must be a single relate expression")
    _expect_object_set(body.target, vocab, "anchor body target")
    _expect_object_set(body.reference, vocab, "anchor body reference")
    for sub in (body.target, body.reference):
        for n in walk(sub):
            if isinstance(n, (Relate, TernaryRelate, Anchor)):
                raise TypecheckError("anchor body must contain exactly one relation")
    # The relation token must resolve to a view variant at lowering time or
    # be an ordinary binary relation (rejected later by lower_anchor).
    if vocab.anchor_variant(body.relation) is None and not vocab.is_binary(body.relation):
        raise TypecheckError(f"unknown relation {body.relation!r} in anchor body")


# ---------------------------------------------------------------------------
# Anchor lowering

def lower_anchor(node: Node, vocabulary: Vocabulary) -> Node:
    """Rewrite every Anchor node into a ternary relation.

    Anchor(A, Relate(t, x, r)) becomes TernaryRelate(t, x, A, anchor-r).
    Idempotent; the result typechecks whenever the input does.
    """
    if isinstance(node, Anchor):
        body = node.body
        if not isinstance(body, Relate):
            raise LoweringError("anchor body must be a single relate expression")
        for sub in (body.target, body.reference):
            for n in walk(sub):
                if isinstance(n, (Relate, TernaryRelate, Anchor)):
                    raise LoweringError("anchor body must contain exactly one relation")
        variant = vocabulary.anchor_variant(body.relation)
        if variant is None:
            raise LoweringError(
                f"relation {body.relation!r} has no view-dependent variant")
        return TernaryRelate(
            target=lower_anchor(body.target, vocabulary),
            reference1=lower_anchor(body.reference, vocabulary),
            reference2=lower_anchor(node.anchor, vocabulary),
            relation=variant,
        )
    if isinstance(node, Scene):
        return node
    if isinstance(node, Filter):
        return Filter(lower_anchor(node.source, vocabulary), node.category)
    if isinstance(node, Relate):
        return Relate(lower_anchor(node.target, vocabulary),
                      lower_anchor(node.reference, vocabulary), node.relation)
    if isinstance(node, TernaryRelate):
        return TernaryRelate(lower_anchor(node.target, vocabulary),
                             lower_anchor(node.reference1, vocabulary),
                             lower_anchor(node.reference2, vocabulary), node.relation)
    if isinstance(node, (QueryExist, QueryCount, QueryObject)):
        return type(node)(lower_anchor(node.source, vocabulary))
    if isinstance(node, QueryRelation):
        return QueryRelation(lower_anchor(node.target, vocabulary),
                             lower_anchor(node.reference, vocabulary))
    if isinstance(node, QueryTRelation):
        return QueryTRelation(lower_anchor(node.target, vocabulary),
                              lower_anchor(node.reference1, vocabulary),
                              lower_anchor(node.reference2, vocabulary))
    raise TypeError(f"not a program node: {node!r}")


def contains_anchor(node: Node) -> bool:
    return any(isinstance(n, Anchor) for n in walk(node))


def is_view_dependent(node: Node, vocabulary: Vocabulary) -> bool:
    """True when the (lowered form of the) program uses an anchor relation."""
    lowered = lower_anchor(node, vocabulary) if contains_anchor(node) else node
    return any(
        isinstance(n, TernaryRelate) and n.relation in vocabulary.anchor_relations
        for n in walk(lowered)
    )
