"""Boolean query language over triggering-event fields.

Queries like `verb == "create" and objectRef.namespace == "default"` select
whole contexts by testing only each context's triggering event. Supports
and/or/not, the six comparison operators (chainable, so
`t0 <= stagetimestamp <= t1` works), exists(field), and
field == regexp("...""). Fields are dotted flat paths or one of a few short
aliases; a missing field simply makes the predicate false.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .events import EventStore, parse_rfc3339

ALIASES = {
    "username": "user.username",
    "stagetimestamp": "stageTimestamp",
    "namespace": "objectRef.namespace",
}

# Bare (dotless) names that are real top-level record fields.
TOP_LEVEL_FIELDS = {"verb", "stage", "level", "auditID", "userAgent", "requestURI"}

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")


class QuerySyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class UnknownField(QuerySyntaxError):
    pass


class RegexError(ValueError):
    """Invalid regular expression in a regexp() predicate."""


# --- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Cmp:
    field: str
    op: str
    literal: Union[str, int]


@dataclass(frozen=True)
class Exists:
    field: str


@dataclass(frozen=True)
class Regex:
    field: str
    pattern: str


@dataclass(frozen=True)
class Not:
    child: "Node"


@dataclass(frozen=True)
class And:
    items: tuple

    def __init__(self, *items):
        object.__setattr__(self, "items", tuple(items))


@dataclass(frozen=True)
class Or:
    items: tuple

    def __init__(self, *items):
        object.__setattr__(self, "items", tuple(items))


Node = Union[Cmp, Exists, Regex, Not, And, Or]


def node_count(ast: Node) -> int:
    """Number of predicate leaves, the query's size for latency scaling."""
    if isinstance(ast, (Cmp, Exists, Regex)):
        return 1
    if isinstance(ast, Not):
        return node_count(ast.child)
    return sum(node_count(c) for c in ast.items)


# --- tokenizer -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>-?\d+)
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<field>[A-Za-z_][A-Za-z0-9_.\[\]/-]*)
    """,
    re.VERBOSE,
)

KEYWORDS = {"and", "or", "not", "exists", "regexp"}


@dataclass
class _Token:
    kind: str
    value: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup
        value = match.group()
        if kind != "ws":
            if kind == "field" and value in KEYWORDS:
                kind = value
            tokens.append(_Token(kind, value, pos))
        pos = match.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.next()
        if tok.kind != kind:
            raise QuerySyntaxError(f"expected {kind}, found {tok.value or 'end of query'!r}", tok.pos)
        return tok

    # or-expr := and-expr ("or" and-expr)*
    def parse(self) -> Node:
        node = self.or_expr()
        tok = self.peek()
        if tok.kind != "eof":
            raise QuerySyntaxError(f"unexpected trailing {tok.value!r}", tok.pos)
        return node

    def or_expr(self) -> Node:
        items = [self.and_expr()]
        while self.peek().kind == "or":
            self.next()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(*items)

    def and_expr(self) -> Node:
        items = [self.unary()]
        while self.peek().kind == "and":
            self.next()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(*items)

    def unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "not":
            self.next()
            return Not(self.unary())
        if tok.kind == "lparen":
            self.next()
            node = self.or_expr()
            self.expect("rparen")
            return node
        return self.predicate()

    def predicate(self) -> Node:
        tok = self.peek()
        if tok.kind == "exists":
            self.next()
            self.expect("lparen")
            field = self._field(self.expect("field"))
            self.expect("rparen")
            return Exists(field)
        return self.comparison()

    def comparison(self) -> Node:
        # operand (op operand)+ with chaining: `a <= f <= b` is a conjunction.
        first = self._operand()
        parts = [first]
        ops = []
        while self.peek().kind == "op":
            op = self.next().value
            if self.peek().kind == "regexp":
                if op != "==":
                    raise QuerySyntaxError("regexp() only combines with ==", self.peek().pos)
                self.next()
                self.expect("lparen")
                pattern_tok = self.expect("string")
                self.expect("rparen")
                field = self._require_field(first)
                return Regex(field, _unquote(pattern_tok.value))
            ops.append(op)
            parts.append(self._operand())
        if not ops:
            tok = self.peek()
            raise QuerySyntaxError(
                f"expected a comparison after {self._describe(first)}", tok.pos
            )
        clauses = []
        for left, op, right in zip(parts, ops, parts[1:]):
            clauses.append(self._pair_to_cmp(left, op, right))
        return clauses[0] if len(clauses) == 1 else And(*clauses)

    def _pair_to_cmp(self, left, op, right) -> Cmp:
        left_is_field = isinstance(left, str)
        right_is_field = isinstance(right, str)
        if left_is_field and not right_is_field:
            return Cmp(left, op, right[0])
        if right_is_field and not left_is_field:
            flipped = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "==": "==", "!=": "!="}
            return Cmp(right, flipped[op], left[0])
        pos = self.peek().pos
        if left_is_field:
            raise QuerySyntaxError("cannot compare two fields", pos)
        raise QuerySyntaxError("comparison needs a field on one side", pos)

    def _operand(self):
        """A field name (str) or a 1-tuple holding a literal."""
        tok = self.next()
        if tok.kind == "field":
            return self._field(tok)
        if tok.kind == "string":
            return (_unquote(tok.value),)
        if tok.kind == "number":
            return (int(tok.value),)
        raise QuerySyntaxError(f"expected a field or literal, found {tok.value or 'end of query'!r}", tok.pos)

    def _field(self, tok: _Token) -> str:
        name = tok.value
        if name in ALIASES:
            return ALIASES[name]
        if "." in name or "[" in name or name in TOP_LEVEL_FIELDS:
            return name
        raise UnknownField(f"unknown field or alias {name!r}", tok.pos)

    def _require_field(self, operand) -> str:
        if isinstance(operand, str):
            return operand
        raise QuerySyntaxError("regexp() needs a field on the left", self.peek().pos)

    @staticmethod
    def _describe(operand) -> str:
        return f"field {operand!r}" if isinstance(operand, str) else f"literal {operand[0]!r}"


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    return body.replace('\\"', '"').replace("\\\\", "\\")


def parse_query(text: str) -> Node:
    """Parse query text to an AST; raises QuerySyntaxError with a position."""
    if not text or not text.strip():
        raise QuerySyntaxError("empty query", 0)
    return _Parser(text).parse()


# --- evaluation -----------------------------------------------------------------


def _try_timestamp(value: str):
    try:
        return parse_rfc3339(value)
    except (ValueError, TypeError):
        return None


def _compare(op: str, field_value: str, literal) -> bool:
    if isinstance(literal, int):
        try:
            left = int(field_value)
        except (TypeError, ValueError):
            return False
        right = literal
    else:
        right_ts = _try_timestamp(literal)
        left_ts = _try_timestamp(field_value) if right_ts is not None else None
        if right_ts is not None and left_ts is not None:
            left, right = left_ts, right_ts
        else:
            left, right = field_value, literal
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


_regex_cache: dict[str, re.Pattern] = {}


def _compiled(pattern: str) -> re.Pattern:
    try:
        compiled = _regex_cache.get(pattern)
        if compiled is None:
            compiled = re.compile(pattern)
            _regex_cache[pattern] = compiled
        return compiled
    except re.error as exc:
        raise RegexError(f"bad regular expression {pattern!r}: {exc}") from None


def eval_predicate(ast: Node, flat: dict) -> bool:
    """Evaluate an AST against one event's flat field map; absence is false."""
    if isinstance(ast, And):
        return all(eval_predicate(c, flat) for c in ast.items)
    if isinstance(ast, Or):
        return any(eval_predicate(c, flat) for c in ast.items)
    if isinstance(ast, Not):
        return not eval_predicate(ast.child, flat)
    if isinstance(ast, Exists):
        value = flat.get(ast.field)
        return value is not None and value != "__null__"
    if isinstance(ast, Regex):
        value = flat.get(ast.field)
        if value is None or value == "__null__":
            return False
        return _compiled(ast.pattern).fullmatch(value) is not None
    if isinstance(ast, Cmp):
        value = flat.get(ast.field)
        if value is None or value == "__null__":
            return False
        return _compare(ast.op, value, ast.literal)
    raise TypeError(f"not a query node: {ast!r}")


def eval_query(ast: Node, contexts, store: EventStore):
    """Contexts whose triggering event satisfies the predicate, in order."""
    out = []
    for ctx in contexts:
        trigger = store.get(ctx.trigger)
        if trigger is None:
            continue
        if eval_predicate(ast, trigger.flat):
            out.append(ctx)
    return out
