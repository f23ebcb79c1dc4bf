"""Success-criterion expressions.

Criteria are boolean comparisons over objective aggregates and named policy
parameters, e.g.::

    avg(radicals) < avg(sympathizers) AND avg(sympathizers) < avg(conformists)
    avg(restricted) <= max_monitored_fraction

Grammar (no arithmetic; comparisons are non-associative)::

    expr  := or
    or    := and ("OR" and)*
    and   := unary ("AND" unary)*
    unary := "NOT" unary | "(" expr ")" | cmp
    cmp   := term relop term
    relop := "<" | "<=" | ">" | ">=" | "==" | "!="
    term  := NUMBER | IDENT | agg "(" IDENT ")"
    agg   := "avg" | "min" | "max"

``NOT`` binds tighter than ``AND``, which binds tighter than ``OR``.
Parse errors carry the byte offset of the offending token and the set of
token kinds that would have been accepted there; on premature end of input
the offset points at the start of the last token seen.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .errors import CriterionEvalError, CriterionParseError, UnknownAttribute, UnknownParameter

AGG_FUNCS = ("avg", "min", "max")
RELOPS = ("<=", ">=", "==", "!=", "<", ">")

_KEYWORDS = {"AND", "OR", "NOT"}


# ---------------------------------------------------------------------------
# syntax tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Aggregate:
    func: str
    attr: str


@dataclass(frozen=True)
class Comparison:
    op: str
    left: Number | Param | Aggregate
    right: Number | Param | Aggregate


@dataclass(frozen=True)
class Not:
    operand: "Node"


@dataclass(frozen=True)
class And:
    parts: tuple["Node", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Node", ...]


Node = Comparison | Not | And | Or


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # NUMBER IDENT LPAREN RPAREN RELOP AND OR NOT EOF
    text: str
    pos: int


def _lex(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch == "(":
            tokens.append(_Token("LPAREN", "(", i))
            i += 1
            continue
        if ch == ")":
            tokens.append(_Token("RPAREN", ")", i))
            i += 1
            continue
        two = source[i:i + 2]
        if two in ("<=", ">=", "==", "!="):
            tokens.append(_Token("RELOP", two, i))
            i += 2
            continue
        if ch in "<>":
            tokens.append(_Token("RELOP", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and source[i + 1].isdigit()):
            start = i
            if ch == "-":
                i += 1
            while i < n and source[i].isdigit():
                i += 1
            if i < n and source[i] == "." and i + 1 < n and source[i + 1].isdigit():
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            tokens.append(_Token("NUMBER", source[start:i], start))
            continue
        if ch.isalpha() or ch == "_":
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            word = source[start:i]
            if word in _KEYWORDS:
                tokens.append(_Token(word, word, start))
            else:
                tokens.append(_Token("IDENT", word, start))
            continue
        raise CriterionParseError(f"unexpected character {ch!r}", offset=i)
    eof_pos = tokens[-1].pos if tokens else 0
    tokens.append(_Token("EOF", "", eof_pos))
    return tokens


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        tok = self.tokens[self.index]
        if tok.kind != "EOF":
            self.index += 1
        return tok

    def fail(self, expected: tuple[str, ...]) -> CriterionParseError:
        tok = self.peek()
        what = "end of input" if tok.kind == "EOF" else repr(tok.text)
        wanted = " or ".join(expected)
        return CriterionParseError(
            f"expected {wanted}, found {what}", offset=tok.pos, expected=expected)

    def expect(self, kind: str, expected: tuple[str, ...]) -> _Token:
        if self.peek().kind != kind:
            raise self.fail(expected)
        return self.advance()

    # grammar productions, lowest precedence first

    def parse_expr(self) -> Node:
        return self.parse_or()

    def parse_or(self) -> Node:
        parts = [self.parse_and()]
        while self.peek().kind == "OR":
            self.advance()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and(self) -> Node:
        parts = [self.parse_unary()]
        while self.peek().kind == "AND":
            self.advance()
            parts.append(self.parse_unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "NOT":
            self.advance()
            return Not(self.parse_unary())
        if tok.kind == "LPAREN":
            self.advance()
            inner = self.parse_expr()
            self.expect("RPAREN", (")",))
            return inner
        return self.parse_cmp()

    def parse_cmp(self) -> Comparison:
        left = self.parse_term()
        tok = self.peek()
        if tok.kind != "RELOP":
            raise self.fail(RELOPS)
        self.advance()
        right = self.parse_term()
        return Comparison(tok.text, left, right)

    def parse_term(self) -> Number | Param | Aggregate:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return Number(float(tok.text))
        if tok.kind == "IDENT":
            self.advance()
            if tok.text in AGG_FUNCS and self.peek().kind == "LPAREN":
                self.advance()
                attr = self.expect("IDENT", ("identifier",))
                self.expect("RPAREN", (")",))
                return Aggregate(tok.text, attr.text)
            return Param(tok.text)
        raise self.fail(("number", "identifier", "NOT", "("))


def parse_criterion(text: str) -> Node:
    """Parse a criterion; raises :class:`CriterionParseError` with an offset."""
    parser = _Parser(_lex(text))
    node = parser.parse_expr()
    if parser.peek().kind != "EOF":
        raise parser.fail(("AND", "OR", "end of input"))
    return node


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _render_term(term) -> str:
    if isinstance(term, Number):
        return repr(term.value)
    if isinstance(term, Param):
        return term.name
    return f"{term.func}({term.attr})"


def _prec(node: Node) -> int:
    if isinstance(node, Or):
        return 1
    if isinstance(node, And):
        return 2
    return 3


def _render(node: Node, min_prec: int) -> str:
    if isinstance(node, Comparison):
        text = f"{_render_term(node.left)} {node.op} {_render_term(node.right)}"
    elif isinstance(node, Not):
        text = f"NOT {_render(node.operand, 3)}"
    elif isinstance(node, And):
        text = " AND ".join(_render(p, 3) for p in node.parts)
    else:
        text = " OR ".join(_render(p, 2) for p in node.parts)
    if _prec(node) < min_prec:
        return f"({text})"
    return text


def print_criterion(node: Node) -> str:
    """Canonical text form; ``parse(print(parse(s)))`` equals ``parse(s)``."""
    return _render(node, 1)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _numeric(value, origin: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CriterionEvalError(f"{origin} is not numeric: {value!r}")
    return float(value)


def _eval_term(term, aggregates: Mapping[str, Mapping[str, float]],
               params: Mapping[str, object]) -> float:
    if isinstance(term, Number):
        return term.value
    if isinstance(term, Param):
        if term.name not in params:
            raise UnknownParameter(f"unknown parameter {term.name!r}")
        return _numeric(params[term.name], f"parameter {term.name!r}")
    if term.attr not in aggregates:
        raise UnknownAttribute(f"unknown attribute {term.attr!r}")
    return _numeric(aggregates[term.attr][term.func],
                    f"{term.func}({term.attr})")


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def evaluate_criterion(node: Node, aggregates: Mapping[str, Mapping[str, float]],
                       params: Mapping[str, object]) -> bool:
    if isinstance(node, Comparison):
        left = _eval_term(node.left, aggregates, params)
        right = _eval_term(node.right, aggregates, params)
        return _CMP[node.op](left, right)
    if isinstance(node, Not):
        return not evaluate_criterion(node.operand, aggregates, params)
    if isinstance(node, And):
        return all(evaluate_criterion(p, aggregates, params) for p in node.parts)
    return any(evaluate_criterion(p, aggregates, params) for p in node.parts)
