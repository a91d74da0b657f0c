"""Fact-level visibility expressions and result-set redaction.

Every fact carries a boolean token expression in its metadata envelope that
controls who may see it, in the style of cell-level visibility labels. A
principal presents a set of tokens; a fact is disclosed iff its expression
evaluates true under that set. There is deliberately no negation operator:
denial is by absence of a token, which keeps disclosure monotone in the
token set.

Grammar (``&`` binds tighter than ``|``)::

    expr   := term ('|' term)*
    term   := factor ('&' factor)*
    factor := TOKEN | '(' expr ')'
    TOKEN  := [A-Za-z0-9_.:-]+

Empty or whitespace-only input is the Public expression, visible to all.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

TOKEN_RE = re.compile(r"[A-Za-z0-9_.:\-]+")


class VisibilityError(ValueError):
    """Syntax error in a visibility expression, with a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Public:
    """The empty expression: visible to everyone."""


@dataclass(frozen=True)
class Token:
    name: str


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And requires at least 2 children")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or requires at least 2 children")


VisibilityExpr = "Public | Token | And | Or"

PUBLIC = Public()


@dataclass(frozen=True)
class AuthContext:
    """The token set a principal presents when querying."""

    principal: str = ""
    tokens: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for t in self.tokens:
            if not TOKEN_RE.fullmatch(t):
                raise ValueError(f"illegal token name {t!r}")
        object.__setattr__(self, "tokens", frozenset(self.tokens))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expr(self):
        terms = [self.term()]
        self.skip_ws()
        while self.peek() == "|":
            self.pos += 1
            terms.append(self.term())
            self.skip_ws()
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def term(self):
        factors = [self.factor()]
        self.skip_ws()
        while self.peek() == "&":
            self.pos += 1
            factors.append(self.factor())
            self.skip_ws()
        return factors[0] if len(factors) == 1 else And(tuple(factors))

    def factor(self):
        self.skip_ws()
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            inner = self.expr()
            self.skip_ws()
            if self.peek() != ")":
                raise VisibilityError("expected ')'", self.pos)
            self.pos += 1
            return inner
        m = TOKEN_RE.match(self.text, self.pos)
        if not m:
            if ch:
                raise VisibilityError(f"unexpected character {ch!r}", self.pos)
            raise VisibilityError("unexpected end of expression", self.pos)
        self.pos = m.end()
        return Token(m.group())


def parse_visibility(text: str):
    """Parse visibility text into an expression tree; empty input is Public."""
    if text is None or not text.strip():
        return PUBLIC
    p = _Parser(text)
    node = p.expr()
    p.skip_ws()
    if p.pos != len(p.text):
        raise VisibilityError(f"unexpected character {p.peek()!r}", p.pos)
    return node


def _print(node, parent: str) -> str:
    if isinstance(node, Public):
        return ""
    if isinstance(node, Token):
        return node.name
    if isinstance(node, And):
        return "&".join(_print(c, "and") for c in node.children)
    if isinstance(node, Or):
        inner = "|".join(_print(c, "or") for c in node.children)
        # '|' under '&' needs parentheses; '&' binds tighter everywhere else
        return f"({inner})" if parent == "and" else inner
    raise TypeError(f"not a visibility expression: {node!r}")


def print_visibility(expr) -> str:
    """Canonical minimal-parentheses text; parse(print(e)) == canonicalize(e)."""
    return _print(canonicalize(expr), "top")


def canonicalize(expr):
    """Flatten nested same-operator nodes and sort children by printed form."""
    if isinstance(expr, (Public, Token)):
        return expr
    if isinstance(expr, (And, Or)):
        op = type(expr)
        flat = []
        for child in expr.children:
            c = canonicalize(child)
            if isinstance(c, op):
                flat.extend(c.children)
            else:
                flat.append(c)
        flat.sort(key=lambda n: _print(n, "top"))
        return op(tuple(flat))
    raise TypeError(f"not a visibility expression: {expr!r}")


def authorize(expr, auth: AuthContext) -> bool:
    """True iff the expression is satisfied by the presented token set."""
    if isinstance(expr, Public):
        return True
    if isinstance(expr, Token):
        return expr.name in auth.tokens
    if isinstance(expr, And):
        return all(authorize(c, auth) for c in expr.children)
    if isinstance(expr, Or):
        return any(authorize(c, auth) for c in expr.children)
    raise TypeError(f"not a visibility expression: {expr!r}")


def redact_facts(facts, auth: AuthContext) -> list:
    """The facts whose visibility authorizes under ``auth``, input order kept."""
    return [f for f in facts if authorize(f.envelope.visibility, auth)]
