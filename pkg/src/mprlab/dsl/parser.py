"""Recursive-descent parser for plant and exosystem formulas.

Grammar (usual precedence, ``^`` binds tightest and takes a non-negative
integer literal)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | "+" unary | power
    power  := atom ("^" INT)?
    atom   := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"

``VAR`` is ``x1..xn``, ``u`` (or ``u1``) and ``w1..wk``; ``FUNC`` is one of
``sin``, ``cos``, ``exp``.  ``**`` is accepted as a synonym for ``^``.
"""

from __future__ import annotations

import math
import re

from .expr import UNARY_FUNCS, Binary, Const, Dims, Expr, Pow, Unary, Var

__all__ = ["ParseError", "parse_expr"]


class ParseError(ValueError):
    """Syntax or name error in a formula; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        pointer = f"\n  {source}\n  {' ' * position}^" if source else ""
        super().__init__(f"{message} at position {position}{pointer}")


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(src: str):
    pos = 0
    tokens = []
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ParseError(f"unexpected character {src[bad]!r}", bad, src)
        kind = m.lastgroup
        start = m.start(kind)
        text = m.group(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, dims: Dims | None):
        self.src = src
        self.dims = dims
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, t, pos = self.take()
        if t != text:
            found = "end of input" if kind == "end" else repr(t)
            raise ParseError(f"expected {text!r}, found {found}", pos, self.src)

    def parse(self) -> Expr:
        e = self.expr()
        kind, t, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {t!r}", pos, self.src)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-"):
            op = "add" if self.take()[1] == "+" else "sub"
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = "mul" if self.take()[1] == "*" else "div"
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        t = self.peek()[1]
        if t == "-":
            self.take()
            return Unary("neg", self.unary())
        if t == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            kind, t, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", t):
                raise ParseError("exponent must be a non-negative integer literal", pos, self.src)
            return Pow(base, int(t))
        return base

    def atom(self) -> Expr:
        kind, t, pos = self.take()
        if kind == "num":
            return Const(float(t))
        if kind == "name":
            if t in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(t, arg)
            if t == "pi":
                return Const(math.pi)
            return self.variable(t, pos)
        if t == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(t)
        raise ParseError(f"unexpected {found}", pos, self.src)

    def variable(self, name: str, pos: int) -> Var:
        m = re.fullmatch(r"([xuw])(\d*)", name)
        if m is None:
            raise ParseError(f"unknown identifier {name!r}", pos, self.src)
        cls, digits = m.group(1), m.group(2)
        if cls == "u":
            if digits not in ("", "1"):
                raise ParseError(f"only one control is supported, got {name!r}", pos, self.src)
            return Var("u", 1)
        if not digits:
            raise ParseError(f"{cls} needs an index, e.g. {cls}1", pos, self.src)
        index = int(digits)
        limit = None
        if self.dims is not None:
            limit = self.dims.n if cls == "x" else self.dims.k
        if index < 1 or (limit is not None and index > limit):
            raise ParseError(
                f"{name} is outside the declared range {cls}1..{cls}{limit}", pos, self.src
            )
        return Var(cls, index)


def parse_expr(src: str, dims: Dims | None = None) -> Expr:
    """Parse a formula; with ``dims`` given, variable indices are range-checked."""
    return _Parser(src, dims).parse()
