"""Arithmetic expression evaluator: a recursive-descent parser over the
grammar

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := power
    power  := unary ('^' power)?     # right-associative
    unary  := '-' unary | atom
    atom   := number | '(' expr ')'

with IEEE double arithmetic. Unary minus binds tighter than the '^' base, so
-2^2 evaluates to 4. Errors carry the offending position.
"""

from __future__ import annotations

import math

from .core import EngineError


class CalcError(EngineError):
    pass


class ParseError(CalcError):
    def __init__(self, position: int, expected: str):
        super().__init__(f"parse error at position {position}: expected {expected}")
        self.position = position
        self.expected = expected


class DivisionByZero(CalcError):
    def __init__(self) -> None:
        super().__init__("division by zero")


class Overflow(CalcError):
    def __init__(self) -> None:
        super().__init__("arithmetic overflow: result is not a finite real")


_DIGITS = "0123456789"


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, char: str) -> bool:
        if self.peek() == char:
            self.pos += 1
            return True
        return False

    def expr(self) -> float:
        value = self.term()
        while True:
            if self.take("+"):
                value = _fin(value + self.term())
            elif self.take("-"):
                value = _fin(value - self.term())
            else:
                return value

    def term(self) -> float:
        value = self.factor()
        while True:
            if self.take("*"):
                value = _fin(value * self.factor())
            elif self.take("/"):
                denom = self.factor()
                if denom == 0.0:
                    raise DivisionByZero()
                value = _fin(value / denom)
            else:
                return value

    def factor(self) -> float:
        return self.power()

    def power(self) -> float:
        base = self.unary()
        if self.take("^"):
            exponent = self.power()  # right-associative
            try:
                value = base ** exponent
            except ZeroDivisionError:
                raise DivisionByZero() from None
            except OverflowError:
                raise Overflow() from None
            if isinstance(value, complex):
                raise Overflow()
            return _fin(value)
        return base

    def unary(self) -> float:
        if self.take("-"):
            return -self.unary()
        return self.atom()

    def atom(self) -> float:
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            value = self.expr()
            if not self.take(")"):
                raise ParseError(self.pos, "')'")
            return value
        if ch in _DIGITS or ch == ".":
            return self.number()
        raise ParseError(self.pos, "number or '('")

    def number(self) -> float:
        start = self.pos
        text = self.text
        n = len(text)
        while self.pos < n and text[self.pos] in _DIGITS:
            self.pos += 1
        if self.pos < n and text[self.pos] == ".":
            self.pos += 1
            while self.pos < n and text[self.pos] in _DIGITS:
                self.pos += 1
        if self.pos < n and text[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < n and text[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and text[self.pos] in _DIGITS:
                while self.pos < n and text[self.pos] in _DIGITS:
                    self.pos += 1
            else:
                self.pos = mark  # not an exponent after all
        lexeme = text[start:self.pos]
        try:
            return float(lexeme)
        except ValueError:
            raise ParseError(start, "number") from None


def _fin(value: float) -> float:
    if not math.isfinite(value):
        raise Overflow()
    return value


def calc_eval(expr: str) -> float:
    """Evaluate an arithmetic expression; raises ParseError, DivisionByZero,
    or Overflow."""
    parser = _Parser(expr)
    value = parser.expr()
    parser.skip_ws()
    if parser.pos != len(expr):
        raise ParseError(parser.pos, "end of input")
    return value
