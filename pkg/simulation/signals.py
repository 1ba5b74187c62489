"""Time-signal expressions such as ``1+0.5*sin(pi*t)``.

Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ['-'] atom
    atom   := number | 't' | 'pi' | func '(' expr ')' | '(' expr ')'
    func   := 'sin' | 'cos' | 'exp'

Parsing yields an immutable expression tree that prints back to text which parses to
the same tree, evaluates vectorized over numpy time arrays and differentiates in t.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pyparsing import (Forward, Keyword, Literal, Optional, ParseBaseException, ParserElement, Regex,
                       Suppress, ZeroOrMore)

from errors import DiffPassError

logger = logging.getLogger(__name__)

ParserElement.enable_packrat()

FUNCTIONS = {'sin': np.sin, 'cos': np.cos, 'exp': np.exp}

_SUM, _PRODUCT, _ATOM = 1, 2, 3


class SignalParseError(DiffPassError):
    """Raised for text outside the signal grammar; ``position`` is the 0-based offset."""

    def __init__(self, message, text="", position=0):
        super().__init__(message)
        self.text = text
        self.position = position

    def caret(self):
        return f"{self.text}\n{' ' * self.position}^"

    def __str__(self):
        return f"{self.args[0]} (at offset {self.position})\n{self.caret()}"


class SignalExpr:
    """Base class of expression-tree nodes."""
    precedence = _ATOM

    def evaluate(self, t):
        raise NotImplementedError

    def derivative(self):
        raise NotImplementedError

    def __call__(self, t):
        return self.evaluate(t)


def _constant_like(t, value):
    return np.zeros_like(np.asarray(t, dtype=float)) + value


@dataclass(frozen=True)
class Const(SignalExpr):
    value: float

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0.0):
            raise ValueError(f"Const must be finite and non-negative, got {self.value}")

    def evaluate(self, t):
        return _constant_like(t, self.value)

    def derivative(self):
        return ZERO

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Time(SignalExpr):

    def evaluate(self, t):
        return np.asarray(t, dtype=float) + 0.0

    def derivative(self):
        return ONE

    def __str__(self):
        return "t"


@dataclass(frozen=True)
class Pi(SignalExpr):

    def evaluate(self, t):
        return _constant_like(t, np.pi)

    def derivative(self):
        return ZERO

    def __str__(self):
        return "pi"


@dataclass(frozen=True)
class Call(SignalExpr):
    name: str
    arg: SignalExpr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"Unknown function '{self.name}'")

    def evaluate(self, t):
        return FUNCTIONS[self.name](self.arg.evaluate(t))

    def derivative(self):
        inner = self.arg.derivative()
        if self.name == 'sin':
            outer = Call('cos', self.arg)
        elif self.name == 'cos':
            outer = negate(Call('sin', self.arg))
        else:
            outer = self
        return multiply(outer, inner)

    def __str__(self):
        return f"{self.name}({self.arg})"


@dataclass(frozen=True)
class Neg(SignalExpr):
    operand: SignalExpr

    def evaluate(self, t):
        return -self.operand.evaluate(t)

    def derivative(self):
        return negate(self.operand.derivative())

    def __str__(self):
        # the grammar only allows an atom after unary minus
        if isinstance(self.operand, (Neg, BinOp)):
            return f"-({self.operand})"
        return f"-{self.operand}"


@dataclass(frozen=True)
class BinOp(SignalExpr):
    op: str
    left: SignalExpr
    right: SignalExpr

    @property
    def precedence(self):
        return _SUM if self.op in '+-' else _PRODUCT

    def evaluate(self, t):
        a, b = self.left.evaluate(t), self.right.evaluate(t)
        if self.op == '+':
            return a + b
        if self.op == '-':
            return a - b
        if self.op == '*':
            return a * b
        with np.errstate(divide='ignore', invalid='ignore'):
            return a / b

    def derivative(self):
        da, db = self.left.derivative(), self.right.derivative()
        if self.op == '+':
            return add(da, db)
        if self.op == '-':
            return subtract(da, db)
        if self.op == '*':
            return add(multiply(da, self.right), multiply(self.left, db))
        numerator = subtract(multiply(da, self.right), multiply(self.left, db))
        return divide(numerator, BinOp('*', self.right, self.right))

    def __str__(self):
        left = str(self.left)
        right = str(self.right)
        if self.left.precedence < self.precedence:
            left = f"({left})"
        if self.right.precedence <= self.precedence:
            right = f"({right})"
        return f"{left}{self.op}{right}"


ZERO = Const(0.0)
ONE = Const(1.0)


def _is_const(node, value):
    return isinstance(node, Const) and node.value == value


def negate(a):
    if _is_const(a, 0.0):
        return ZERO
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(b, Neg):
        return BinOp('-', a, b.operand)
    return BinOp('+', a, b)


def subtract(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return negate(b)
    return BinOp('-', a, b)


def multiply(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp('*', a, b)


def divide(a, b):
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return BinOp('/', a, b)


def _fold(tokens):
    tokens = list(tokens)
    node = tokens[0]
    for op, operand in zip(tokens[1::2], tokens[2::2]):
        node = BinOp(op, node, operand)
    return node


def _make_grammar():
    lpar, rpar = Suppress("("), Suppress(")")
    number = Regex(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
    time = Keyword("t")
    pi = Keyword("pi")
    func = Keyword("sin") | Keyword("cos") | Keyword("exp")
    add_op = Literal("+") | Literal("-")
    mul_op = Literal("*") | Literal("/")

    expr = Forward()
    call = func + lpar - expr + rpar
    atom = number | call | time | pi | (lpar - expr + rpar)
    factor = Optional(Literal("-")) + atom
    term = factor + ZeroOrMore(mul_op - factor)
    expr <<= term + ZeroOrMore(add_op - term)

    number.set_parse_action(lambda toks: Const(float(toks[0])))
    time.set_parse_action(lambda toks: Time())
    pi.set_parse_action(lambda toks: Pi())
    call.set_parse_action(lambda toks: Call(toks[0], toks[1]))
    factor.set_parse_action(lambda toks: Neg(toks[1]) if len(toks) == 2 else toks[0])
    term.set_parse_action(_fold)
    expr.set_parse_action(_fold)
    return expr


_GRAMMAR = _make_grammar()


def parse_signal(text: str) -> SignalExpr:
    """Parses one channel; raises SignalParseError with the offending offset."""
    try:
        return _GRAMMAR.parse_string(text, parse_all=True)[0]
    except ParseBaseException as e:
        position = min(e.loc, len(text))
        logger.debug(f"Signal '{text}' rejected at offset {position}: {e.msg}")
        raise SignalParseError(f"Invalid signal expression: {e.msg}", text=text, position=position) from None
    except ValueError as e:
        raise SignalParseError(f"Invalid signal expression: {e}", text=text, position=0) from None


def parse_signals(texts: Sequence[str]):
    return [parse_signal(text) for text in texts]


def evaluate_channels(signals: Sequence[SignalExpr], t) -> np.ndarray:
    """Input vector (one entry per channel) at a scalar time."""
    return np.array([float(signal.evaluate(t)) for signal in signals])


def constant_signals(values) -> list:
    """Signals for a constant input vector (negative entries become unary minus)."""
    nodes = []
    for value in np.atleast_1d(values):
        node = Const(abs(float(value)))
        nodes.append(Neg(node) if value < 0 else node)
    return nodes


def check_finite(signals: Sequence[SignalExpr], times) -> None:
    for index, signal in enumerate(signals):
        values = signal.evaluate(times)
        if not np.all(np.isfinite(values)):
            bad = np.asarray(times)[~np.isfinite(values)][0]
            raise SignalParseError(f"Signal {index} '{signal}' is not finite at t = {bad}", text=str(signal))
