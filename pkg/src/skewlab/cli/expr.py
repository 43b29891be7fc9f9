"""Tiny expression language for coefficient functions.

Grammar (EBNF):

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

'^' is right-associative and binds tighter than unary minus, so -x^2
reads as -(x^2).  Built-in functions: exp, abs, tanh, sgn, min(a,b),
max(a,b), indicator(lo, hi, arg) with closed endpoints.  Free names are
the variables x and eps plus whatever the configuration's params table
supplies.  Evaluation is numpy-vectorized; division by zero and
0^negative are rejected with a positioned error.
"""

import re
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..errors import ExprEvalError, ExprSyntaxError
from ..piecewise import sgn

_FUNCTIONS = {
    "exp": (1, np.exp),
    "abs": (1, np.abs),
    "tanh": (1, np.tanh),
    "sgn": (1, sgn),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "indicator": (3, None),  # handled inline
}

_TOKEN_RE = re.compile(r"""
    (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
  | (?P<ws>\s+)
  | (?P<bad>.)
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # number | name | op | end
    text: str
    line: int
    col: int


def _tokenize(source):
    line, col = 1, 1
    out = []
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        text = m.group()
        if kind == "bad":
            raise ExprSyntaxError(f"unexpected character {text!r}", line, col)
        if kind != "ws":
            out.append(Token(kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
    out.append(Token("end", "", line, col))
    return out


@dataclass(frozen=True)
class Node:
    line: int = field(compare=False, default=0, kw_only=True)
    col: int = field(compare=False, default=0, kw_only=True)


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Name(Node):
    id: str


@dataclass(frozen=True)
class Neg(Node):
    arg: "Node"


@dataclass(frozen=True)
class Bin(Node):
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call(Node):
    fn: str
    args: Tuple["Node", ...]


class _Parser:
    def __init__(self, source):
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def cur(self):
        return self.tokens[self.pos]

    def _advance(self):
        tok = self.cur
        self.pos += 1
        return tok

    def _fail(self, expected):
        tok = self.cur
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {what}", tok.line, tok.col, expected=expected)

    def _eat_op(self, text):
        if self.cur.kind == "op" and self.cur.text == text:
            return self._advance()
        self._fail((f"'{text}'",))

    def parse(self):
        node = self.expr()
        if self.cur.kind != "end":
            self._fail(("operator", "end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self._advance()
            node = Bin(op.text, node, self.term(), line=op.line, col=op.col)
        return node

    def term(self):
        node = self.factor()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self._advance()
            node = Bin(op.text, node, self.factor(), line=op.line, col=op.col)
        return node

    def factor(self):
        if self.cur.kind == "op" and self.cur.text == "-":
            op = self._advance()
            return Neg(self.factor(), line=op.line, col=op.col)
        return self.power()

    def power(self):
        node = self.atom()
        if self.cur.kind == "op" and self.cur.text == "^":
            op = self._advance()
            node = Bin("^", node, self.factor(), line=op.line, col=op.col)
        return node

    def atom(self):
        tok = self.cur
        if tok.kind == "number":
            self._advance()
            return Num(float(tok.text), line=tok.line, col=tok.col)
        if tok.kind == "name":
            self._advance()
            if self.cur.kind == "op" and self.cur.text == "(":
                if tok.text not in _FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {tok.text!r}",
                                          tok.line, tok.col,
                                          expected=tuple(sorted(_FUNCTIONS)))
                self._advance()
                args = [self.expr()]
                while self.cur.kind == "op" and self.cur.text == ",":
                    self._advance()
                    args.append(self.expr())
                self._eat_op(")")
                arity = _FUNCTIONS[tok.text][0]
                if len(args) != arity:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {arity} argument(s), got {len(args)}",
                        tok.line, tok.col)
                return Call(tok.text, tuple(args), line=tok.line, col=tok.col)
            return Name(tok.text, line=tok.line, col=tok.col)
        if tok.kind == "op" and tok.text == "(":
            self._advance()
            node = self.expr()
            self._eat_op(")")
            return node
        self._fail(("number", "name", "'('", "'-'"))


def parse_expr(source: str) -> Node:
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 1, 1)
    return _Parser(source).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def to_source(node) -> str:
    """Print a parseable form; parse(to_source(parse(s))) is a fixed point."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Call):
        return node.fn + "(" + ", ".join(to_source(a) for a in node.args) + ")"
    if isinstance(node, Neg):
        inner = to_source(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(node, Bin):
        lp, rp = _prec(node.left), _prec(node.right)
        left, right = to_source(node.left), to_source(node.right)
        if node.op == "^":
            # grammar admits only atoms on the left of '^'
            if lp < _PREC["atom"]:
                left = f"({left})"
            if rp < _PREC["^"]:
                right = f"({right})"
        else:
            p = _PREC[node.op]
            if lp < p:
                left = f"({left})"
            # left-associative: parenthesize an equal-precedence right child
            if rp <= p:
                right = f"({right})"
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


def eval_expr(node, env):
    """Evaluate over an environment mapping names to scalars/arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name):
        try:
            val = env[node.id]
        except KeyError:
            raise ExprEvalError(f"unbound name {node.id!r}", node.line, node.col) from None
        if val is None:
            raise ExprEvalError(f"name {node.id!r} has no value here", node.line, node.col)
        return val
    if isinstance(node, Neg):
        return -eval_expr(node.arg, env)
    if isinstance(node, Bin):
        left = eval_expr(node.left, env)
        right = eval_expr(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            if np.any(np.asarray(right) == 0.0):
                raise ExprEvalError("division by zero", node.line, node.col)
            return left / right
        if node.op == "^":
            if np.any((np.asarray(left) == 0.0) & (np.asarray(right) < 0.0)):
                raise ExprEvalError("0 raised to a negative power", node.line, node.col)
            return left ** right
    if isinstance(node, Call):
        args = [eval_expr(a, env) for a in node.args]
        if node.fn == "indicator":
            lo, hi, arg = args
            if np.ndim(arg) == 0:
                return 1.0 if lo <= arg <= hi else 0.0
            return np.where((arg >= lo) & (arg <= hi), 1.0, 0.0)
        return _FUNCTIONS[node.fn][1](*args)
    raise TypeError(f"not an expression node: {node!r}")


def free_names(node):
    if isinstance(node, Name):
        return {node.id}
    if isinstance(node, Neg):
        return free_names(node.arg)
    if isinstance(node, Bin):
        return free_names(node.left) | free_names(node.right)
    if isinstance(node, Call):
        out = set()
        for a in node.args:
            out |= free_names(a)
        return out
    return set()


def _num(v):
    return Num(float(v))


def _add(a, b):
    if isinstance(a, Num) and a.value == 0.0:
        return b
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a, b):
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value - b.value)
    if isinstance(a, Num) and a.value == 0.0:
        return Neg(b)
    return Bin("-", a, b)


def _mul(a, b):
    for u, v in ((a, b), (b, a)):
        if isinstance(u, Num):
            if u.value == 0.0:
                return _num(0.0)
            if u.value == 1.0:
                return v
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if isinstance(a, Num) and a.value == 0.0:
        return _num(0.0)
    if isinstance(b, Num) and b.value == 1.0:
        return a
    return Bin("/", a, b)


def derivative(node, var: str):
    """Symbolic derivative with respect to `var`.

    Supports the smooth fragment of the language (arithmetic, exp, tanh,
    and powers with a constant exponent); the kinked builtins (abs, sgn,
    min, max, indicator) are rejected, as are non-constant exponents.
    Used to supply exact branch derivatives for piecewise maps defined by
    expressions.
    """
    if isinstance(node, Num):
        return _num(0.0)
    if isinstance(node, Name):
        return _num(1.0 if node.id == var else 0.0)
    if isinstance(node, Neg):
        return Neg(derivative(node.arg, var))
    if isinstance(node, Bin):
        da = derivative(node.left, var)
        db = derivative(node.right, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, node.right), _mul(node.left, db))
        if node.op == "/":
            num = _sub(_mul(da, node.right), _mul(node.left, db))
            return _div(num, _mul(node.right, node.right))
        if node.op == "^":
            if not isinstance(node.right, Num):
                raise ExprEvalError("cannot differentiate a non-constant exponent",
                                    node.line, node.col)
            n = node.right.value
            if n == 0.0:
                return _num(0.0)
            return _mul(_mul(_num(n), Bin("^", node.left, _num(n - 1.0))), da)
    if isinstance(node, Call):
        if node.fn == "exp":
            return _mul(Call("exp", node.args), derivative(node.args[0], var))
        if node.fn == "tanh":
            t = Call("tanh", node.args)
            return _mul(_sub(_num(1.0), _mul(t, t)), derivative(node.args[0], var))
        raise ExprEvalError(f"{node.fn} is not differentiable here", node.line, node.col)
    raise TypeError(f"not an expression node: {node!r}")
