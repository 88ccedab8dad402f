"""Tiny arithmetic expression language for closed-form input data.

Initial profiles and surface charge densities enter run configs as strings
over a deliberately small grammar:

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := ('-'|'+') unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | FUNC '(' expr ')' | NAME | '(' expr ')'

Functions: sin, cos, exp.  Constants: pi, e.  Variables are whatever the
caller allows (typically x1..xn and, for interface charges, y1..yn).
Everything evaluates vectorized over numpy arrays; there is no eval() and
no access to anything outside the grammar.
"""

from __future__ import annotations

import re

import numpy as np

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTANTS = {"pi": np.pi, "e": np.e}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class ExpressionError(ValueError):
    """Raised for syntax errors or references to names outside the grammar."""


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise ExpressionError(f"unexpected character {rest[0]!r} in expression {text!r}")
        if match.group("num") is not None:
            tokens.append(("num", float(match.group("num"))))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    tokens.append(("end", None))
    return tokens


class Expression:
    """A compiled expression; callable on a dict of name -> ndarray."""

    def __init__(self, text, variables):
        self.text = text
        self.variables = tuple(variables)
        self._tokens = _tokenize(text)
        self._pos = 0
        self._ast = self._parse_expr()
        if self._peek() != ("end", None):
            kind, value = self._peek()
            raise ExpressionError(f"trailing input near {value!r} in expression {text!r}")

    # -- parser -------------------------------------------------------------

    def _peek(self):
        return self._tokens[self._pos]

    def _next(self):
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def _parse_expr(self):
        node = self._parse_term()
        while self._peek() == ("op", "+") or self._peek() == ("op", "-"):
            op = self._next()[1]
            node = (op, node, self._parse_term())
        return node

    def _parse_term(self):
        node = self._parse_unary()
        while self._peek() == ("op", "*") or self._peek() == ("op", "/"):
            op = self._next()[1]
            node = (op, node, self._parse_unary())
        return node

    def _parse_unary(self):
        if self._peek() == ("op", "-"):
            self._next()
            return ("neg", self._parse_unary())
        if self._peek() == ("op", "+"):
            self._next()
            return self._parse_unary()
        return self._parse_power()

    def _parse_power(self):
        base = self._parse_atom()
        if self._peek() == ("op", "^"):
            self._next()
            return ("^", base, self._parse_unary())
        return base

    def _parse_atom(self):
        kind, value = self._next()
        if kind == "num":
            return ("const", value)
        if kind == "name":
            if value in _FUNCTIONS:
                if self._next() != ("op", "("):
                    raise ExpressionError(f"expected '(' after function {value!r}")
                arg = self._parse_expr()
                if self._next() != ("op", ")"):
                    raise ExpressionError(f"missing ')' after argument of {value!r}")
                return ("call", value, arg)
            if value in _CONSTANTS:
                return ("const", _CONSTANTS[value])
            if value in self.variables:
                return ("var", value)
            raise ExpressionError(
                f"unknown name {value!r}; allowed variables: {', '.join(self.variables) or 'none'}"
            )
        if (kind, value) == ("op", "("):
            node = self._parse_expr()
            if self._next() != ("op", ")"):
                raise ExpressionError(f"missing ')' in expression {self.text!r}")
            return node
        raise ExpressionError(f"unexpected token {value!r} in expression {self.text!r}")

    # -- evaluation ---------------------------------------------------------

    def _eval(self, node, env):
        tag = node[0]
        if tag == "const":
            return node[1]
        if tag == "var":
            return env[node[1]]
        if tag == "neg":
            return -self._eval(node[1], env)
        if tag == "call":
            return _FUNCTIONS[node[1]](self._eval(node[2], env))
        left = self._eval(node[1], env)
        right = self._eval(node[2], env)
        if tag == "+":
            return left + right
        if tag == "-":
            return left - right
        if tag == "*":
            return left * right
        if tag == "/":
            return left / right
        if tag == "^":
            return left ** right
        raise AssertionError(f"corrupt AST node {tag!r}")

    def __call__(self, env):
        value = self._eval(self._ast, env)
        shape = None
        for array in env.values():
            shape = np.shape(array)
            break
        value = np.asarray(value, dtype=float)
        if shape is not None and value.shape != shape:
            value = np.broadcast_to(value, shape).copy()
        return value

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_expression(text, variables):
    """Compile ``text`` over the allowed ``variables``; raises ExpressionError."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("expression must be a non-empty string")
    return Expression(text, variables)
