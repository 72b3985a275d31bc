"""Declarative constraint expressions over template parameters.

The grammar is deliberately small: comparisons (``==``, ``!=``, ``<``, ``<=``,
``>``, ``>=``) between parameter names and literals, combined with ``&&``,
``||``, ``!`` and parentheses.  Expressions are translated token-by-token into
a Python expression, parsed with :mod:`ast`, checked against a whitelist and
then evaluated either on scalars (one assignment) or on numpy columns (a whole
block of assignments at once).
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field

import numpy as np

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<str>'[^']*'|"[^"]*")
      | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>==|!=|<=|>=|&&|\|\||<|>|!|\(|\)|-)
    )""",
    re.VERBOSE,
)

_TRANSLATE = {"&&": " and ", "||": " or ", "!": " not "}
_RESERVED = {"and", "or", "not", "True", "False", "None", "in", "is", "if", "else", "lambda"}

_COMPARE = {
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
}


class ConstraintSyntaxError(ValueError):
    """Raised when a constraint string falls outside the supported grammar."""


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            raise ConstraintSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = match.lastgroup
        tokens.append((kind, match.group(kind)))
        pos = match.end()
    return tokens


def _check(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body)
    elif isinstance(node, ast.BoolOp):
        for value in node.values:
            _check(value)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.Not, ast.USub)):
        if isinstance(node.op, ast.USub) and not isinstance(node.operand, ast.Constant):
            raise ConstraintSyntaxError("unary minus is only allowed on numeric literals")
        _check(node.operand)
    elif isinstance(node, ast.Compare):
        if not all(type(op) in _COMPARE for op in node.ops):
            raise ConstraintSyntaxError("unsupported comparison operator")
        _check(node.left)
        for comparator in node.comparators:
            _check(comparator)
    elif isinstance(node, ast.Name):
        pass
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float, str)):
        pass
    else:
        raise ConstraintSyntaxError(f"unsupported syntax: {type(node).__name__}")


@dataclass(frozen=True)
class Constraint:
    """A parsed constraint; call :meth:`holds` or :meth:`holds_many`."""

    text: str
    tree: ast.Expression = field(repr=False, compare=False)
    names: frozenset[str] = field(compare=False)

    def holds(self, values: dict) -> bool:
        return bool(_evaluate(self.tree.body, values))

    def holds_many(self, columns: dict[str, np.ndarray]) -> np.ndarray:
        """Evaluate on equal-length columns; returns a boolean mask."""
        size = len(next(iter(columns.values()))) if columns else 1
        return np.broadcast_to(np.asarray(_evaluate(self.tree.body, columns), dtype=bool), (size,))


def parse_constraint(text: str) -> Constraint:
    """Parse ``text`` into a :class:`Constraint`.

    >>> parse_constraint("!(depth > 8 && children > 3)").holds({"depth": 9, "children": 4})
    False
    """
    pieces = []
    names = set()
    for kind, tok in _tokenize(text):
        if kind == "name":
            if tok in _RESERVED:
                raise ConstraintSyntaxError(f"reserved word {tok!r}")
            names.add(tok)
            pieces.append(tok)
        elif kind == "op":
            pieces.append(_TRANSLATE.get(tok, tok))
        else:
            pieces.append(tok)
    if not pieces:
        raise ConstraintSyntaxError("empty constraint")
    try:
        tree = ast.parse(" ".join(pieces).strip(), mode="eval")
    except SyntaxError as exc:
        raise ConstraintSyntaxError(f"cannot parse {text!r}: {exc.msg}") from None
    _check(tree)
    return Constraint(text=text, tree=tree, names=frozenset(names))


def _evaluate(node: ast.AST, env: dict):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        operand = _evaluate(node.operand, env)
        return np.logical_not(operand) if isinstance(node.op, ast.Not) else -operand
    if isinstance(node, ast.BoolOp):
        combine = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
        result = _evaluate(node.values[0], env)
        for value in node.values[1:]:
            result = combine(result, _evaluate(value, env))
        return result
    if isinstance(node, ast.Compare):
        left = _evaluate(node.left, env)
        result = True
        for op, comparator in zip(node.ops, node.comparators):
            right = _evaluate(comparator, env)
            result = np.logical_and(result, _COMPARE[type(op)](left, right))
            left = right
        return result
    raise ConstraintSyntaxError(f"unsupported syntax: {type(node).__name__}")
