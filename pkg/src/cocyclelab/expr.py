"""Closed-form scalar expressions in ``x1, x2`` for user cocycles.

Grammar (a subset of Python expression syntax)::

    expr   := expr ('+' | '-' | '*' | '/') expr | '-' expr | '+' expr
            | 'sin(' expr ')' | 'cos(' expr ')' | '(' expr ')' | atom
    atom   := number | 'x1' | 'x2' | 'pi'

Anything else (attribute access, other names, ``**``, comparisons) is
rejected at compile time.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

from .errors import ConfigError

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
}
_FUNCS = {"sin": np.sin, "cos": np.cos}


def _build(node: ast.AST, text: str) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(node, ast.Expression):
        return _build(node.body, text)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        value = float(node.value)
        return lambda x: np.full(x.shape[:-1], value)
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return lambda x: np.full(x.shape[:-1], np.pi)
        if node.id in ("x1", "x2"):
            k = int(node.id[1]) - 1
            return lambda x: x[..., k]
        raise ConfigError(f"unknown name {node.id!r} in expression {text!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left, right = _build(node.left, text), _build(node.right, text)
        return lambda x: op(left(x), right(x))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _build(node.operand, text)
        if isinstance(node.op, ast.USub):
            return lambda x: -inner(x)
        return inner
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCS
        and len(node.args) == 1
        and not node.keywords
    ):
        fn, arg = _FUNCS[node.func.id], _build(node.args[0], text)
        return lambda x: fn(arg(x))
    raise ConfigError(f"unsupported syntax in expression {text!r}")


def compile_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile ``text`` into a function of an ``(..., 2)`` point array."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return _build(tree, text)
