"""Vectorized arithmetic expressions for user-defined basis columns.

Supports numbers, variable names, ``+ - * /``, unary minus, and the functions
``exp``, ``max`` (elementwise, two or more arguments) and ``ncdf`` (standard
normal CDF). Anything else is rejected at parse time.
"""

from __future__ import annotations

import ast
from typing import Mapping

import numpy as np
from scipy.special import ndtr

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
}


def _max(*args):
    if len(args) < 2:
        raise ValueError("max() needs at least two arguments")
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


_FUNCS = {"exp": np.exp, "max": _max, "ncdf": ndtr}


class ExpressionError(ValueError):
    pass


class Expression:
    def __init__(self, source: str):
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unary {type(node.op).__name__} not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ExpressionError(f"unsupported call in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"non-numeric constant in {self.source!r}")
        elif not isinstance(node, ast.Name):
            raise ExpressionError(f"{type(node).__name__} not allowed in {self.source!r}")

    @property
    def names(self) -> set[str]:
        return {n.id for n in ast.walk(self._tree) if isinstance(n, ast.Name)} - set(_FUNCS)

    def __call__(self, env: Mapping[str, np.ndarray]):
        return self._eval(self._tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))
        if isinstance(node, ast.Constant):
            return float(node.value)
        try:
            return env[node.id]
        except KeyError:
            raise ExpressionError(f"unknown variable {node.id!r} in {self.source!r}; "
                                  f"available: {sorted(env)}") from None


def evaluate(source: str, env: Mapping[str, np.ndarray]):
    return Expression(source)(env)
