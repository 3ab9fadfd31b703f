"""Arithmetic expressions for user-defined fields.

Grammar: ``+ - * / ^`` (``**`` is accepted as well), parentheses, numeric
literals, variables ``x1 .. xn``, named parameters supplied by the caller, and
the functions ``sin cos exp log sqrt abs``.  Parsing goes through the
standard ``ast`` module with a node whitelist; evaluation is vectorized with
numpy over points of shape ``(..., n)``.
"""

import ast
import re

import numpy as np

from .core import MatrixFieldSpec, VectorFieldSpec
from .errors import ContractError

__all__ = ["Expression", "compile_expression", "vector_field_from_strings", "matrix_field_from_strings"]

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_VARIABLE = re.compile(r"^x([1-9][0-9]*)$")

_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """A compiled expression; call it with points of shape ``(..., dim)``."""

    def __init__(self, source, dim, params=None):
        self.source = source
        self.dim = dim
        self.params = dict(params or {})
        try:
            # '^' must become '**' before parsing: as XOR it binds looser than '+'
            tree = ast.parse(source.strip().replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ContractError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINARY:
                raise ContractError(f"operator {type(node.op).__name__} not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                raise ContractError(f"unary operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ContractError(f"unknown function in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise ContractError(f"functions take exactly one argument in {self.source!r}")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            match = _VARIABLE.match(node.id)
            if match:
                if int(match.group(1)) > self.dim:
                    raise ContractError(f"variable {node.id} exceeds dimension {self.dim} in {self.source!r}")
            elif node.id not in self.params:
                raise ContractError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ContractError(f"only numeric literals are allowed in {self.source!r}")
        else:
            raise ContractError(f"unsupported syntax {type(node).__name__} in {self.source!r}")

    def _eval(self, node, x):
        if isinstance(node, ast.BinOp):
            return _BINARY[type(node.op)](self._eval(node.left, x), self._eval(node.right, x))
        if isinstance(node, ast.UnaryOp):
            value = self._eval(node.operand, x)
            return -value if isinstance(node.op, ast.USub) else value
        if isinstance(node, ast.Call):
            return FUNCTIONS[node.func.id](self._eval(node.args[0], x))
        if isinstance(node, ast.Name):
            match = _VARIABLE.match(node.id)
            if match:
                return x[..., int(match.group(1)) - 1]
            return float(self.params[node.id])
        return float(node.value)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            value = self._eval(self._tree, x)
        return np.broadcast_to(np.asarray(value, dtype=float), x.shape[:-1])

    def __repr__(self):
        return f"Expression({self.source!r}, dim={self.dim})"


def compile_expression(source, dim, params=None):
    return Expression(str(source), dim, params)


def _compile_grid(strings, dim, params):
    return [[compile_expression(s, dim, params) for s in row] for row in strings]


def vector_field_from_strings(components, jacobian=None, domain=None, params=None):
    """Vector field from one expression per component.

    ``jacobian`` optionally gives ``d a^i / d x^j`` as a nested list ``[i][j]``.
    """
    components = list(components)
    dim = len(components)
    exprs = [compile_expression(s, dim, params) for s in components]

    def func(x):
        return np.stack([e(x) for e in exprs], axis=-1)

    jac = None
    if jacobian is not None:
        grid = _compile_grid(jacobian, dim, params)
        if len(grid) != dim or any(len(row) != dim for row in grid):
            raise ContractError("jacobian expressions must form a dim x dim grid")

        def jac(x):
            return np.stack([np.stack([e(x) for e in row], axis=-1) for row in grid], axis=-2)

    descriptor = {"drift": components, "drift_jacobian": jacobian, "params": dict(params or {})}
    return VectorFieldSpec(dim, func, jac, domain, descriptor)


def matrix_field_from_strings(entries, derivative=None, domain=None, params=None):
    """Noise matrix field from a nested list ``entries[i][k]`` of expressions.

    ``derivative`` optionally gives ``d b^ik / d x^j`` as ``[i][k][j]``.
    """
    entries = [list(row) for row in entries]
    rows, cols = len(entries), len(entries[0])
    if any(len(row) != cols for row in entries):
        raise ContractError("noise expressions must form a rectangular grid")
    grid = _compile_grid(entries, rows, params)

    def func(x):
        return np.stack([np.stack([e(x) for e in row], axis=-1) for row in grid], axis=-2)

    deriv = None
    if derivative is not None:
        cube = [[[compile_expression(s, rows, params) for s in cell] for cell in row] for row in derivative]
        if len(cube) != rows or any(len(row) != cols or any(len(c) != rows for c in row) for row in cube):
            raise ContractError("noise derivative expressions must have shape rows x cols x rows")

        def deriv(x):
            return np.stack(
                [np.stack([np.stack([e(x) for e in cell], axis=-1) for cell in row], axis=-2) for row in cube],
                axis=-3,
            )

    descriptor = {"noise": entries, "noise_derivative": derivative, "params": dict(params or {})}
    return MatrixFieldSpec(rows, cols, func, deriv, domain, descriptor)
