"""
Expression mini-language for targets, bounds and manufactured solutions.

Expressions are formulas in x1, x2 built from arithmetic, sin, cos, exp,
abs, min, max and pi, e.g. ``"sin(pi*x1)*sin(pi*x2)"``.
"""
from functools import lru_cache
from tokenize import TokenError
import logging

import numpy as np
import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations
from django.core.exceptions import ValidationError

from .exporters import read_field_csv
from .grid import BoundaryField, Field

logger = logging.getLogger(__name__)

X1, X2 = sympy.symbols('x1 x2', real=True)

NAMESPACE = {
    'x1': X1,
    'x2': X2,
    'sin': sympy.sin,
    'cos': sympy.cos,
    'exp': sympy.exp,
    'abs': sympy.Abs,
    'min': sympy.Min,
    'max': sympy.Max,
    'pi': sympy.pi,
}

_PARSER_GLOBALS = {
    'Integer': sympy.Integer,
    'Float': sympy.Float,
    'Rational': sympy.Rational,
    'Symbol': sympy.Symbol,
}


@lru_cache(maxsize=256)
def parse_expression(text):
    """Parse text into a sympy expression in x1, x2."""
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("An expression must be a nonempty string.")
    try:
        expr = parse_expr(
            text, local_dict=dict(NAMESPACE), global_dict=dict(_PARSER_GLOBALS),
            transformations=standard_transformations, evaluate=True,
        )
    except (SyntaxError, TokenError, TypeError, ValueError, AttributeError, NameError) as exc:
        raise ValidationError(f"Cannot parse expression '{text}': {exc}")
    if not isinstance(expr, sympy.Expr):
        raise ValidationError(f"Expression '{text}' is not a scalar formula.")
    unknown = expr.free_symbols - {X1, X2}
    if unknown:
        raise ValidationError(
            f"Expression '{text}' uses unknown names {sorted(str(s) for s in unknown)}; only x1 and x2 are variables."
        )
    return expr


def compile_expression(expr):
    """Vectorized numpy callable f(x1, x2) for an expression or its text."""
    if isinstance(expr, str):
        expr = parse_expression(expr)
    # min/max print as numpy.amin over a tuple, which breaks on scalar arguments
    expr = expr.rewrite(sympy.Piecewise) if expr.has(sympy.Min, sympy.Max) else expr
    return sympy.lambdify((X1, X2), expr, modules='numpy')


def sample_expression(grid, expr, boundary=False):
    """Sample an expression on all nodes (Field) or on the perimeter (BoundaryField)."""
    fn = compile_expression(expr)
    cls = BoundaryField if boundary else Field
    with np.errstate(divide='raise', invalid='raise', over='raise'):
        try:
            return cls.from_function(grid, fn)
        except FloatingPointError as exc:
            raise ValidationError(f"Expression '{expr}' cannot be evaluated on {grid}: {exc}")


def laplacian(expr):
    return sympy.diff(expr, X1, 2) + sympy.diff(expr, X2, 2)


def gradient(expr):
    return sympy.diff(expr, X1), sympy.diff(expr, X2)


def normal_derivative(grid, expr):
    """n . grad(expr) on the perimeter with the grid's outward normals (averaged at corners)."""
    g1, g2 = (sample_expression(grid, component, boundary=True) for component in gradient(expr))
    normals = grid.outward_normals
    return BoundaryField(grid, normals[:, 0] * g1.values + normals[:, 1] * g2.values)


class DataSource:
    """A grid function described by a constant, an expression or a CSV file."""

    def __init__(self, kind, value):
        self.kind = kind
        self.value = value

    def __str__(self):
        return f"{self.kind}:{self.value}"

    def __repr__(self):
        return f"DataSource({self.kind!r}, {self.value!r})"

    def sample(self, grid, boundary=False):
        cls = BoundaryField if boundary else Field
        if self.kind == 'constant':
            return cls.constant(grid, self.value)
        if self.kind == 'expression':
            return sample_expression(grid, self.value, boundary)
        data = read_field_csv(self.value, grid)
        if not isinstance(data, cls):
            raise ValidationError(f"{self.value} holds a {type(data).__name__}, expected a {cls.__name__}.")
        return data

    def as_config(self):
        if self.kind == 'csv':
            return {'csv': str(self.value)}
        return self.value
