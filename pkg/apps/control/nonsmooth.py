"""
The piecewise-C1 nonlinearity d: two monotone branches d1 (t <= t_bar) and
d2 (t > t_bar) glued continuously at the kink t_bar.
"""
from dataclasses import dataclass
from functools import cached_property
import logging
import math

import numpy as np
from numpy.polynomial import Polynomial
from django.core.exceptions import ValidationError

from .constants import LEVEL_BAND_FACTOR, MINUS, PLUS
from .grid import Field, level_band

logger = logging.getLogger(__name__)

CONTINUITY_TOL = 1e-14


@dataclass(frozen=True)
class Branch:
    """Monotone affine or cubic branch, coefficients in ascending powers of t."""
    coefficients: tuple

    def __post_init__(self):
        object.__setattr__(self, 'coefficients', tuple(float(c) for c in self.coefficients))
        self.clean()

    def clean(self):
        c = self.coefficients + (0.0,) * (4 - len(self.coefficients))
        if len(self.coefficients) == 0 or len(self.coefficients) > 4:
            raise ValidationError(f"A branch needs 1 to 4 coefficients, got {len(self.coefficients)}.")
        if not all(math.isfinite(v) for v in c):
            raise ValidationError("Branch coefficients must be finite.")
        _, c1, c2, c3 = c
        # slope c1 + 2 c2 t + 3 c3 t^2 must be nonnegative for every t
        if c3 == 0.0:
            monotone = c2 == 0.0 and c1 >= 0.0
        else:
            monotone = c3 > 0.0 and c2 * c2 <= 3.0 * c3 * c1
        if not monotone:
            raise ValidationError(f"Branch {self.coefficients} is not monotonically increasing.")

    @cached_property
    def polynomial(self):
        return Polynomial(self.coefficients)

    @cached_property
    def derivative(self):
        return self.polynomial.deriv()

    def value(self, t):
        return self.polynomial(t)

    def slope(self, t):
        return self.derivative(t)

    def slope_range(self, lo, hi):
        """(min, max) of the slope over [lo, hi]."""
        points = [lo, hi]
        c = self.coefficients + (0.0,) * (4 - len(self.coefficients))
        if c[3] != 0.0:
            vertex = -c[2] / (3.0 * c[3])
            if lo < vertex < hi:
                points.append(vertex)
        slopes = self.slope(np.array(points, dtype=float))
        return float(slopes.min()), float(slopes.max())

    @classmethod
    def affine(cls, slope, value_at, at=0.0):
        """Line with the given slope through (at, value_at)."""
        return cls((value_at - slope * at, slope))


@dataclass(frozen=True)
class Pc1Function:
    """d(t) = d1(t) for t <= t_bar, d2(t) for t > t_bar"""
    d1: Branch
    d2: Branch
    t_bar: float
    name: str = 'branches'

    def __post_init__(self):
        object.__setattr__(self, 't_bar', float(self.t_bar))
        self.clean()

    def clean(self):
        if not math.isfinite(self.t_bar):
            raise ValidationError("The kink t_bar must be finite.")
        left, right = self.d1.value(self.t_bar), self.d2.value(self.t_bar)
        if abs(left - right) > CONTINUITY_TOL * max(1.0, abs(left)):
            raise ValidationError(
                f"Branches must meet at t_bar={self.t_bar}: d1={left!r}, d2={right!r}."
            )

    def __str__(self):
        return f"{self.name}(t_bar={self.t_bar})"

    @property
    def value_at_kink(self):
        return float(self.d1.value(self.t_bar))

    @property
    def left_slope(self):
        return float(self.d1.slope(self.t_bar))

    @property
    def right_slope(self):
        return float(self.d2.slope(self.t_bar))

    @property
    def slope_jump(self):
        """|d1'(t_bar) - d2'(t_bar)|, zero iff d is differentiable at the kink"""
        return abs(self.left_slope - self.right_slope)

    @property
    def is_differentiable(self):
        return self.slope_jump == 0.0

    def __call__(self, t):
        return pc1_eval(self, t)

    def derivative(self, t, kink_branch=PLUS):
        """Branch derivative; points with t == t_bar use the branch named by kink_branch."""
        t = np.asarray(t, dtype=float)
        left, right = self.d1.slope(t), self.d2.slope(t)
        at_kink = right if kink_branch == PLUS else left
        return np.where(t < self.t_bar, left, np.where(t > self.t_bar, right, at_kink))


def max0():
    return Pc1Function(Branch((0.0,)), Branch((0.0, 1.0)), 0.0, name='max0')


def kink(s1=1.0, s2=3.0, t_bar=0.0, value=0.0):
    """Two affine pieces with slopes s1, s2 meeting at (t_bar, value)."""
    if s1 < 0 or s2 < 0:
        raise ValidationError(f"Kink slopes must be nonnegative, got s1={s1}, s2={s2}.")
    return Pc1Function(
        Branch.affine(s1, value, t_bar), Branch.affine(s2, value, t_bar), t_bar, name='kink'
    )


def smooth(t_bar=0.0):
    """d(t) = t + t^3/3 on both sides; the differentiable control case."""
    branch = Branch((0.0, 1.0, 0.0, 1.0 / 3.0))
    return Pc1Function(branch, branch, t_bar, name='smooth')


def from_branches(d1, d2, t_bar=0.0):
    """Custom nonlinearity from two coefficient tables."""
    return Pc1Function(Branch(tuple(d1)), Branch(tuple(d2)), t_bar, name='branches')


CATALOGUE = {
    'max0': max0,
    'kink': kink,
    'smooth': smooth,
    'branches': from_branches,
}


def build_pc1(kind, params=None):
    """Instantiate a catalogue entry from its JSON {kind, params} form."""
    try:
        factory = CATALOGUE[kind]
    except KeyError:
        raise ValidationError(f"Unknown nonlinearity '{kind}'; choose from {sorted(CATALOGUE)}.")
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ValidationError(f"Bad parameters for '{kind}': {exc}")


def pc1_eval(d, t):
    t = np.asarray(t, dtype=float)
    result = np.where(t <= d.t_bar, d.d1.value(t), d.d2.value(t))
    return float(result) if result.ndim == 0 else result


def pc1_dir_deriv(d, t, s):
    """d'(t; s); the kink test is exact equality t == t_bar."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    left, right = d.d1.slope(t) * s, d.d2.slope(t) * s
    at_kink = np.where(s < 0, left, np.where(s > 0, right, 0.0))
    result = np.where(t < d.t_bar, left, np.where(t > d.t_bar, right, at_kink))
    return float(result) if result.ndim == 0 else result


def bouligand_subdiff(d, t):
    """Sorted tuple of the one or two Bouligand derivatives at t."""
    if t != d.t_bar:
        return (float(d.derivative(t)),)
    return tuple(sorted({d.left_slope, d.right_slope}))


def clarke_interval(d, t):
    elements = bouligand_subdiff(d, t)
    return elements[0], elements[-1]


def lipschitz_bound(d, a, b):
    """Largest branch slope on the hull of {a, b}: |d(a) - d(b)| <= L |a - b|."""
    lo, hi = min(a, b), max(a, b)
    bound = 0.0
    if lo <= d.t_bar:
        bound = max(bound, d.d1.slope_range(lo, min(hi, d.t_bar))[1])
    if hi >= d.t_bar:
        bound = max(bound, d.d2.slope_range(max(lo, d.t_bar), hi)[1])
    return bound


def level_delta(y, factor=LEVEL_BAND_FACTOR):
    """Band half-width for exact level membership; zero (bit equality) for constant y."""
    return factor * y.spread


def kink_mask(d, y, delta=None):
    return level_band(y, d.t_bar, level_delta(y) if delta is None else delta)


def one_sided_slopes(d, y, delta=None):
    """
    Nodal arrays (a_minus, a_plus, band) with band = {|y - t_bar| <= delta}.

    a_minus takes d1' on {y <= t_bar + delta} and d2' above; a_plus takes d1'
    on {y < t_bar - delta} and d2' from there on. Both agree off the band.
    """
    if delta is None:
        delta = level_delta(y)
    values = y.values
    left, right = d.d1.slope(values), d.d2.slope(values)
    a_minus = np.where(values <= d.t_bar + delta, left, right)
    a_plus = np.where(values < d.t_bar - delta, left, right)
    band = level_band(y, d.t_bar, delta)
    return a_minus, a_plus, band


def superpose(d, y):
    """Nodewise d(y)."""
    return Field(y.grid, pc1_eval(d, y.values))


def superpose_deriv(d, y, branch=None, kink_branch=PLUS):
    """
    Nodewise branch derivatives of d along y.

    branch=MINUS gives d1'(y) everywhere, branch=PLUS gives d2'(y); the
    default follows y, with kink_branch deciding nodes where y == t_bar.
    """
    if branch == MINUS:
        return Field(y.grid, d.d1.slope(y.values))
    if branch == PLUS:
        return Field(y.grid, d.d2.slope(y.values))
    return Field(y.grid, d.derivative(y.values, kink_branch))


def superpose_dir_deriv(d, y, s, delta=None):
    """Nodewise d'(y; s) with kink membership decided by the level band."""
    band = kink_mask(d, y, delta)
    t = np.where(band, d.t_bar, y.values)
    left, right = d.d1.slope(y.values) * s.values, d.d2.slope(y.values) * s.values
    at_kink = np.where(s.values < 0, left, np.where(s.values > 0, right, 0.0))
    return Field(y.grid, np.where(t < d.t_bar, left, np.where(t > d.t_bar, right, at_kink)))


def clarke_selection_residual(d, y, a, delta=None):
    """Max distance of the nodal coefficient a to the Clarke interval of d at y."""
    a_minus, a_plus, _ = one_sided_slopes(d, y, delta)
    lo, hi = np.minimum(a_minus, a_plus), np.maximum(a_minus, a_plus)
    values = a.values
    gap = np.maximum(lo - values, 0.0) + np.maximum(values - hi, 0.0)
    return float(gap.max())
