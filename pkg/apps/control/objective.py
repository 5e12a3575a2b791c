"""
Problem data and the reduced cost functional

    J(u, v) = 1/2 |y - y_Omega|^2 + alpha/2 |y - y_Gamma|^2_Gamma
              + kappa_Omega/2 |u|^2 + kappa_Gamma/2 |v|^2_Gamma,   y = S(u, v).
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
import logging

import numpy as np
from django.core.exceptions import ValidationError

from .constants import ACTIVE_BAND_FACTOR
from .grid import BoundaryField, Field, assemble_robin, inner_gamma, inner_omega, trace
from .operator import ControlPair, coefficients, control_to_state, dir_deriv, gateaux_defect
from .pde import SolverConfig, solve_linear

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    All data of one optimal control problem on a fixed grid.

    u_b / v_b set to None stand for an infinite upper bound.
    """
    grid: object
    pc1: object
    y_omega: Field
    y_gamma: BoundaryField
    alpha: float
    kappa_omega: float
    kappa_gamma: float
    b: BoundaryField
    u_b: Field = None
    v_b: BoundaryField = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    delta_level: float = None
    name: str = 'custom'

    def __post_init__(self):
        self.clean()

    def clean(self):
        errors = {}
        if not self.alpha >= 0:
            errors['alpha'] = f"alpha must be >= 0, got {self.alpha}."
        if not self.kappa_omega > 0:
            errors['kappa_omega'] = f"kappa_omega must be > 0, got {self.kappa_omega}."
        if not self.kappa_gamma > 0:
            errors['kappa_gamma'] = f"kappa_gamma must be > 0, got {self.kappa_gamma}."
        if self.b.min() <= 0:
            errors['b'] = f"b must satisfy b >= b0 > 0 on Gamma, min b = {self.b.min():.6g}."
        if self.delta_level is not None and self.delta_level < 0:
            errors['delta_level'] = "delta_level must be nonnegative."
        for name in ('y_omega', 'y_gamma', 'b', 'u_b', 'v_b'):
            value = getattr(self, name)
            if value is not None and value.grid != self.grid:
                errors[name] = f"{name} is defined on {value.grid}, expected {self.grid}."
        if errors:
            raise ValidationError(errors)

    def __str__(self):
        return f"{self.name} on {self.grid} with d={self.pc1}"

    @cached_property
    def robin(self):
        return assemble_robin(self.grid, self.b)

    @property
    def bounded(self):
        """Both bounds finite."""
        return self.u_b is not None and self.v_b is not None

    @property
    def bound_pair(self):
        if not self.bounded:
            raise ValueError(f"{self} has an infinite control bound.")
        return ControlPair(self.u_b, self.v_b)

    @property
    def active_tol(self):
        largest = max(
            self.u_b.max_abs() if self.u_b is not None else 0.0,
            self.v_b.max_abs() if self.v_b is not None else 0.0,
        )
        return ACTIVE_BAND_FACTOR * (1.0 + largest)

    def admissible(self, w, tol=0.0):
        u_ok = self.u_b is None or np.all(w.u.values <= self.u_b.values + tol)
        v_ok = self.v_b is None or np.all(w.v.values <= self.v_b.values + tol)
        return bool(u_ok and v_ok)

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class ObjectiveDifference:
    """Both sides of the exact expansion of J(w1) - J(w2)."""
    lhs: float
    rhs: float
    quadratic: float
    linear: float

    @property
    def gap(self):
        return abs(self.lhs - self.rhs)


@dataclass
class ReducedGradient:
    gu: Field
    gv: BoundaryField
    phi: Field
    is_gateaux: bool
    defect: float

    def pairing(self, f, h):
        return inner_omega(self.gu, f) + inner_gamma(self.gv, h)


def objective_terms(spec, w, y=None):
    if y is None:
        y = control_to_state(spec, w)
    misfit = y - spec.y_omega
    boundary_misfit = trace(y) - spec.y_gamma
    return {
        'tracking': 0.5 * inner_omega(misfit, misfit),
        'boundary_tracking': 0.5 * spec.alpha * inner_gamma(boundary_misfit, boundary_misfit),
        'control_cost': 0.5 * spec.kappa_omega * inner_omega(w.u, w.u),
        'boundary_control_cost': 0.5 * spec.kappa_gamma * inner_gamma(w.v, w.v),
    }


def objective(spec, w, y=None):
    return sum(objective_terms(spec, w, y).values())


def objective_dir_deriv(spec, w, f, h, y=None):
    """J'(w; f, h) through the one-sided state derivative."""
    if y is None:
        y = control_to_state(spec, w)
    s = dir_deriv(spec, w, y, f, h)
    return (
        inner_omega(y - spec.y_omega, s)
        + spec.alpha * inner_gamma(trace(y) - spec.y_gamma, trace(s))
        + spec.kappa_omega * inner_omega(w.u, f)
        + spec.kappa_gamma * inner_gamma(w.v, h)
    )


def objective_difference(spec, w1, w2, y1=None, y2=None):
    if y1 is None:
        y1 = control_to_state(spec, w1)
    if y2 is None:
        y2 = control_to_state(spec, w2)
    dy, dtr = y1 - y2, trace(y1) - trace(y2)
    du, dv = w1.u - w2.u, w1.v - w2.v
    quadratic = 0.5 * (
        inner_omega(dy, dy)
        + spec.alpha * inner_gamma(dtr, dtr)
        + spec.kappa_omega * inner_omega(du, du)
        + spec.kappa_gamma * inner_gamma(dv, dv)
    )
    linear = (
        inner_omega(y2 - spec.y_omega, dy)
        + spec.alpha * inner_gamma(trace(y2) - spec.y_gamma, dtr)
        + spec.kappa_omega * inner_omega(w2.u, du)
        + spec.kappa_gamma * inner_gamma(w2.v, dv)
    )
    lhs = objective(spec, w1, y1) - objective(spec, w2, y2)
    return ObjectiveDifference(lhs=lhs, rhs=quadratic + linear, quadratic=quadratic, linear=linear)


def adjoint_state(spec, y, a):
    """phi solving the linearized system with sources y - y_Omega and alpha (y - y_Gamma)."""
    return solve_linear(
        spec.robin, a, y - spec.y_omega, spec.alpha * (trace(y) - spec.y_gamma), spec.solver
    )


def reduced_gradient(spec, w, y=None, tol=0.0):
    """
    Gradient (gu, gv) of J at w with J'(w)(f, h) = <gu, f> + <gv, h>_Gamma.

    Away from Gateaux points the minus-branch coefficient is used as a
    surrogate and is_gateaux is False.
    """
    if y is None:
        y = control_to_state(spec, w)
    defect = gateaux_defect(spec, w, y)
    is_gateaux = defect <= tol
    if not is_gateaux:
        logger.warning(f"Gateaux defect {defect:.3e} > {tol:.1e}; using the minus-branch surrogate gradient")
    phi = adjoint_state(spec, y, coefficients(spec, y).a_minus)
    gu = phi + spec.kappa_omega * w.u
    gv = trace(phi) + spec.kappa_gamma * w.v
    return ReducedGradient(gu=gu, gv=gv, phi=phi, is_gateaux=is_gateaux, defect=defect)
