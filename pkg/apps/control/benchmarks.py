"""
Manufactured problems with known structure, used by the tests and the
convergence-study / benchmark configs.
"""
from dataclasses import dataclass
import logging
import math

import numpy as np
from django.core.exceptions import ValidationError

from .expressions import laplacian, normal_derivative, parse_expression, sample_expression
from .grid import BoundaryField, Field, assemble_robin, build_grid, norm_omega, trace
from .nonsmooth import max0, one_sided_slopes, smooth, superpose
from .objective import ProblemSpec
from .operator import ControlPair, control_to_state
from .pde import SolverConfig

logger = logging.getLogger(__name__)

SMOOTH_SOLUTION = 'sin(pi*x1)*sin(pi*x2)'
# state profiles right of the kink line x1 = 1/2
KINK_STATES = {
    'cubic': '-max(x1 - 0.5, 0)**3',
    'linear': '-max(x1 - 0.5, 0)',
}


@dataclass(eq=False)
class Benchmark:
    """A problem together with its known stationary point, when one is known."""
    spec: ProblemSpec
    w_bar: ControlPair = None
    y_bar: Field = None
    p_tilde: Field = None
    description: str = ''


def manufactured_state(grid, pc1, b, solution=SMOOTH_SOLUTION):
    """Exact state y* and the controls u = -Lap y* + d(y*), v = dy*/dn + b y*."""
    expr = parse_expression(solution)
    y = sample_expression(grid, expr)
    u = sample_expression(grid, -laplacian(expr)) + superpose(pc1, y)
    v = normal_derivative(grid, expr) + b * trace(y)
    return y, ControlPair(u, v)


def unconstrained_smooth(nx=17, solver=None):
    grid = build_grid(nx, nx)
    spec = ProblemSpec(
        grid=grid,
        pc1=smooth(),
        y_omega=sample_expression(grid, SMOOTH_SOLUTION),
        y_gamma=BoundaryField.zeros(grid),
        alpha=1.0,
        kappa_omega=0.1,
        kappa_gamma=0.1,
        b=BoundaryField.constant(grid, 1.0),
        solver=solver or SolverConfig(),
        name='unconstrained_smooth',
    )
    return Benchmark(spec, description='Smooth nonlinearity, no control bounds.')


def bound_active(nx=17, solver=None):
    """Targets above every reachable state push the controls onto their bounds."""
    grid = build_grid(nx, nx)
    spec = ProblemSpec(
        grid=grid,
        pc1=smooth(),
        y_omega=Field.constant(grid, 1.0),
        y_gamma=BoundaryField.constant(grid, 1.0),
        alpha=1.0,
        kappa_omega=0.1,
        kappa_gamma=0.1,
        b=BoundaryField.constant(grid, 1.0),
        u_b=sample_expression(grid, '0.2 + 0.2*x1'),
        v_b=BoundaryField.constant(grid, 0.2),
        solver=solver or SolverConfig(),
        name='bound_active',
    )
    return Benchmark(spec, w_bar=spec.bound_pair, description='Upper bounds active everywhere.')


def bound_optimal(nx=17, solver=None):
    """max(t, 0) with the minimizer at the bound pair (0.5, 0.5); the state is constant 0.5."""
    grid = build_grid(nx, nx)
    spec = ProblemSpec(
        grid=grid,
        pc1=max0(),
        y_omega=Field.constant(grid, 2.0),
        y_gamma=BoundaryField.constant(grid, 2.0),
        alpha=1.0,
        kappa_omega=0.01,
        kappa_gamma=0.01,
        b=BoundaryField.constant(grid, 1.0),
        u_b=Field.constant(grid, 0.5),
        v_b=BoundaryField.constant(grid, 0.5),
        solver=solver or SolverConfig(),
        name='bound_optimal',
    )
    return Benchmark(
        spec, w_bar=spec.bound_pair, y_bar=Field.constant(grid, 0.5),
        description='Bound pair is optimal.',
    )


def kink_active(nx=33, kappa_omega=1.0, kappa_gamma=1.0, solver=None, profile='cubic'):
    """
    max(t, 0) with a stationary control whose state vanishes on {x1 <= 1/2}.

    The cubic profile y = -max(x1 - 1/2, 0)^3 leaves the kink with two
    continuous derivatives, so u matches d(t_bar) on the kink set up to
    O(h). Its first node right of the line sits only h^3 below the kink,
    though, and perturbations of size eps > h^3 push it across. The linear
    profile y = -max(x1 - 1/2, 0) keeps that gap at h; u then carries a
    1/h spike on the line x1 = 1/2.

    The adjoint p is fixed nodewise by p = -kappa_Omega u on Omega and
    trace p = -kappa_Gamma v on Gamma together with the discrete state
    equation, and y_Omega is then read off the minus-branch adjoint
    equation. p <= 0 on the kink set for both profiles, so the point is
    strongly stationary with the minus-branch coefficient.
    """
    if profile not in KINK_STATES:
        raise ValidationError(f"Unknown kink profile '{profile}'; choose from {sorted(KINK_STATES)}.")
    if nx % 2 == 0:
        raise ValidationError(f"kink_active needs an odd node count so x1 = 1/2 is a grid line, got {nx}.")
    grid = build_grid(nx, nx)
    pc1 = max0()
    b = BoundaryField.constant(grid, 1.0)
    op = assemble_robin(grid, b)
    y_bar = sample_expression(grid, KINK_STATES[profile])
    weights, bidx = grid.omega_weights, grid.boundary_index

    load = op.apply(y_bar) + weights * superpose(pc1, y_bar).values
    denominator = weights / kappa_omega
    denominator[bidx] += grid.gamma_weights / kappa_gamma
    p = -load / denominator
    w_bar = ControlPair(Field(grid, -p / kappa_omega), BoundaryField(grid, -p[bidx] / kappa_gamma))

    a_minus, _, _ = one_sided_slopes(pc1, y_bar)
    y_omega = y_bar.values - op.with_reaction(a_minus) @ p / weights
    spec = ProblemSpec(
        grid=grid,
        pc1=pc1,
        y_omega=Field(grid, y_omega),
        y_gamma=trace(y_bar),
        alpha=1.0,
        kappa_omega=kappa_omega,
        kappa_gamma=kappa_gamma,
        b=b,
        solver=solver or SolverConfig(),
        name='kink_active' if profile == 'cubic' else 'kink_edge',
    )
    logger.debug(f"kink_active on {grid}: p in [{p.min():.3e}, {p.max():.3e}]")
    return Benchmark(
        spec, w_bar=w_bar, y_bar=y_bar, p_tilde=Field(grid, p),
        description='State on the kink over half the domain; strongly stationary.',
    )


def kink_edge(nx=33, kappa_omega=1.0, kappa_gamma=1.0, solver=None):
    """kink_active with the state leaving the kink linearly, for the limit tests."""
    return kink_active(nx, kappa_omega, kappa_gamma, solver, profile='linear')


BENCHMARKS = {
    'unconstrained_smooth': unconstrained_smooth,
    'bound_active': bound_active,
    'bound_optimal': bound_optimal,
    'kink_active': kink_active,
    'kink_edge': kink_edge,
}


def build_benchmark(name, nx, solver=None):
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ValidationError(f"Unknown benchmark '{name}'; choose from {sorted(BENCHMARKS)}.")
    return factory(nx=nx, solver=solver)


@dataclass
class StudyRow:
    nx: int
    h: float
    error: float
    order: float = None


def convergence_study(nx_values, pc1=None, solution=SMOOTH_SOLUTION, b=1.0, solver=None):
    """L2 errors of the state solve against a manufactured solution and observed orders."""
    pc1 = pc1 or smooth()
    solver = solver or SolverConfig()
    rows = []
    for nx in nx_values:
        grid = build_grid(nx, nx)
        boundary = BoundaryField.constant(grid, b)
        y_exact, w = manufactured_state(grid, pc1, boundary, solution)
        spec = ProblemSpec(
            grid=grid, pc1=pc1, y_omega=Field.zeros(grid), y_gamma=BoundaryField.zeros(grid),
            alpha=0.0, kappa_omega=1.0, kappa_gamma=1.0, b=boundary, solver=solver,
            name='manufactured',
        )
        error = norm_omega(control_to_state(spec, w) - y_exact)
        row = StudyRow(nx=nx, h=grid.h, error=error)
        if rows and rows[-1].error > 0 and error > 0:
            row.order = math.log(rows[-1].error / error) / math.log(rows[-1].h / grid.h)
        rows.append(row)
        logger.info(f"nx={nx}: L2 error {error:.3e}" + (f", order {row.order:.2f}" if row.order else ''))
    return rows


def observed_orders(rows):
    return np.array([row.order for row in rows if row.order is not None])
