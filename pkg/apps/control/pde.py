"""
Elliptic solvers for the discrete state equation

    A y + M_Omega d(y) = M_Omega u + M_Gamma v

and for its linearizations. Every linear solve is a Jacobi-preconditioned
conjugate gradient run on an SPD matrix A + M_Omega diag(a), a >= 0.
"""
from dataclasses import dataclass, field, asdict
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg
from django.conf import settings
from django.core.exceptions import ValidationError

from .constants import DIRECTION_ZERO_FACTOR, MINUS, PLUS
from .exceptions import NonConvergence
from .grid import Field, gamma_load, omega_load
from .nonsmooth import lipschitz_bound, one_sided_slopes, pc1_eval

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineSearch:
    c: float = 1e-4
    factor: float = 0.5
    max_backtracks: int = 30


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration caps shared by all solves of a run."""
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    line_search: LineSearch = field(default_factory=LineSearch)
    linear_tol: float = 1e-12
    linear_max_iter: int = None
    kink_branch: str = PLUS
    picard_max_iter: int = 2000
    stagnation_ratio: float = 0.9
    stagnation_window: int = 5

    def __post_init__(self):
        self.clean()

    def clean(self):
        if self.newton_tol <= 0 or self.linear_tol <= 0:
            raise ValidationError("Solver tolerances must be positive.")
        if self.newton_max_iter < 1 or self.picard_max_iter < 1:
            raise ValidationError("Iteration caps must be at least 1.")
        if self.linear_max_iter is not None and self.linear_max_iter < 1:
            raise ValidationError("linear_max_iter must be at least 1.")
        if self.kink_branch not in (MINUS, PLUS):
            raise ValidationError(f"kink_branch must be '{MINUS}' or '{PLUS}', got '{self.kink_branch}'.")
        ls = self.line_search
        if not (0 < ls.c < 1 and 0 < ls.factor < 1 and ls.max_backtracks >= 1):
            raise ValidationError("Armijo parameters need 0 < c < 1, 0 < factor < 1, max_backtracks >= 1.")

    @classmethod
    def from_settings(cls, **overrides):
        """Defaults from settings.CONTROL_SOLVER, then explicit overrides."""
        conf = getattr(settings, 'CONTROL_SOLVER', {})
        values = {
            'newton_tol': conf.get('NEWTON_TOL', cls.newton_tol),
            'newton_max_iter': conf.get('NEWTON_MAX_ITER', cls.newton_max_iter),
            'linear_tol': conf.get('LINEAR_TOL', cls.linear_tol),
            'kink_branch': conf.get('KINK_BRANCH', cls.kink_branch),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if isinstance(values.get('line_search'), dict):
            values['line_search'] = LineSearch(**values['line_search'])
        return cls(**values)

    def max_linear_iter(self, n):
        return self.linear_max_iter or 10 * n

    def as_dict(self):
        return asdict(self)


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = np.inf
    converged: bool = False
    method: str = 'newton'
    picard_iterations: int = 0
    backtracks: int = 0
    linear_solves: int = 0
    linear_iterations: int = 0
    kink_nodes: int = 0

    def record_linear(self, iterations):
        self.linear_solves += 1
        self.linear_iterations += iterations

    def as_dict(self):
        return asdict(self)


def _cg(matrix, rhs, cfg):
    """Jacobi-preconditioned CG; returns (solution, iteration count)."""
    n = rhs.size
    inverse_diagonal = sp.diags(1.0 / matrix.diagonal())
    count = [0]

    def tick(_):
        count[0] += 1

    solution, info = cg(
        matrix, rhs, rtol=cfg.linear_tol, atol=0.0,
        maxiter=cfg.max_linear_iter(n), M=inverse_diagonal, callback=tick,
    )
    if info != 0:
        residual = np.linalg.norm(matrix @ solution - rhs) / max(np.linalg.norm(rhs), 1e-300)
        logger.error(f"CG failed after {count[0]} iterations (info={info}, relative residual {residual:.3e})")
        report = SolveReport(iterations=count[0], residual=residual, method='cg')
        raise NonConvergence(f"Linear solve did not converge (info={info}).", report=report)
    return solution, count[0]


def _check_grids(op, *functions):
    for f in functions:
        if f.grid != op.grid:
            raise ValueError(f"{type(f).__name__} lives on {f.grid}, operator on {op.grid}.")


def solve_coefficient(op, a, rhs, cfg, report=None):
    """Solve (A + M_Omega diag(a)) z = rhs for a nodal coefficient array a >= 0."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError(f"Reaction coefficient must be nonnegative, min a = {a.min():.6g}.")
    z, iterations = _cg(op.with_reaction(a), rhs, cfg)
    if report is not None:
        report.record_linear(iterations)
    return z


def solve_linear(op, a, f, h, cfg):
    """Solve (A + M_Omega diag(a)) z = M_Omega f + M_Gamma h."""
    _check_grids(op, a, f, h)
    rhs = omega_load(f) + gamma_load(h)
    return Field(op.grid, solve_coefficient(op, a.values, rhs, cfg))


def _relative_residual(residual, rhs):
    return np.linalg.norm(residual) / (1.0 + np.linalg.norm(rhs))


def _picard(op, d, y, u, v, rhs, cfg, report):
    """Monotone fixed-point sweep (A + lam W) y+ = W(u + lam y - d(y)) + M_Gamma v."""
    weights = op.grid.omega_weights
    boundary = gamma_load(v)
    for k in range(cfg.picard_max_iter):
        lam = lipschitz_bound(d, y.min(), y.max())
        source = weights * (u.values + lam * y - pc1_eval(d, y)) + boundary
        y = solve_coefficient(op, np.full(y.size, lam), source, cfg, report)
        residual = op.matrix @ y + weights * pc1_eval(d, y) - rhs
        report.picard_iterations = k + 1
        report.residual = _relative_residual(residual, rhs)
        logger.debug(f"Picard {k + 1}: lambda={lam:.3g}, residual {report.residual:.3e}")
        if report.residual <= cfg.newton_tol:
            report.converged = True
            break
    return y


def solve_state(op, d, u, v, cfg):
    """
    Semismooth Newton for the state equation, starting from y = 0.

    The Jacobian uses the active branch slope nodewise; nodes sitting exactly
    on the kink take the slope named by cfg.kink_branch. Steps are damped by
    Armijo backtracking on 1/2 |F|^2. When Newton stagnates the solve falls
    back to a monotone Picard iteration.
    """
    _check_grids(op, u, v)
    weights = op.grid.omega_weights
    rhs = omega_load(u) + gamma_load(v)
    report = SolveReport()
    ls = cfg.line_search

    def residual_of(y):
        return op.matrix @ y + weights * pc1_eval(d, y) - rhs

    y = np.zeros(op.grid.n_nodes)
    residual = residual_of(y)
    merit = 0.5 * residual @ residual
    report.residual = _relative_residual(residual, rhs)
    history = [report.residual]
    stagnated = False

    while report.residual > cfg.newton_tol:
        if report.iterations >= cfg.newton_max_iter:
            stagnated = True
            break
        slopes = d.derivative(y, cfg.kink_branch)
        step = solve_coefficient(op, slopes, -residual, cfg, report)
        t = 1.0
        for _ in range(ls.max_backtracks + 1):
            trial = y + t * step
            trial_residual = residual_of(trial)
            trial_merit = 0.5 * trial_residual @ trial_residual
            if trial_merit <= (1.0 - 2.0 * ls.c * t) * merit:
                break
            t *= ls.factor
            report.backtracks += 1
        else:
            logger.warning(f"Newton line search failed at iteration {report.iterations}; switching to Picard")
            stagnated = True
            break
        y, residual, merit = trial, trial_residual, trial_merit
        report.iterations += 1
        report.residual = _relative_residual(residual, rhs)
        history.append(report.residual)
        logger.debug(f"Newton {report.iterations}: step {t:.3g}, residual {report.residual:.3e}")
        window = cfg.stagnation_window
        if len(history) > window and history[-1] > cfg.stagnation_ratio * history[-1 - window]:
            logger.warning(f"Newton stagnated at residual {report.residual:.3e}; switching to Picard")
            stagnated = True
            break

    if stagnated:
        report.method = 'picard'
        y = _picard(op, d, y, u, v, rhs, cfg, report)
    else:
        report.converged = True

    report.kink_nodes = int(np.count_nonzero(y == d.t_bar))
    if not report.converged:
        logger.error(f"State solve failed: residual {report.residual:.3e} > {cfg.newton_tol:.1e}")
        raise NonConvergence(
            f"State equation did not converge (residual {report.residual:.3e}).", report=report
        )
    logger.debug(
        f"State solved by {report.method} in {report.iterations}+{report.picard_iterations} "
        f"iterations, residual {report.residual:.3e}"
    )
    return Field(op.grid, y), report


def solve_directional(op, d, y, f, h, cfg, delta=None):
    """
    Solve A s + M_Omega d'(y; s) = M_Omega f + M_Gamma h.

    Off the kink band d'(y; s) is linear in s. On the band the slope is d2'
    where s > 0 and d1' where s < 0, so the system is piecewise linear and a
    semismooth Newton step is a full linear solve with the current branch
    pattern. The pattern starts at cfg.kink_branch and the iteration stops as
    soon as it repeats. Band nodes where s is numerically zero keep their
    previous branch.
    """
    _check_grids(op, y, f, h)
    rhs = omega_load(f) + gamma_load(h)
    a_minus, a_plus, band = one_sided_slopes(d, y, delta)
    plus = np.full(band.shape, cfg.kink_branch == PLUS)
    report = SolveReport(method='active-set')

    while True:
        coefficient = np.where(band & ~plus, a_minus, a_plus)
        s = solve_coefficient(op, coefficient, rhs, cfg, report)
        report.iterations += 1
        zero_tol = DIRECTION_ZERO_FACTOR * np.abs(s).max()
        updated = np.where(s > zero_tol, True, np.where(s < -zero_tol, False, plus))
        if np.array_equal(updated[band], plus[band]):
            break
        if report.iterations >= cfg.newton_max_iter:
            break
        logger.debug(
            f"Directional solve {report.iterations}: {np.count_nonzero(updated[band] != plus[band])} band nodes switched"
        )
        plus = updated

    residual = op.matrix @ s + op.grid.omega_weights * coefficient * s - rhs
    report.residual = _relative_residual(residual, rhs)
    report.kink_nodes = int(np.count_nonzero(band))
    report.converged = np.array_equal(updated[band], plus[band]) and report.residual <= cfg.newton_tol
    if not report.converged:
        logger.error(f"Directional solve failed after {report.iterations} sweeps, residual {report.residual:.3e}")
        raise NonConvergence("Directional derivative system did not converge.", report=report)
    return Field(op.grid, s)

