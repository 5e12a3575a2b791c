"""Projected-gradient descent over the admissible set {u <= u_b, v <= v_b}."""
from dataclasses import dataclass, field, asdict
import logging

import numpy as np
from django.core.exceptions import ValidationError

from .exceptions import LineSearchFailure
from .grid import BoundaryField, Field, inner_gamma, inner_omega
from .objective import objective, reduced_gradient
from .operator import ControlPair, control_to_state

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OptimizeConfig:
    max_iters: int = 500
    c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    initial_step: float = 1.0
    tol: float = 1e-8
    # rounding allowance in the sufficient-decrease term, relative to 1 + |J|
    slack: float = 1e-12
    initial: ControlPair = None
    b_probes: int = 200
    seed: int = 0

    def __post_init__(self):
        self.clean()

    def clean(self):
        if self.max_iters < 0 or self.max_backtracks < 1:
            raise ValidationError("max_iters must be >= 0 and max_backtracks >= 1.")
        if not (0 < self.c < 1 and 0 < self.backtrack < 1):
            raise ValidationError("Armijo parameters need 0 < c < 1 and 0 < backtrack < 1.")
        if self.tol <= 0 or self.initial_step <= 0 or self.slack < 0:
            raise ValidationError("tol and initial_step must be positive, slack nonnegative.")


@dataclass
class TraceRow:
    iteration: int
    objective: float
    pg_norm: float
    step: float
    defect: float


@dataclass
class OptimizeTrace:
    rows: list = field(default_factory=list)
    converged: bool = False
    b_stat_min: float = None

    @property
    def iterations(self):
        return max(len(self.rows) - 1, 0)

    @property
    def final(self):
        return self.rows[-1] if self.rows else None

    def as_rows(self):
        return [asdict(row) for row in self.rows]


def project_admissible(spec, w):
    """Nodewise min(u, u_b), min(v, v_b); identity where a bound is infinite."""
    u = w.u if spec.u_b is None else Field(w.grid, np.minimum(w.u.values, spec.u_b.values))
    v = w.v if spec.v_b is None else BoundaryField(w.grid, np.minimum(w.v.values, spec.v_b.values))
    return ControlPair(u, v)


def pair_norm(w):
    return (inner_omega(w.u, w.u) + inner_gamma(w.v, w.v)) ** 0.5


def _pair_inner(a, b):
    return inner_omega(a.u, b.u) + inner_gamma(a.v, b.v)


def minimize(spec, cfg=None):
    """
    Projected gradient with Armijo backtracking:
    accept w_s = P(w - s g) when J(w_s) <= J(w) - (c / s) |w_s - w|^2.
    The slack only relaxes the decrease term; a trial with J(w_s) > J(w)
    is always rejected.

    Trial steps start from a Barzilai-Borwein estimate. Stops when the
    projected-gradient norm |w - P(w - g)| drops below cfg.tol.
    """
    cfg = cfg or OptimizeConfig()
    w = project_admissible(spec, cfg.initial or ControlPair.zeros(spec.grid))
    y = control_to_state(spec, w)
    value = objective(spec, w, y)
    trace = OptimizeTrace()
    step = cfg.initial_step
    previous = None

    for k in range(cfg.max_iters + 1):
        gradient = reduced_gradient(spec, w, y)
        g = ControlPair(gradient.gu, gradient.gv)
        pg_norm = pair_norm(w - project_admissible(spec, w - g))
        trace.rows.append(TraceRow(k, value, pg_norm, step if k else 0.0, gradient.defect))
        logger.debug(f"Iteration {k}: J={value:.12e}, |pg|={pg_norm:.3e}, defect={gradient.defect:.2e}")
        if pg_norm <= cfg.tol:
            trace.converged = True
            break
        if k == cfg.max_iters:
            break

        if previous is not None:
            dw, dg = w - previous[0], g - previous[1]
            curvature = _pair_inner(dw, dg)
            if curvature > 0:
                step = min(max(_pair_inner(dw, dw) / curvature, 1e-10), 1e10)
        previous = (w, g)

        for _ in range(cfg.max_backtracks):
            trial = project_admissible(spec, w - step * g)
            y_trial = control_to_state(spec, trial)
            trial_value = objective(spec, trial, y_trial)
            decrease = cfg.c / step * pair_norm(trial - w) ** 2
            sufficient = trial_value <= value - decrease + cfg.slack * (1.0 + abs(value))
            if sufficient and trial_value <= value:
                break
            step *= cfg.backtrack
        else:
            logger.error(f"Line search failed at iteration {k} (J={value:.6e}, |pg|={pg_norm:.3e})")
            raise LineSearchFailure(f"No Armijo step found at iteration {k}.", trace=trace)
        w, y, value = trial, y_trial, trial_value

    if trace.converged:
        logger.info(f"Projected gradient converged in {trace.iterations} iterations, J={value:.10e}")
    else:
        logger.warning(f"Projected gradient stopped at max_iters={cfg.max_iters}, |pg|={trace.final.pg_norm:.3e}")

    if cfg.b_probes:
        from .stationarity import check_b_stationarity
        trace.b_stat_min = check_b_stationarity(spec, w, cfg.b_probes, cfg.seed, y=y).min_value
    return w, trace
