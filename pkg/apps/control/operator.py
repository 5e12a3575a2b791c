"""
The control-to-state map S, its directional derivative, the one-sided
generalized derivatives G_minus / G_plus with their adjoint, and the
perturbed-control limit tests.

Functions take a ProblemSpec (see objective.py) as first argument and only
use its data attributes, the assembled Robin operator and the solver config.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .constants import DEGENERATE_RESAMPLES, EPS_RESAMPLE_FACTOR, MINUS, PLUS, SIDE_CHOICES
from .grid import BoundaryField, Field, level_set_measure, norm_gamma, norm_h1, norm_omega, trace
from .nonsmooth import level_delta, one_sided_slopes, superpose
from .pde import solve_directional, solve_linear, solve_state

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlPair:
    """Distributed control u on Omega and boundary control v on Gamma."""
    u: Field
    v: BoundaryField

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValidationError(f"Control grids differ: {self.u.grid} vs {self.v.grid}.")

    @property
    def grid(self):
        return self.u.grid

    @classmethod
    def zeros(cls, grid):
        return cls(Field.zeros(grid), BoundaryField.zeros(grid))

    @classmethod
    def constant(cls, grid, u, v=None):
        return cls(Field.constant(grid, u), BoundaryField.constant(grid, u if v is None else v))

    def __add__(self, other):
        return ControlPair(self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return ControlPair(self.u - other.u, self.v - other.v)

    def __mul__(self, scalar):
        return ControlPair(self.u * scalar, self.v * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return ControlPair(-self.u, -self.v)

    def max_abs(self):
        return max(self.u.max_abs(), self.v.max_abs())

    def norm(self):
        """||u||_Omega + ||v||_Gamma"""
        return norm_omega(self.u) + norm_gamma(self.v)

    def equals(self, other, tol=0.0):
        return (self - other).max_abs() <= tol


@dataclass(frozen=True, eq=False)
class CoefficientPair:
    """One-sided reaction coefficients; they agree off kink_mask."""
    a_minus: Field
    a_plus: Field
    kink_mask: np.ndarray

    @property
    def band_nodes(self):
        return int(np.count_nonzero(self.kink_mask))

    def side(self, side):
        return self.a_minus if side == MINUS else self.a_plus


def _default_epsilons():
    return tuple(2.0 ** -k for k in range(3, 11))


@dataclass(frozen=True)
class BouligandLimitConfig:
    """Perturbation sequence eps_k and the coupling rho_k = eps_k / sigma (sqrt(eps_k) if sigma = 0)."""
    epsilons: tuple = field(default_factory=_default_epsilons)
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'epsilons', tuple(float(e) for e in self.epsilons))
        self.clean()

    def clean(self):
        eps = np.array(self.epsilons)
        if eps.size == 0:
            raise ValidationError("At least one epsilon is required.")
        if np.any(eps <= 0) or np.any(eps >= 1):
            raise ValidationError("Every epsilon must lie in (0, 1).")
        if np.any(np.diff(eps) >= 0):
            raise ValidationError("Epsilons must be strictly decreasing.")
        if self.sigma < 0:
            raise ValidationError(f"sigma must be nonnegative, got {self.sigma}.")

    def rho(self, eps):
        return eps / self.sigma if self.sigma > 0 else eps ** 0.5


@dataclass
class LimitRow:
    eps: float
    rho: float
    probe_id: int
    err_h1: float
    err_max: float
    degenerate: bool = False


@dataclass
class WSetResult:
    e_numeric: Field
    e_formula: Field
    rows: list


def _check_side(side):
    if side not in (MINUS, PLUS):
        raise ValueError(f"side must be one of {[s for s, _ in SIDE_CHOICES]}, got '{side}'.")


def probe_map(fn, items, workers=None):
    """Ordered map over independent probes, threaded when workers > 1."""
    workers = workers or getattr(settings, 'CONTROL_PROBE_WORKERS', 1)
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def band_delta(spec, y):
    return spec.delta_level if spec.delta_level is not None else level_delta(y)


def control_to_state(spec, w, with_report=False):
    y, report = solve_state(spec.robin, spec.pc1, w.u, w.v, spec.solver)
    return (y, report) if with_report else y


def coefficients(spec, y, delta_level=None):
    delta = band_delta(spec, y) if delta_level is None else delta_level
    a_minus, a_plus, band = one_sided_slopes(spec.pc1, y, delta)
    return CoefficientPair(Field(y.grid, a_minus), Field(y.grid, a_plus), band)


def dir_deriv(spec, w, y, f, h):
    """S'(w; f, h) at the state y = S(w)."""
    return solve_directional(spec.robin, spec.pc1, y, f, h, spec.solver, delta=band_delta(spec, y))


def g_side(spec, w, y, f, h, side):
    _check_side(side)
    return solve_linear(spec.robin, coefficients(spec, y).side(side), f, h, spec.solver)


def g_minus(spec, w, y, f, h):
    return g_side(spec, w, y, f, h, MINUS)


def g_plus(spec, w, y, f, h):
    return g_side(spec, w, y, f, h, PLUS)


def g_adjoint(spec, a, phi):
    """zeta = G* phi for coefficient a: the solve with interior source phi, no boundary source."""
    zeta = solve_linear(spec.robin, a, phi, BoundaryField.zeros(a.grid), spec.solver)
    return zeta, trace(zeta)


def solve_with_coefficient(spec, y, a, f, h, tol=1e-12):
    """Linearized solve for a coefficient squeezed between a_minus and a_plus."""
    pair = coefficients(spec, y)
    lo = np.minimum(pair.a_minus.values, pair.a_plus.values)
    hi = np.maximum(pair.a_minus.values, pair.a_plus.values)
    if np.any(a.values < lo - tol) or np.any(a.values > hi + tol):
        raise ValueError("Coefficient is not between a_minus and a_plus.")
    return solve_linear(spec.robin, a, f, h, spec.solver)


def perturb_controls(spec, w, eps, side):
    """minus: w - eps; plus: w + eps (bound - w), or w + eps where the bound is infinite."""
    _check_side(side)
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}.")
    if side == MINUS:
        return ControlPair(w.u - eps, w.v - eps)
    if spec.bounded and w.equals(spec.bound_pair):
        raise ValueError("The plus perturbation is undefined at w = (u_b, v_b).")
    u = w.u + eps * (spec.u_b - w.u) if spec.u_b is not None else w.u + eps
    v = w.v + eps * (spec.v_b - w.v) if spec.v_b is not None else w.v + eps
    return ControlPair(u, v)


def direction_weights(spec, w, side):
    """The nonnegative directions (u~, v~) moved along by perturb_controls."""
    if side == MINUS:
        return ControlPair.constant(w.grid, 1.0)
    u = spec.u_b - w.u if spec.u_b is not None else Field.constant(w.grid, 1.0)
    v = spec.v_b - w.v if spec.v_b is not None else BoundaryField.constant(w.grid, 1.0)
    return ControlPair(u, v)


def gateaux_defect(spec, w, y=None):
    """|d1'(t_bar) - d2'(t_bar)| times the measure of the kink band of S(w)."""
    if y is None:
        y = control_to_state(spec, w)
    return spec.pc1.slope_jump * level_set_measure(y, spec.pc1.t_bar, band_delta(spec, y))


def _perturbed_state(spec, w, eps, side):
    """Perturb w, resampling eps slightly while the perturbed state sits on the kink."""
    for attempt in range(DEGENERATE_RESAMPLES + 1):
        w_eps = perturb_controls(spec, w, eps, side)
        y_eps = control_to_state(spec, w_eps)
        if gateaux_defect(spec, w_eps, y_eps) == 0.0:
            return eps, w_eps, y_eps, False
        if attempt < DEGENERATE_RESAMPLES:
            logger.warning(f"eps={eps:.6g} is degenerate on side {side}; resampling")
            eps *= EPS_RESAMPLE_FACTOR
    logger.warning(f"eps={eps:.6g} stayed degenerate after {DEGENERATE_RESAMPLES} resamples")
    return eps, w_eps, y_eps, True


def bouligand_limit_test(spec, w, cfg, side, probes, y=None, workers=None):
    """
    Rows comparing S'(w_k)(f, h) with G_side(w)(f, h) along w_k = perturb_controls(w, eps_k).

    One row per (eps_k, probe); errors are discrete H1 and max norms.
    """
    _check_side(side)
    if y is None:
        y = control_to_state(spec, w)
    limits = probe_map(lambda probe: g_side(spec, w, y, probe[0], probe[1], side), probes, workers)
    rows = []
    for eps in cfg.epsilons:
        eps_used, w_k, y_k, degenerate = _perturbed_state(spec, w, eps, side)

        def error(indexed):
            probe_id, (f, h) = indexed
            diff = dir_deriv(spec, w_k, y_k, f, h) - limits[probe_id]
            return LimitRow(eps_used, cfg.rho(eps_used), probe_id, norm_h1(diff), diff.max_abs(), degenerate)

        batch = probe_map(error, enumerate(probes), workers)
        if batch:
            logger.debug(f"Limit test eps={eps_used:.3g} side={side}: max err {max(r.err_h1 for r in batch):.3e}")
        rows.extend(batch)
    return rows


def wset_limit_test(spec, w, cfg, side, f, h, y=None):
    """
    Compare eta_k / rho_k with its closed-form limit.

    eta_k = S(w_k + rho_k (f, h)) - S(w_k) - rho_k S'(w_k)(f, h); the limit is
    S'(w; f^, h^) - G_side(w)(f^, h^) with (f^, h^) = (f, h) -/+ sigma (u~, v~).
    """
    _check_side(side)
    if y is None:
        y = control_to_state(spec, w)
    e_formula = wset_formula(spec, w, y, cfg.sigma, side, f, h)
    direction = ControlPair(f, h)
    rows = []
    e_numeric = None
    for eps in cfg.epsilons:
        eps_used, w_k, y_k, degenerate = _perturbed_state(spec, w, eps, side)
        rho = cfg.rho(eps_used)
        y_shift = control_to_state(spec, w_k + rho * direction)
        eta = y_shift - y_k - rho * dir_deriv(spec, w_k, y_k, f, h)
        e_numeric = eta / rho
        diff = e_numeric - e_formula
        rows.append(LimitRow(eps_used, rho, 0, norm_h1(diff), diff.max_abs(), degenerate))
    return WSetResult(e_numeric, e_formula, rows)


def wset_formula(spec, w, y, sigma, side, f, h):
    weights = direction_weights(spec, w, side)
    sign = -1.0 if side == MINUS else 1.0
    f_hat = f + sign * sigma * weights.u
    h_hat = h + sign * sigma * weights.v
    return dir_deriv(spec, w, y, f_hat, h_hat) - g_side(spec, w, y, f_hat, h_hat, side)


def e_bound_rhs(spec, w, y, f, h, side):
    """
    Computable factor of the bound on the limit element:
    |d1' - d2'| * || z 1{z >= 0} 1{band} || with z = G_minus(f, h) (z <= 0 on the plus side).
    """
    z = g_side(spec, w, y, f, h, side)
    pair = coefficients(spec, y)
    sign_mask = z.values >= 0 if side == MINUS else z.values <= 0
    masked = Field(y.grid, np.where(sign_mask & pair.kink_mask, z.values, 0.0))
    return spec.pc1.slope_jump * norm_omega(masked)


def manufactured_controls(spec, y, v=None):
    """Controls (u, v) for which y is the exact discrete state; v defaults to zero."""
    grid = y.grid
    if v is None:
        v = BoundaryField.zeros(grid)
    load = spec.robin.apply(y) + grid.omega_weights * superpose(spec.pc1, y).values
    boundary = np.zeros(grid.n_nodes)
    boundary[grid.boundary_index] = grid.gamma_weights * v.values
    u = Field(grid, (load - boundary) / grid.omega_weights)
    return ControlPair(u, v)


def difference_quotient_test(spec, w, f, h, steps=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5), y=None):
    """||(S(w + t(f, h)) - S(w)) / t - S'(w; f, h)||_Omega for each t."""
    if y is None:
        y = control_to_state(spec, w)
    derivative = dir_deriv(spec, w, y, f, h)
    direction = ControlPair(f, h)
    errors = []
    for t in steps:
        quotient = (control_to_state(spec, w + t * direction) - y) / t
        errors.append(norm_omega(quotient - derivative))
    return errors


def lipschitz_estimate(spec, pairs):
    """Smallest L with ||y1 - y2|| <= L (||u1 - u2|| + ||v1 - v2||) over the given control pairs."""
    ratios = []
    for w1, w2 in pairs:
        gap = (w1 - w2).norm()
        if gap == 0:
            continue
        ratios.append(norm_omega(control_to_state(spec, w1) - control_to_state(spec, w2)) / gap)
    return max(ratios) if ratios else 0.0


def operator_norm_estimate(spec, w, y, side, probes, coefficient=None):
    """max ||G(f, h)||_Omega / (||f|| + ||h||) over probe directions."""
    a = coefficients(spec, y).side(side) if coefficient is None else coefficient
    best = 0.0
    for f, h in probes:
        size = norm_omega(f) + norm_gamma(h)
        if size == 0:
            continue
        z = solve_linear(spec.robin, a, f, h, spec.solver)
        best = max(best, norm_omega(z) / size)
    return best
