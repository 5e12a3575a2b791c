"""
Optimality checks at a candidate control w = (u, v) with state y = S(w).

Each check returns a record of nonnegative residuals plus a pass flag;
verify() collects them into a StationarityReport.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import LinearOperator
from django.core.exceptions import ValidationError

from .constants import MINUS, PLUS
from .grid import BoundaryField, Field, band_measure, interior_laplacian, level_band, trace
from .nonsmooth import clarke_selection_residual, superpose, superpose_deriv
from .objective import adjoint_state, objective, objective_dir_deriv, reduced_gradient
from .operator import ControlPair, band_delta, coefficients, control_to_state, probe_map
from .optimize import project_admissible
from .pde import solve_coefficient

logger = logging.getLogger(__name__)

B_STAT_TOL = 1e-5
STRONG_TOL = 1e-5
MULTIPLIER_TOL = 1e-4
BOUND_TOL = 1e-6


@dataclass
class BStatRecord:
    min_value: float
    scale: float
    tol: float
    probes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.min_value >= -self.tol * self.scale

    @property
    def argmin(self):
        return min(self.probes, key=lambda p: p['value'])['label'] if self.probes else None


@dataclass
class StrongRecord:
    p_tilde: Field
    a_tilde: Field
    zeta_omega: Field
    zeta_gamma: BoundaryField
    inactive_omega: float
    active_omega: float
    inactive_gamma: float
    active_gamma: float
    sign: float
    clarke: float
    tol: float
    cq_measure: float = 0.0
    conditional: bool = False

    @property
    def residuals(self):
        return {
            'inactive_omega': self.inactive_omega,
            'active_omega': self.active_omega,
            'inactive_gamma': self.inactive_gamma,
            'active_gamma': self.active_gamma,
            'sign': self.sign,
            'clarke': self.clarke,
        }

    @property
    def passed(self):
        return max(self.residuals.values()) <= self.tol


@dataclass
class MultiplierRecord:
    side: str
    p_tilde: Field
    mu: Field
    zeta_omega: Field
    zeta_gamma: BoundaryField
    residual_omega: float
    residual_gamma: float
    mu_min: float
    mu_outside_band: float
    band_nodes: int
    tol: float
    solver_status: int = 0

    @property
    def residual(self):
        return max(self.residual_omega, self.residual_gamma)

    @property
    def mu_norm(self):
        return float(np.sqrt(np.dot(self.mu.grid.omega_weights, self.mu.values ** 2)))

    @property
    def passed(self):
        return self.residual <= self.tol and self.mu_min >= 0 and self.mu_outside_band == 0


@dataclass
class BoundCaseRecord:
    p_bar: Field
    omega: float
    gamma: float
    tol: float

    @property
    def passed(self):
        return min(self.omega, self.gamma) >= -self.tol


@dataclass
class AppendixRecord:
    strong_residual: float
    band_laplacian: float
    band_discrepancy: float
    band_nodes: int


@dataclass
class EquivalenceVerdict:
    b_passed: bool
    strong_passed: bool
    conditional: bool
    strong_implies_b: bool
    b_implies_strong: bool

    @property
    def verdict(self):
        if self.conditional:
            return 'CONDITIONAL'
        return 'PASS' if self.b_passed == self.strong_passed else 'FAIL'

    @property
    def passed(self):
        if self.conditional:
            return self.strong_implies_b
        return self.strong_implies_b and self.b_implies_strong


@dataclass
class StationarityReport:
    b_stat: BStatRecord
    cq: float
    strong: StrongRecord
    multiplier_minus: MultiplierRecord
    multiplier_plus: MultiplierRecord = None
    ubvb: BoundCaseRecord = None
    appendix: AppendixRecord = None
    equivalence: EquivalenceVerdict = None

    @property
    def verdicts(self):
        verdicts = {
            'b_stationary': self.b_stat.passed,
            'strong_stationary': self.strong.passed,
            'multiplier_minus': self.multiplier_minus.passed,
        }
        if self.multiplier_plus is not None:
            verdicts['multiplier_plus'] = self.multiplier_plus.passed
        if self.ubvb is not None:
            verdicts['bound_case'] = self.ubvb.passed
        if self.equivalence is not None:
            verdicts['equivalence'] = self.equivalence.passed
        return verdicts

    @property
    def passed(self):
        return all(self.verdicts.values())


def _state(spec, w, y):
    return control_to_state(spec, w) if y is None else y


def _active_sets(spec, w):
    """Boolean masks of {u >= u_b - tol} on Omega and {v >= v_b - tol} on Gamma."""
    tol = spec.active_tol
    grid = w.grid
    if spec.u_b is None:
        active_u = np.zeros(grid.n_nodes, dtype=bool)
    else:
        active_u = w.u.values >= spec.u_b.values - tol
    if spec.v_b is None:
        active_v = np.zeros(grid.n_boundary, dtype=bool)
    else:
        active_v = w.v.values >= spec.v_b.values - tol
    return active_u, active_v


def _b_probes(spec, w, gradient, n_probes, rng):
    """Admissible probe controls: deterministic extremes, node bumps and seeded uniform draws."""
    grid = w.grid
    probes = [('self', w), ('zero', project_admissible(spec, ControlPair.zeros(grid)))]
    if spec.u_b is not None or spec.v_b is not None:
        u = spec.u_b if spec.u_b is not None else w.u
        v = spec.v_b if spec.v_b is not None else w.v
        probes.append(('bound', ControlPair(u, v)))
    step = ControlPair(gradient.gu, gradient.gv)
    for label, shift in (('down-gradient', -1.0), ('up-gradient', 1.0)):
        probes.append((label, project_admissible(spec, w + shift * step)))
    ones = ControlPair.constant(grid, 1.0)
    probes.append(('down-ones', project_admissible(spec, w - ones)))
    probes.append(('up-ones', project_admissible(spec, w + ones)))
    for node in rng.choice(grid.n_nodes, size=min(4, grid.n_nodes), replace=False):
        bump = np.zeros(grid.n_nodes)
        bump[node] = 1.0
        for sign in (-1.0, 1.0):
            shifted = ControlPair(w.u + sign * bump, w.v)
            probes.append((f'bump-{node}{"+" if sign > 0 else "-"}', project_admissible(spec, shifted)))

    radius = max(1.0, w.max_abs())
    for k in range(n_probes):
        if spec.u_b is not None:
            u = spec.u_b.values - radius * rng.uniform(0.0, 1.0, grid.n_nodes)
        else:
            u = w.u.values + radius * rng.uniform(-1.0, 1.0, grid.n_nodes)
        if spec.v_b is not None:
            v = spec.v_b.values - radius * rng.uniform(0.0, 1.0, grid.n_boundary)
        else:
            v = w.v.values + radius * rng.uniform(-1.0, 1.0, grid.n_boundary)
        probes.append((f'random-{k}', ControlPair(Field(grid, u), BoundaryField(grid, v))))
    return probes


def check_b_stationarity(spec, w, n_probes=200, rng_seed=0, y=None, tol=B_STAT_TOL, workers=None):
    """
    Smallest sampled J'(w; p - w) over admissible probe controls p.

    Directional derivatives use the one-sided state derivative, so the
    check is meaningful on the kink set.
    """
    y = _state(spec, w, y)
    rng = np.random.default_rng(rng_seed)
    gradient = reduced_gradient(spec, w, y)
    probes = _b_probes(spec, w, gradient, n_probes, rng)

    def evaluate(probe):
        label, p = probe
        direction = p - w
        value = objective_dir_deriv(spec, w, direction.u, direction.v, y=y)
        return {'label': label, 'value': value}

    log = probe_map(evaluate, probes, workers)
    record = BStatRecord(
        min_value=min(entry['value'] for entry in log),
        scale=1.0 + abs(objective(spec, w, y)),
        tol=tol,
        probes=log,
    )
    logger.info(f"B-stationarity over {len(log)} probes: min J' = {record.min_value:.3e} ({record.argmin})")
    return record


def check_cq(spec, w, y=None):
    """Measure of the kink band (width h) meeting the one-cell closure of the active set."""
    if spec.u_b is None:
        return 0.0
    y = _state(spec, w, y)
    grid = spec.grid
    band = level_band(y, spec.pc1.t_bar, grid.h)
    active = np.abs(w.u.values - spec.u_b.values) <= spec.active_tol
    closure = binary_dilation(active.reshape(grid.ny, grid.nx), structure=np.ones((3, 3), dtype=bool))
    return band_measure(grid, band & closure.ravel())


def _complementarity(spec, w, p):
    """Residuals of zeta = -(p + kappa w) vanishing off and staying >= 0 on the active sets."""
    active_u, active_v = _active_sets(spec, w)
    zeta_omega = -(p + spec.kappa_omega * w.u)
    zeta_gamma = -(trace(p) + spec.kappa_gamma * w.v)

    def split(zeta, active):
        inactive = np.abs(zeta.values[~active]).max() if np.any(~active) else 0.0
        negative = max(0.0, -zeta.values[active].min()) if np.any(active) else 0.0
        return float(inactive), float(negative)

    inactive_omega, active_omega = split(zeta_omega, active_u)
    inactive_gamma, active_gamma = split(zeta_gamma, active_v)
    return zeta_omega, zeta_gamma, inactive_omega, active_omega, inactive_gamma, active_gamma


def check_strong_stationarity(spec, w, y=None, tol=STRONG_TOL):
    """Strong stationarity with the minus-branch Clarke selection."""
    y = _state(spec, w, y)
    pair = coefficients(spec, y)
    a_tilde = pair.a_minus
    p = adjoint_state(spec, y, a_tilde)
    zeta_omega, zeta_gamma, *residuals = _complementarity(spec, w, p)
    d = spec.pc1
    signed = -p.values[pair.kink_mask] * (d.left_slope - d.right_slope)
    cq = check_cq(spec, w, y)
    record = StrongRecord(
        p_tilde=p,
        a_tilde=a_tilde,
        zeta_omega=zeta_omega,
        zeta_gamma=zeta_gamma,
        inactive_omega=residuals[0],
        active_omega=residuals[1],
        inactive_gamma=residuals[2],
        active_gamma=residuals[3],
        sign=float(max(0.0, signed.max())) if signed.size else 0.0,
        clarke=clarke_selection_residual(d, y, a_tilde, band_delta(spec, y)),
        tol=tol,
        cq_measure=cq,
        conditional=cq > spec.grid.h,
    )
    logger.info(f"Strong stationarity residuals {record.residuals} (cq={cq:.3e})")
    return record


def classical_kkt(spec, w, y=None, tol=STRONG_TOL):
    """Smooth KKT residuals using the pointwise derivative d'(y) as adjoint coefficient."""
    y = _state(spec, w, y)
    a = superpose_deriv(spec.pc1, y, kink_branch=spec.solver.kink_branch)
    p = adjoint_state(spec, y, a)
    zeta_omega, zeta_gamma, *residuals = _complementarity(spec, w, p)
    return StrongRecord(
        p_tilde=p, a_tilde=a, zeta_omega=zeta_omega, zeta_gamma=zeta_gamma,
        inactive_omega=residuals[0], active_omega=residuals[1],
        inactive_gamma=residuals[2], active_gamma=residuals[3],
        sign=0.0, clarke=0.0, tol=tol,
    )


def check_multiplier_system(spec, w, y=None, side=MINUS, tol=MULTIPLIER_TOL):
    """
    Recover (p~, mu, zeta) for the one-sided multiplier system by bounded least squares.

    p~ = p0 +/- |d1' - d2'| K^-1 (W mu) with mu >= 0 on the kink band; zeta >= 0
    lives on the active sets. The weighted residuals of p~ + kappa u + zeta = 0
    on Omega and of trace p~ + kappa v + zeta = 0 on Gamma are minimized.
    """
    if side not in (MINUS, PLUS):
        raise ValueError(f"Unknown side '{side}'.")
    if side == PLUS and spec.bounded and w.equals(spec.bound_pair, spec.active_tol):
        raise ValueError("The plus multiplier system needs w != (u_b, v_b).")
    y = _state(spec, w, y)
    grid = spec.grid
    pair = coefficients(spec, y)
    a = pair.side(side)
    p0 = adjoint_state(spec, y, a)
    jump = spec.pc1.slope_jump
    sign = 1.0 if side == MINUS else -1.0
    band = pair.kink_mask if jump > 0 else np.zeros(grid.n_nodes, dtype=bool)
    active_u, active_v = _active_sets(spec, w)
    band_idx, au_idx, av_idx = np.flatnonzero(band), np.flatnonzero(active_u), np.flatnonzero(active_v)
    n_mu, n_zu, n_zv = band_idx.size, au_idx.size, av_idx.size
    sqrt_w, sqrt_g = np.sqrt(grid.omega_weights), np.sqrt(grid.gamma_weights)
    bidx = grid.boundary_index

    def weighted(p_omega, p_gamma):
        return np.concatenate([sqrt_w * p_omega, sqrt_g * p_gamma])

    base_omega = p0.values + spec.kappa_omega * w.u.values
    base_gamma = p0.values[bidx] + spec.kappa_gamma * w.v.values
    r0 = weighted(base_omega, base_gamma)

    def solve(load):
        return solve_coefficient(spec.robin, a.values, load, spec.solver)

    def matvec(x):
        x = np.ravel(x)
        mu, zu, zv = np.split(x, [n_mu, n_mu + n_zu])
        load = np.zeros(grid.n_nodes)
        load[band_idx] = grid.omega_weights[band_idx] * mu
        dp = sign * jump * solve(load) if n_mu else np.zeros(grid.n_nodes)
        omega, gamma = dp.copy(), dp[bidx].copy()
        omega[au_idx] += zu
        gamma[av_idx] += zv
        return weighted(omega, gamma)

    def rmatvec(r):
        r = np.ravel(r)
        r_omega, r_gamma = sqrt_w * r[:grid.n_nodes], sqrt_g * r[grid.n_nodes:]
        out = []
        if n_mu:
            load = r_omega.copy()
            load[bidx] += r_gamma
            out.append(sign * jump * grid.omega_weights[band_idx] * solve(load)[band_idx])
        out.append(r_omega[au_idx])
        out.append(r_gamma[av_idx])
        return np.concatenate(out)

    n = n_mu + n_zu + n_zv
    x = np.zeros(n)
    status = 0
    if n:
        system = LinearOperator((r0.size, n), matvec=matvec, rmatvec=rmatvec, dtype=float)
        result = lsq_linear(system, -r0, bounds=(0.0, np.inf), lsq_solver='lsmr', tol=1e-12)
        x, status = np.maximum(result.x, 0.0), result.status
        logger.debug(f"Multiplier least squares ({side}): status {status}, cost {result.cost:.3e}, {result.nit} iterations")
    mu_band, zu, zv = np.split(x, [n_mu, n_mu + n_zu])

    mu = np.zeros(grid.n_nodes)
    mu[band_idx] = mu_band
    load = grid.omega_weights * mu
    p_tilde = p0.values + (sign * jump * solve(load) if n_mu else 0.0)
    zeta_omega = np.zeros(grid.n_nodes)
    zeta_omega[au_idx] = zu
    zeta_gamma = np.zeros(grid.n_boundary)
    zeta_gamma[av_idx] = zv
    res_omega = p_tilde + spec.kappa_omega * w.u.values + zeta_omega
    res_gamma = p_tilde[bidx] + spec.kappa_gamma * w.v.values + zeta_gamma
    record = MultiplierRecord(
        side=side,
        p_tilde=Field(grid, p_tilde),
        mu=Field(grid, mu),
        zeta_omega=Field(grid, zeta_omega),
        zeta_gamma=BoundaryField(grid, zeta_gamma),
        residual_omega=float(np.abs(res_omega).max()),
        residual_gamma=float(np.abs(res_gamma).max()),
        mu_min=float(mu.min()),
        mu_outside_band=float(np.abs(mu[~band]).max()) if np.any(~band) else 0.0,
        band_nodes=n_mu,
        tol=tol,
        solver_status=int(status),
    )
    logger.info(f"Multiplier system ({side}): residual {record.residual:.3e}, |mu| = {record.mu_norm:.3e}")
    return record


def check_bound_case(spec, w, y=None, tol=BOUND_TOL):
    """Residuals of -p/kappa_Omega >= u_b and -trace p/kappa_Gamma >= v_b at w = (u_b, v_b)."""
    if not spec.bounded:
        raise ValueError("The bound case needs finite u_b and v_b.")
    if not w.equals(spec.bound_pair, spec.active_tol):
        raise ValueError("The bound case applies only at w = (u_b, v_b).")
    y = _state(spec, w, y)
    p = adjoint_state(spec, y, coefficients(spec, y).a_minus)
    omega = (-p / spec.kappa_omega - spec.u_b).min()
    gamma = (-trace(p) / spec.kappa_gamma - spec.v_b).min()
    return BoundCaseRecord(p_bar=p, omega=omega, gamma=gamma, tol=tol)


def check_appendix_levelset(spec, w, y=None):
    """
    Laplacian of the state on its kink band.

    On {y = t_bar} the state equation forces Delta y = 0 and thus u = d(t_bar);
    the band discrepancy max |u - d(t_bar)| measures how far the grid is from that.
    """
    y = _state(spec, w, y)
    op = spec.robin
    laplacian = interior_laplacian(op, y)
    interior = spec.grid.interior_mask
    strong = laplacian.values - (superpose(spec.pc1, y).values - w.u.values)
    band = coefficients(spec, y).kink_mask
    interior_band = band & interior
    return AppendixRecord(
        strong_residual=float(np.abs(strong[interior]).max()),
        band_laplacian=float(np.abs(laplacian.values[interior_band]).max()) if np.any(interior_band) else 0.0,
        band_discrepancy=float(np.abs(w.u.values[band] - spec.pc1.value_at_kink).max()) if np.any(band) else 0.0,
        band_nodes=int(np.count_nonzero(band)),
    )


def check_equivalence(spec, w, y=None, n_probes=200, rng_seed=0, b_stat=None, strong=None):
    """B-stationarity versus strong stationarity; only strong => B is asserted without CQ."""
    y = _state(spec, w, y)
    if b_stat is None:
        b_stat = check_b_stationarity(spec, w, n_probes, rng_seed, y=y)
    if strong is None:
        strong = check_strong_stationarity(spec, w, y)
    verdict = EquivalenceVerdict(
        b_passed=b_stat.passed,
        strong_passed=strong.passed,
        conditional=strong.conditional,
        strong_implies_b=(not strong.passed) or b_stat.passed,
        b_implies_strong=(not b_stat.passed) or strong.passed,
    )
    logger.info(f"Equivalence verdict {verdict.verdict} (B={b_stat.passed}, strong={strong.passed})")
    return verdict


def verify(spec, w, n_probes=200, rng_seed=0, y=None):
    """Run every applicable check at w."""
    if not spec.admissible(w):
        raise ValidationError("The candidate control violates the control bounds.")
    y = _state(spec, w, y)
    b_stat = check_b_stationarity(spec, w, n_probes, rng_seed, y=y)
    strong = check_strong_stationarity(spec, w, y)
    at_bound = spec.bounded and w.equals(spec.bound_pair, spec.active_tol)
    return StationarityReport(
        b_stat=b_stat,
        cq=strong.cq_measure,
        strong=strong,
        multiplier_minus=check_multiplier_system(spec, w, y, MINUS),
        multiplier_plus=None if at_bound else check_multiplier_system(spec, w, y, PLUS),
        ubvb=check_bound_case(spec, w, y) if at_bound else None,
        appendix=check_appendix_levelset(spec, w, y),
        equivalence=check_equivalence(spec, w, y, b_stat=b_stat, strong=strong),
    )
