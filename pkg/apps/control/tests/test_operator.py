import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, override_settings

from apps.control.benchmarks import bound_optimal, kink_active, kink_edge, unconstrained_smooth
from apps.control.constants import MINUS, PLUS
from apps.control.grid import BoundaryField, Field, inner_gamma, inner_omega, norm_omega
from apps.control.operator import (
    BouligandLimitConfig, ControlPair, bouligand_limit_test, coefficients, control_to_state,
    difference_quotient_test, dir_deriv, e_bound_rhs, g_adjoint, g_minus, g_plus, gateaux_defect,
    lipschitz_estimate, manufactured_controls, operator_norm_estimate, perturb_controls,
    probe_map, solve_with_coefficient, wset_limit_test,
)
from apps.control.tasks import limit_nonincreasing


class KinkStateTestCase(SimpleTestCase):
    """Operator checks at a control whose state lies on the kink over half the domain."""

    def setUp(self):
        self.bench = kink_active(nx=17)
        self.spec = self.bench.spec
        self.grid = self.spec.grid
        self.w = self.bench.w_bar
        self.y = control_to_state(self.spec, self.w)
        self.rng = np.random.default_rng(5)

    def _nonnegative_direction(self):
        f = Field(self.grid, self.rng.uniform(0.0, 1.0, self.grid.n_nodes))
        h = BoundaryField(self.grid, self.rng.uniform(0.0, 1.0, self.grid.n_boundary))
        return f, h

    def test_state_matches_construction(self):
        """Test that the solved state reproduces the manufactured state"""
        np.testing.assert_allclose(self.y.values, self.bench.y_bar.values, atol=1e-8)
        self.assertGreater(coefficients(self.spec, self.y).band_nodes, 0)
        self.assertGreater(gateaux_defect(self.spec, self.w, self.y), 0.0)

    def test_plus_identity(self):
        """Test that S'(w; f, h) = G_plus(f, h) for nonnegative directions"""
        for _ in range(3):
            f, h = self._nonnegative_direction()
            difference = dir_deriv(self.spec, self.w, self.y, f, h) - g_plus(self.spec, self.w, self.y, f, h)
            self.assertLessEqual(norm_omega(difference), 1e-8)

    def test_minus_identity(self):
        """Test that S'(w; -f, -h) = -G_minus(f, h) for nonnegative directions"""
        for _ in range(3):
            f, h = self._nonnegative_direction()
            s = dir_deriv(self.spec, self.w, self.y, -f, -h)
            self.assertLessEqual(norm_omega(s + g_minus(self.spec, self.w, self.y, f, h)), 1e-8)

    def test_adjoint_identity(self):
        """Test that <G(f, h), phi> = <f, zeta> + <h, trace zeta> for both sides"""
        pair = coefficients(self.spec, self.y)
        for side, g in ((MINUS, g_minus), (PLUS, g_plus)):
            f = Field(self.grid, self.rng.standard_normal(self.grid.n_nodes))
            h = BoundaryField(self.grid, self.rng.standard_normal(self.grid.n_boundary))
            phi = Field(self.grid, self.rng.standard_normal(self.grid.n_nodes))
            zeta, zeta_trace = g_adjoint(self.spec, pair.side(side), phi)
            lhs = inner_omega(g(self.spec, self.w, self.y, f, h), phi)
            rhs = inner_omega(f, zeta) + inner_gamma(h, zeta_trace)
            self.assertAlmostEqual(lhs, rhs, delta=1e-10 * max(1.0, abs(lhs)))

    def test_perturbation_arguments(self):
        """Test that eps must lie in (0, 1)"""
        with self.assertRaises(ValueError):
            perturb_controls(self.spec, self.w, 1.0, MINUS)
        with self.assertRaises(ValueError):
            perturb_controls(self.spec, self.w, 0.1, 'sideways')

    def test_squeezed_coefficient(self):
        """Test that solves with a coefficient outside [a_minus, a_plus] are refused"""
        pair = coefficients(self.spec, self.y)
        middle = (pair.a_minus + pair.a_plus) * 0.5
        f, h = self._nonnegative_direction()
        z = solve_with_coefficient(self.spec, self.y, middle, f, h)
        self.assertGreaterEqual(z.min(), -1e-12)
        with self.assertRaises(ValueError):
            solve_with_coefficient(self.spec, self.y, pair.a_plus + 1.0, f, h)

    def test_operator_norm_estimate(self):
        """Test that the minus-side norm estimate dominates the plus side for nonnegative probes"""
        probes = [self._nonnegative_direction() for _ in range(3)]
        minus = operator_norm_estimate(self.spec, self.w, self.y, MINUS, probes)
        plus = operator_norm_estimate(self.spec, self.w, self.y, PLUS, probes)
        self.assertGreater(minus, 0.0)
        self.assertGreaterEqual(minus, plus)


class LimitTestCase(SimpleTestCase):
    """One-sided limit checks at a kink-active control whose state leaves the kink linearly."""

    # rho = sqrt(eps) for sigma = 0, rho = eps for sigma = 1
    SQRT_EPSILONS = tuple(2.0 ** -k for k in (12, 14, 16, 18))
    LINEAR_EPSILONS = tuple(2.0 ** -k for k in (6, 8, 10, 12))

    def setUp(self):
        self.bench = kink_edge(nx=33)
        self.spec = self.bench.spec
        self.grid = self.spec.grid
        self.w = self.bench.w_bar
        self.y = control_to_state(self.spec, self.w)
        self.rng = np.random.default_rng(7)

    def _direction(self, low, high):
        f = Field(self.grid, self.rng.uniform(low, high, self.grid.n_nodes))
        h = BoundaryField(self.grid, self.rng.uniform(low, high, self.grid.n_boundary))
        return f, h

    def _final(self, rows, probe_id=0):
        return [row.err_h1 for row in rows if row.probe_id == probe_id][-1]

    def test_state_leaves_kink_linearly(self):
        """Test that the state is solved exactly and its first off-kink column sits h below the kink"""
        np.testing.assert_allclose(self.y.values, self.bench.y_bar.values, atol=1e-8)
        off_kink = self.bench.y_bar.values < 0
        self.assertAlmostEqual(self.bench.y_bar.values[off_kink].max(), -self.grid.hx, places=12)

    def test_bouligand_limit_both_sides(self):
        """Test that S'(w_k) tends to G_side(w) monotonically with final error below 1e-3"""
        probes = [self._direction(0.0, 1.0) for _ in range(2)]
        for side in (MINUS, PLUS):
            rows = bouligand_limit_test(self.spec, self.w, BouligandLimitConfig(), side, probes, y=self.y)
            self.assertEqual(len(rows), 8 * len(probes))
            for probe_id in range(len(probes)):
                self.assertTrue(limit_nonincreasing(rows, probe_id), [r.err_h1 for r in rows if r.probe_id == probe_id])
                self.assertLessEqual(self._final(rows, probe_id), 1e-3)

    def test_bouligand_limit_mixed_direction(self):
        """Test that a sign-changing direction also reaches the one-sided limit"""
        probes = [self._direction(-1.0, 1.0)]
        for side in (MINUS, PLUS):
            rows = bouligand_limit_test(self.spec, self.w, BouligandLimitConfig(), side, probes, y=self.y)
            self.assertLessEqual(self._final(rows), 1e-3)

    def test_bouligand_limit_smooth(self):
        """Test that the error is O(eps) with a stable constant for a smooth nonlinearity"""
        spec = unconstrained_smooth(nx=17).spec
        w = ControlPair.constant(spec.grid, 1.0)
        f = Field(spec.grid, self.rng.uniform(0.0, 1.0, spec.grid.n_nodes))
        h = BoundaryField(spec.grid, self.rng.uniform(0.0, 1.0, spec.grid.n_boundary))
        cfg = BouligandLimitConfig()
        rows = bouligand_limit_test(spec, w, cfg, MINUS, [(f, h)])
        ratios = np.array([row.err_h1 / row.eps for row in rows])
        self.assertGreater(ratios.min(), 0.0)
        self.assertLessEqual(ratios.max(), 1.5 * ratios.min())
        for row in rows:
            self.assertLessEqual(row.err_h1, ratios.max() * row.eps)

    def test_wset_vanishing_plus(self):
        """Test that the plus-side limit element vanishes and is matched for nonnegative directions"""
        f, h = self._direction(0.0, 0.5)
        for sigma, epsilons in ((0.0, self.SQRT_EPSILONS), (1.0, self.LINEAR_EPSILONS)):
            cfg = BouligandLimitConfig(epsilons=epsilons, sigma=sigma)
            result = wset_limit_test(self.spec, self.w, cfg, PLUS, f, h, y=self.y)
            self.assertEqual(result.e_formula.max_abs(), 0.0)
            self.assertLessEqual(result.rows[-1].err_h1, 1e-3)
            self.assertLessEqual(result.e_numeric.max_abs(), 1e-3)
        self.assertLessEqual(e_bound_rhs(self.spec, self.w, self.y, f, h, PLUS), 1e-12)

    def test_wset_nonvanishing(self):
        """Test that eta_k / rho_k converges to a nonzero limit element on both sides"""
        cases = (
            (MINUS, 0.0, (0.0, 0.5), self.SQRT_EPSILONS),
            (PLUS, 0.0, (-0.5, 0.0), self.SQRT_EPSILONS),
            (MINUS, 1.0, (1.5, 2.0), self.LINEAR_EPSILONS),
            (PLUS, 1.0, (-2.0, -1.5), self.LINEAR_EPSILONS),
        )
        for side, sigma, (low, high), epsilons in cases:
            with self.subTest(side=side, sigma=sigma):
                f, h = self._direction(low, high)
                cfg = BouligandLimitConfig(epsilons=epsilons, sigma=sigma)
                result = wset_limit_test(self.spec, self.w, cfg, side, f, h, y=self.y)
                self.assertGreater(result.e_formula.max_abs(), 1e-3)
                self.assertTrue(limit_nonincreasing(result.rows), [row.err_h1 for row in result.rows])
                self.assertLessEqual(result.rows[-1].err_h1, 1e-2)

    def test_difference_quotients(self):
        """Test that difference quotients approach S'(w; f, h) along sign-changing directions"""
        for _ in range(5):
            f, h = self._direction(-1.0, 1.0)
            errors = difference_quotient_test(self.spec, self.w, f, h, y=self.y)
            self.assertEqual(len(errors), 5)
            for larger, smaller in zip(errors, errors[1:]):
                self.assertLessEqual(smaller, larger + 1e-5)
            self.assertLessEqual(errors[-1], 1e-3)


class ControlToStateTestCase(SimpleTestCase):
    def setUp(self):
        self.spec = unconstrained_smooth(nx=9).spec
        self.grid = self.spec.grid

    def test_manufactured_controls(self):
        """Test that manufactured controls reproduce the given state"""
        y = Field.from_function(self.grid, lambda a, b: np.cos(a) * b)
        w = manufactured_controls(self.spec, y, BoundaryField.constant(self.grid, 0.3))
        np.testing.assert_allclose(control_to_state(self.spec, w).values, y.values, atol=1e-7)

    def test_lipschitz_estimate(self):
        """Test that the fitted Lipschitz constant is positive and moderate"""
        rng = np.random.default_rng(2)
        pairs = []
        for _ in range(3):
            w1 = ControlPair(Field(self.grid, rng.standard_normal(self.grid.n_nodes)), BoundaryField.zeros(self.grid))
            w2 = ControlPair(Field(self.grid, rng.standard_normal(self.grid.n_nodes)), BoundaryField.zeros(self.grid))
            pairs.append((w1, w2))
        estimate = lipschitz_estimate(self.spec, pairs)
        self.assertGreater(estimate, 0.0)
        self.assertLess(estimate, 10.0)

    def test_lipschitz_estimate_is_grid_independent(self):
        """Test that the Lipschitz estimate for fixed smooth controls barely moves under refinement"""
        estimates = []
        for nx in (9, 17, 33):
            spec = unconstrained_smooth(nx=nx).spec
            grid = spec.grid
            pairs = [
                (
                    ControlPair(Field.from_function(grid, lambda a, b: np.sin(np.pi * a) * np.cos(b)), BoundaryField.constant(grid, 0.5)),
                    ControlPair.zeros(grid),
                ),
                (
                    ControlPair(Field.from_function(grid, lambda a, b: 1.0 + a * b), BoundaryField.zeros(grid)),
                    ControlPair.constant(grid, -0.5),
                ),
            ]
            estimates.append(lipschitz_estimate(spec, pairs))
        self.assertGreater(min(estimates), 0.0)
        self.assertLessEqual(max(estimates), 1.2 * min(estimates))

    def test_control_grids_must_match(self):
        """Test that a control pair on two grids is rejected"""
        other = unconstrained_smooth(nx=5).spec.grid
        with self.assertRaises(ValidationError):
            ControlPair(Field.zeros(self.grid), BoundaryField.zeros(other))

    def test_plus_perturbation_at_bound_pair(self):
        """Test that the plus perturbation is undefined at the bound pair"""
        spec = bound_optimal(nx=5).spec
        with self.assertRaises(ValueError):
            perturb_controls(spec, spec.bound_pair, 0.5, PLUS)

    @override_settings(CONTROL_PROBE_WORKERS=3)
    def test_threaded_probe_order(self):
        """Test that threaded probe maps keep the input order"""
        self.assertEqual(probe_map(lambda k: k * k, range(10)), [k * k for k in range(10)])
