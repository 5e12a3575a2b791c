import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from apps.control.benchmarks import bound_active, kink_active, unconstrained_smooth
from apps.control.exceptions import LineSearchFailure
from apps.control.objective import objective
from apps.control.operator import ControlPair
from apps.control.optimize import OptimizeConfig, minimize, pair_norm, project_admissible
from apps.control.stationarity import check_b_stationarity


class OptimizeConfigTestCase(SimpleTestCase):
    def test_invalid_armijo_constant(self):
        """Test that c must lie in (0, 1)"""
        with self.assertRaises(ValidationError):
            OptimizeConfig(c=1.0)

    def test_invalid_tolerance(self):
        """Test that a nonpositive stopping tolerance is rejected"""
        with self.assertRaises(ValidationError):
            OptimizeConfig(tol=0.0)


class ProjectionTestCase(SimpleTestCase):
    def test_projection_clips_to_bounds(self):
        """Test that projection takes the nodewise minimum with the bounds"""
        spec = bound_active(nx=5).spec
        projected = project_admissible(spec, ControlPair.constant(spec.grid, 1.0))
        np.testing.assert_array_equal(projected.u.values, spec.u_b.values)
        np.testing.assert_array_equal(projected.v.values, spec.v_b.values)
        low = ControlPair.constant(spec.grid, -1.0)
        self.assertTrue(project_admissible(spec, low).equals(low))

    def test_projection_without_bounds(self):
        """Test that projection is the identity for infinite bounds"""
        spec = unconstrained_smooth(nx=5).spec
        w = ControlPair.constant(spec.grid, 3.0)
        self.assertTrue(project_admissible(spec, w).equals(w))


class MinimizeTestCase(SimpleTestCase):
    def test_unconstrained_smooth(self):
        """Test that projected gradient converges to a B-stationary point without bounds"""
        spec = unconstrained_smooth(nx=9).spec
        w, trace = minimize(spec)
        self.assertTrue(trace.converged)
        self.assertLess(trace.final.objective, trace.rows[0].objective)
        record = check_b_stationarity(spec, w, n_probes=20, rng_seed=0)
        self.assertTrue(record.passed)

    def test_bound_active(self):
        """Test that the minimizer of the bound-active problem sits on the bounds"""
        spec = bound_active(nx=9).spec
        w, trace = minimize(spec)
        self.assertTrue(trace.converged)
        self.assertTrue(w.equals(spec.bound_pair, 1e-8))
        self.assertTrue(check_b_stationarity(spec, w, n_probes=20, rng_seed=0).passed)

    def test_monotone_descent_on_kink_problem(self):
        """Test that accepted steps never increase the objective"""
        spec = kink_active(nx=9).spec
        cfg = OptimizeConfig(max_iters=30)
        try:
            _, trace = minimize(spec, cfg)
        except LineSearchFailure as exc:
            trace = exc.trace
        values = [row.objective for row in trace.rows]
        for before, after in zip(values, values[1:]):
            self.assertLessEqual(after, before)
        self.assertLessEqual(values[-1], objective(spec, ControlPair.zeros(spec.grid)))

    def test_deterministic(self):
        """Test that repeated runs give identical traces"""
        spec = unconstrained_smooth(nx=5).spec
        cfg = OptimizeConfig(max_iters=10)
        _, first = minimize(spec, cfg)
        _, second = minimize(spec, cfg)
        self.assertEqual(first.as_rows(), second.as_rows())

    def test_line_search_failure(self):
        """Test that an exhausted backtracking loop raises LineSearchFailure with the trace"""
        spec = unconstrained_smooth(nx=5).spec
        cfg = OptimizeConfig(initial_step=1e3, max_backtracks=1)
        with self.assertRaises(LineSearchFailure) as ctx:
            minimize(spec, cfg)
        self.assertEqual(len(ctx.exception.trace.rows), 1)

    def test_records_b_stationarity(self):
        """Test that b_probes attaches the sampled B-stationarity minimum to the trace"""
        spec = bound_active(nx=5).spec
        w, trace = minimize(spec, OptimizeConfig(b_probes=5))
        self.assertIsNotNone(trace.b_stat_min)
        self.assertGreaterEqual(pair_norm(w), 0.0)

    def test_slack_never_admits_an_increase(self):
        """Test that a large rounding slack still rejects trial steps that raise the objective"""
        spec = unconstrained_smooth(nx=5).spec
        _, trace = minimize(spec, OptimizeConfig(initial_step=1e3, slack=1e6, max_iters=5, b_probes=0))
        values = [row.objective for row in trace.rows]
        for before, after in zip(values, values[1:]):
            self.assertLessEqual(after, before)

    def test_default_config_samples_b_stationarity(self):
        """Test that the default configuration samples 200 directions at termination"""
        self.assertEqual(OptimizeConfig().b_probes, 200)
        spec = bound_active(nx=5).spec
        _, trace = minimize(spec)
        self.assertIsNotNone(trace.b_stat_min)
        self.assertGreaterEqual(trace.b_stat_min, -1e-5 * (1.0 + abs(trace.final.objective)))
