import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from apps.control.grid import (
    BoundaryField, Field, Grid, assemble_robin, build_grid, extend_by_zero, gamma_load,
    inner_gamma, inner_omega, interior_laplacian, level_band, level_set_measure, norm_h1, trace,
)


class GridTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = build_grid(9, 5, (0.0, 0.0, 2.0, 1.0))

    def test_too_few_nodes(self):
        """Test that grids with fewer than three nodes per axis are rejected"""
        with self.assertRaises(ValidationError):
            Grid(2, 5)

    def test_nonpositive_side(self):
        """Test that a degenerate rectangle is rejected"""
        with self.assertRaises(ValidationError):
            build_grid(5, 5, (0.0, 0.0, 0.0, 1.0))

    def test_boundary_numbering(self):
        """Test that the perimeter visits every boundary node once, counterclockwise"""
        index = self.grid.boundary_index
        self.assertEqual(index.size, 2 * 9 + 2 * 5 - 4)
        self.assertEqual(len(set(index.tolist())), index.size)
        x1, x2 = self.grid.coordinates
        self.assertEqual((x1[index[0]], x2[index[0]]), (0.0, 0.0))
        self.assertEqual((x1[index[8]], x2[index[8]]), (2.0, 0.0))
        self.assertEqual(np.count_nonzero(self.grid.interior_mask), 7 * 3)

    def test_quadrature_weights(self):
        """Test that the weights integrate constants and linear functions exactly"""
        one = Field.constant(self.grid, 1.0)
        self.assertAlmostEqual(inner_omega(one, one), self.grid.area, places=12)
        x1 = Field.from_function(self.grid, lambda a, b: a)
        self.assertAlmostEqual(inner_omega(x1, one), 2.0, places=12)
        edge = BoundaryField.constant(self.grid, 1.0)
        self.assertAlmostEqual(inner_gamma(edge, edge), self.grid.perimeter, places=12)

    def test_corner_weights(self):
        """Test that corners take half of each adjacent edge cell when hx and hy differ"""
        grid = build_grid(9, 5)
        weights = grid.gamma_weights
        self.assertEqual((grid.hx, grid.hy), (0.125, 0.25))
        for corner in (0, 8, 12, 20):
            self.assertAlmostEqual(weights[corner], 0.1875, places=14)
        self.assertAlmostEqual(weights[3], 0.125, places=14)
        self.assertAlmostEqual(weights[10], 0.25, places=14)
        self.assertAlmostEqual(weights.sum(), 4.0, places=12)

    def test_corner_normals(self):
        """Test that corner normals average the two adjacent sides"""
        normals = self.grid.outward_normals
        np.testing.assert_allclose(normals[0], [-0.5, -0.5])
        np.testing.assert_allclose(normals[3], [0.0, -1.0])
        np.testing.assert_allclose(normals[8], [0.5, -0.5])

    def test_grid_mismatch(self):
        """Test that arithmetic across different grids raises ValueError"""
        other = build_grid(5, 5)
        with self.assertRaises(ValueError):
            Field.zeros(self.grid) + Field.zeros(other)

    def test_wrong_length(self):
        """Test that a value array of the wrong length is rejected"""
        with self.assertRaises(ValidationError):
            Field(self.grid, np.zeros(7))

    def test_non_finite_values(self):
        """Test that NaN entries are rejected"""
        values = np.zeros(self.grid.n_nodes)
        values[3] = np.nan
        with self.assertRaises(ValidationError):
            Field(self.grid, values)

    def test_values_are_read_only(self):
        """Test that grid function values cannot be modified in place"""
        f = Field.zeros(self.grid)
        with self.assertRaises(ValueError):
            f.values[0] = 1.0

    def test_trace_of_extension(self):
        """Test that the trace of a zero extension gives back the boundary data"""
        g = BoundaryField(self.grid, np.arange(self.grid.n_boundary, dtype=float))
        np.testing.assert_array_equal(trace(extend_by_zero(g)).values, g.values)

    def test_h1_norm_of_constant(self):
        """Test that the discrete H1 norm of a constant has no gradient part"""
        f = Field.constant(self.grid, 3.0)
        self.assertAlmostEqual(norm_h1(f), 3.0 * np.sqrt(self.grid.area), places=12)

    def test_negative_band_width(self):
        """Test that level_band rejects a negative width"""
        with self.assertRaises(ValueError):
            level_band(Field.zeros(self.grid), 0.0, -1.0)

    def test_level_set_measure(self):
        """Test that the band measure sums the quadrature weights of the band columns"""
        x1 = Field.from_function(self.grid, lambda a, b: a)
        self.assertAlmostEqual(level_set_measure(x1, 1.0, 0.25), 0.75, places=12)
        self.assertEqual(level_set_measure(x1, 5.0, 0.25), 0.0)

    def test_level_set_measure_monotone(self):
        """Test that the band measure grows with the band width and reaches the area"""
        rng = np.random.default_rng(8)
        y = Field(self.grid, rng.standard_normal(self.grid.n_nodes))
        deltas = [0.0, 1e-3, 0.1, 0.5, 1.0, 2.0]
        measures = [level_set_measure(y, 0.0, delta) for delta in deltas]
        for narrow, wide in zip(measures, measures[1:]):
            self.assertLessEqual(narrow, wide)
        self.assertAlmostEqual(level_set_measure(y, 0.0, np.abs(y.values).max()), self.grid.area, places=12)


class RobinOperatorTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = build_grid(9, 9)
        self.b = BoundaryField.constant(self.grid, 2.0)
        self.op = assemble_robin(self.grid, self.b)

    def test_symmetric(self):
        """Test that the assembled operator is symmetric"""
        difference = self.op.matrix - self.op.matrix.T
        self.assertLess(abs(difference).max(), 1e-12)

    def test_constant_is_robin_load(self):
        """Test that constants only see the Robin term"""
        one = Field.constant(self.grid, 1.0)
        np.testing.assert_allclose(self.op.apply(one), gamma_load(self.b), atol=1e-12)

    def test_positive_definite(self):
        """Test that y^T A y is positive for a nonzero y"""
        rng = np.random.default_rng(0)
        for _ in range(5):
            y = rng.standard_normal(self.grid.n_nodes)
            self.assertGreater(y @ (self.op.matrix @ y), 0.0)

    def test_coefficient_on_other_grid(self):
        """Test that a Robin coefficient from a different grid raises ValueError"""
        with self.assertRaises(ValueError):
            assemble_robin(self.grid, BoundaryField.constant(build_grid(5, 5), 2.0))

    def test_nonpositive_robin_coefficient(self):
        """Test that b <= 0 somewhere on the boundary is rejected"""
        values = np.ones(self.grid.n_boundary)
        values[5] = 0.0
        with self.assertRaises(ValidationError):
            assemble_robin(self.grid, BoundaryField(self.grid, values))

    def test_discrete_laplacian_of_quadratic(self):
        """Test that the five-point stencil is exact for x1^2 + x2^2"""
        y = Field.from_function(self.grid, lambda a, b: a ** 2 + b ** 2)
        laplacian = interior_laplacian(self.op, y)
        interior = self.grid.interior_mask
        np.testing.assert_allclose(laplacian.values[interior], 4.0, rtol=1e-9)
        self.assertTrue(np.all(laplacian.values[~interior] == 0.0))
