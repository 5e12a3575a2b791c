import json
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
from django.test import SimpleTestCase

from apps.control.exporters import dump_json, read_field_csv, write_field_csv, write_table_csv, write_vtk
from apps.control.grid import BoundaryField, Field, build_grid


class FieldCsvTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.grid = build_grid(7, 5, (0.0, 0.0, 1.5, 1.0))

    def tearDown(self):
        self.tmp.cleanup()

    def test_exact_reimport(self):
        """Test that written fields re-import bit for bit with their grid"""
        u = Field.from_function(self.grid, lambda a, b: np.exp(a) / 3.0 - b)
        v = BoundaryField.from_function(self.grid, lambda a, b: np.sin(a + b))
        u_back = read_field_csv(write_field_csv(self.dir / 'u.csv', u))
        v_back = read_field_csv(write_field_csv(self.dir / 'v.csv', v), self.grid)
        self.assertIsInstance(v_back, BoundaryField)
        np.testing.assert_array_equal(u_back.values, u.values)
        np.testing.assert_array_equal(v_back.values, v.values)
        self.assertEqual((u_back.grid.nx, u_back.grid.ny), (7, 5))

    def test_grid_mismatch(self):
        """Test that a file written on another grid is refused"""
        path = write_field_csv(self.dir / 'u.csv', Field.zeros(self.grid))
        with self.assertRaises(ValueError):
            read_field_csv(path, build_grid(5, 5))

    def test_missing_header(self):
        """Test that a CSV without the grid header is refused"""
        path = self.dir / 'bad.csv'
        path.write_text('x1,x2,value\n0,0,1\n')
        with self.assertRaises(ValueError):
            read_field_csv(path)


class ArtifactTestCase(SimpleTestCase):
    def test_vtk_layout(self):
        """Test that the VTK file declares the grid and one block per field"""
        grid = build_grid(5, 3)
        with TemporaryDirectory() as tmp:
            path = write_vtk(Path(tmp) / 'fields.vtk', grid, {'y': Field.zeros(grid), 'u': Field.constant(grid, 1.0)})
            lines = path.read_text().splitlines()
        self.assertIn('DIMENSIONS 5 3 1', lines)
        self.assertIn('POINT_DATA 15', lines)
        self.assertEqual(sum(line.startswith('SCALARS') for line in lines), 2)
        self.assertEqual(len(lines), 8 + 2 * (2 + 15))

    def test_table_csv(self):
        """Test that missing cells are written empty and floats keep full precision"""
        rows = [{'nx': 5, 'error': 0.1, 'order': None}, {'nx': 9, 'error': 0.025, 'order': 2.0}]
        with TemporaryDirectory() as tmp:
            text = write_table_csv(Path(tmp) / 't.csv', rows, ['nx', 'error', 'order']).read_text()
        self.assertEqual(text.splitlines(), ['nx,error,order', '5,0.10000000000000001,', '9,0.025000000000000001,2'])

    def test_dump_json_sorted(self):
        """Test that JSON output sorts keys and encodes numpy scalars"""
        text = dump_json({'b': np.float64(1.5), 'a': np.int64(2)})
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(json.loads(text), {'a': 2, 'b': 1.5})
