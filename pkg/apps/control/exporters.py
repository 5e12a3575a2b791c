"""
Writers and readers for run artifacts.

Field CSV layout::

    # nx,ny,hx,hy,x0,y0
    # 33,33,0.03125,0.03125,0,0
    # omega
    x1,x2,value
    ...

Rows follow the node order of the field (row-major for omega, perimeter
order for gamma) and use 17 significant digits, so files re-import exactly.
"""
import csv
import json
import logging
from pathlib import Path

import numpy as np
from rest_framework.utils.encoders import JSONEncoder

from .grid import BoundaryField, Field, Grid

logger = logging.getLogger(__name__)

GRID_HEADER = '# nx,ny,hx,hy,x0,y0'
KINDS = {'omega': Field, 'gamma': BoundaryField}


def _grid_line(grid):
    return '# ' + ','.join('%.17g' % v for v in (grid.nx, grid.ny, grid.hx, grid.hy, grid.x0, grid.y0))


def write_field_csv(path, field):
    """Write a Field or BoundaryField with its grid header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    x1, x2 = grid.coordinates
    if isinstance(field, BoundaryField):
        kind = 'gamma'
        x1, x2 = x1[grid.boundary_index], x2[grid.boundary_index]
    else:
        kind = 'omega'
    header = '\n'.join([GRID_HEADER[2:], _grid_line(grid)[2:], kind])
    np.savetxt(path, np.column_stack([x1, x2, field.values]), fmt='%.17g', delimiter=',', header=header)
    logger.debug(f"Wrote {kind} field to {path}")
    return path


def read_field_csv(path, grid=None):
    """Read a field CSV; when grid is given the header must describe the same node layout."""
    path = Path(path)
    with path.open() as fh:
        lines = [fh.readline().strip() for _ in range(3)]
    if lines[0] != GRID_HEADER:
        raise ValueError(f"{path}: missing grid header '{GRID_HEADER}'.")
    nx, ny, hx, hy, x0, y0 = (float(v) for v in lines[1].lstrip('#').split(','))
    kind = lines[2].lstrip('#').strip()
    if kind not in KINDS:
        raise ValueError(f"{path}: unknown field kind '{kind}'.")
    if grid is None:
        grid = Grid(int(nx), int(ny), x0, y0, hx * (nx - 1), hy * (ny - 1))
    elif (grid.nx, grid.ny) != (int(nx), int(ny)) or not np.allclose([grid.hx, grid.hy, grid.x0, grid.y0], [hx, hy, x0, y0]):
        raise ValueError(f"{path}: grid header {int(nx)}x{int(ny)} does not match {grid}.")
    data = np.loadtxt(path, delimiter=',', comments='#', ndmin=2)
    return KINDS[kind](grid, data[:, 2])


def write_vtk(path, grid, fields):
    """Legacy VTK STRUCTURED_POINTS file with one scalar array per Field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        '# vtk DataFile Version 3.0',
        'nsoc fields',
        'ASCII',
        'DATASET STRUCTURED_POINTS',
        f'DIMENSIONS {grid.nx} {grid.ny} 1',
        f'ORIGIN {grid.x0!r} {grid.y0!r} 0',
        f'SPACING {grid.hx!r} {grid.hy!r} 1',
        f'POINT_DATA {grid.n_nodes}',
    ]
    for name, field in fields.items():
        lines.append(f'SCALARS {name} double 1')
        lines.append('LOOKUP_TABLE default')
        lines.extend('%.17g' % v for v in field.values)
    path.write_text('\n'.join(lines) + '\n')
    return path


def write_table_csv(path, rows, columns):
    """Write a list of dicts (or dataclass rows) as CSV with the given columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            values = [row[c] if isinstance(row, dict) else getattr(row, c) for c in columns]
            writer.writerow(['' if v is None else '%.17g' % v if isinstance(v, float) else v for v in values])
    return path


def dump_json(data):
    """Deterministic JSON text: sorted keys, DRF encoder for numpy values."""
    return json.dumps(data, cls=JSONEncoder, sort_keys=True, indent=2) + '\n'


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(data))
    return path
