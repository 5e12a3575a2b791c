"""
Run orchestration: parse a config, dispatch the task, write artifacts.

Every run directory holds report.json (deterministic for a fixed config and
seed), manifest.json (config echo, versions, seed, wall time) and the field
and table CSVs named in the report's "artifacts" list.
"""
from dataclasses import dataclass, field
import json
import logging
import platform
from pathlib import Path
import time

import django
import numpy as np
import rest_framework
import scipy
import sympy
from django.conf import settings
from django.core.exceptions import ValidationError as DjangoValidationError

from .benchmarks import convergence_study, observed_orders
from .constants import EXIT_OK, EXIT_SOLVER_ERROR, EXIT_VERDICT_FAILED
from .exceptions import ConfigError, LineSearchFailure, NonConvergence
from .exporters import write_field_csv, write_json, write_table_csv, write_vtk
from .grid import BoundaryField, Field
from .nonsmooth import build_pc1
from .objective import objective_terms
from .operator import bouligand_limit_test, control_to_state, e_bound_rhs, wset_limit_test
from .optimize import minimize
from .report_serializer import (
    LimitRowSerializer, OptimizeTraceSerializer, ProblemSummarySerializer, SolveReportSerializer,
    StationarityReportSerializer, StrongSerializer, StudyRowSerializer,
)
from .serializers import (
    RunConfigSerializer, controls_from_config, direction_from_config, format_errors, limit_config,
    limit_sides, locate_line, optimize_config, problem_from_config, solver_from_config,
)
from .stationarity import B_STAT_TOL, classical_kkt, verify

logger = logging.getLogger(__name__)

LIMIT_COLUMNS = ['eps', 'rho', 'probe_id', 'err_h1', 'err_max', 'degenerate']
TRACE_COLUMNS = ['iteration', 'objective', 'pg_norm', 'step', 'defect']
STUDY_COLUMNS = ['nx', 'h', 'error', 'order']
# allowed rise between consecutive limit-test errors: absolute floor plus a share of the first error
LIMIT_FLOOR = 1e-6
LIMIT_RTOL = 1e-6


@dataclass(eq=False)
class RunConfig:
    """Validated run configuration together with its source text."""
    data: dict
    path: Path
    text: str
    raw: dict

    @property
    def task(self):
        return self.data['task']

    @property
    def seed(self):
        return self.data['seed']

    def spec(self, nx=None):
        return problem_from_config(self.data, nx)

    def controls(self, spec):
        return controls_from_config(self.data, spec)

    @property
    def explicit_controls(self):
        controls = self.data['controls']
        return controls['u'] is not None or controls['v'] is not None


@dataclass
class TaskOutcome:
    report: dict
    passed: bool
    fields: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)


@dataclass
class RunResult:
    exit_code: int
    report: dict
    out_dir: Path


def parse_config(path, task=None):
    """Read and validate a JSON run config; task, when given, must agree with the file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        message = f"{path} (line {exc.lineno}): invalid JSON, {exc.msg}."
        raise ConfigError(message, [message])
    data = dict(raw) if isinstance(raw, dict) else raw
    if task is not None and isinstance(data, dict):
        if data.get('task', task) != task:
            message = f"task (line {locate_line(text, ('task',))}): config names '{data['task']}', command asked for '{task}'."
            raise ConfigError(message, [message])
        data['task'] = task
    serializer = RunConfigSerializer(data=data, context={'base_dir': path.parent})
    if not serializer.is_valid():
        errors = format_errors(serializer.errors, text)
        raise ConfigError(f"Invalid config {path}:\n" + '\n'.join(errors), errors)
    logger.debug(f"Parsed {path} for task {serializer.validated_data['task']}")
    return RunConfig(data=serializer.validated_data, path=path, text=text, raw=raw)


def _summary(spec):
    return ProblemSummarySerializer(spec).data


def _random_directions(spec, count, rng):
    grid = spec.grid
    return [
        (Field(grid, rng.standard_normal(grid.n_nodes)), BoundaryField(grid, rng.standard_normal(grid.n_boundary)))
        for _ in range(count)
    ]


def run_solve_state(config, seed):
    spec = config.spec()
    w = config.controls(spec)
    y, solve = control_to_state(spec, w, with_report=True)
    report = {
        'problem': _summary(spec),
        'solve': SolveReportSerializer(solve).data,
        'state': {'min': y.min(), 'max': y.max(), 'spread': y.spread},
        'objective': objective_terms(spec, w, y),
        'verdicts': {'converged': solve.converged},
    }
    return TaskOutcome(report, solve.converged, fields={'y': y, 'u': w.u, 'v': w.v})


def run_optimize(config, seed):
    spec = config.spec()
    initial = config.controls(spec) if config.explicit_controls else None
    w, trace = minimize(spec, optimize_config(config.data, initial))
    y = control_to_state(spec, w)
    terms = objective_terms(spec, w, y)
    verdicts = {'converged': trace.converged}
    if trace.b_stat_min is not None:
        verdicts['b_stationary'] = trace.b_stat_min >= -B_STAT_TOL * (1.0 + abs(sum(terms.values())))
    report = {
        'problem': _summary(spec),
        'trace': OptimizeTraceSerializer(trace).data,
        'objective': terms,
        'verdicts': verdicts,
    }
    return TaskOutcome(
        report, all(verdicts.values()),
        fields={'u': w.u, 'v': w.v, 'y': y},
        tables={'trace': (trace.rows, TRACE_COLUMNS)},
    )


def run_verify(config, seed):
    spec = config.spec()
    w = config.controls(spec)
    y = control_to_state(spec, w)
    result = verify(spec, w, config.data['verify']['n_probes'], seed, y=y)
    report = {
        'problem': _summary(spec),
        'stationarity': StationarityReportSerializer(result).data,
        'objective': objective_terms(spec, w, y),
        'verdicts': result.verdicts,
    }
    if spec.pc1.is_differentiable:
        report['classical_kkt'] = StrongSerializer(classical_kkt(spec, w, y)).data
    fields = {
        'y': y,
        'p_tilde': result.strong.p_tilde,
        'zeta_omega': result.strong.zeta_omega,
        'zeta_gamma': result.strong.zeta_gamma,
        'mu_minus': result.multiplier_minus.mu,
    }
    if result.multiplier_plus is not None:
        fields['mu_plus'] = result.multiplier_plus.mu
    return TaskOutcome(report, result.passed, fields=fields)


def limit_nonincreasing(rows, probe_id=0):
    """Every consecutive pair of H1 errors for one direction must not rise beyond the noise tolerance."""
    errors = [row.err_h1 for row in rows if row.probe_id == probe_id]
    if not errors:
        return False
    tol = LIMIT_FLOOR + LIMIT_RTOL * errors[0]
    return all(later <= earlier + tol for earlier, later in zip(errors, errors[1:]))


def run_bouligand_limit(config, seed):
    spec = config.spec()
    w = config.controls(spec)
    y = control_to_state(spec, w)
    limit = config.data['limit']
    cfg = limit_config(limit)
    probes = _random_directions(spec, limit['n_probes'], np.random.default_rng(seed))
    sides, verdicts, tables = {}, {}, {}
    for side in limit_sides(limit):
        try:
            rows = bouligand_limit_test(spec, w, cfg, side, probes, y=y)
        except ValueError as exc:
            logger.warning(f"Skipping side {side}: {exc}")
            sides[side] = {'skipped': str(exc)}
            continue
        verdicts[f'{side}_decreasing'] = all(limit_nonincreasing(rows, k) for k in range(len(probes)))
        final = [row.err_h1 for row in rows if row.eps == rows[-1].eps]
        sides[side] = {
            'rows': LimitRowSerializer(rows, many=True).data,
            'final_error': max(final),
        }
        tables[f'limit_{side}'] = (rows, LIMIT_COLUMNS)
    report = {
        'problem': _summary(spec),
        'epsilons': list(cfg.epsilons),
        'sigma': cfg.sigma,
        'sides': sides,
        'verdicts': verdicts,
    }
    return TaskOutcome(report, all(verdicts.values()), fields={'y': y}, tables=tables)


def run_wset_limit(config, seed):
    spec = config.spec()
    w = config.controls(spec)
    y = control_to_state(spec, w)
    limit = config.data['limit']
    cfg = limit_config(limit)
    f, h = direction_from_config(config.data, spec)
    sides, verdicts, fields, tables = {}, {}, {'y': y}, {}
    for side in limit_sides(limit):
        try:
            result = wset_limit_test(spec, w, cfg, side, f, h, y=y)
        except ValueError as exc:
            logger.warning(f"Skipping side {side}: {exc}")
            sides[side] = {'skipped': str(exc)}
            continue
        verdicts[f'{side}_decreasing'] = limit_nonincreasing(result.rows)
        sides[side] = {
            'rows': LimitRowSerializer(result.rows, many=True).data,
            'final_error': result.rows[-1].err_h1,
            'formula_max_abs': result.e_formula.max_abs(),
            'bound_rhs': e_bound_rhs(spec, w, y, f, h, side),
        }
        fields[f'e_numeric_{side}'] = result.e_numeric
        fields[f'e_formula_{side}'] = result.e_formula
        tables[f'wset_{side}'] = (result.rows, LIMIT_COLUMNS)
    report = {
        'problem': _summary(spec),
        'epsilons': list(cfg.epsilons),
        'sigma': cfg.sigma,
        'sides': sides,
        'verdicts': verdicts,
    }
    return TaskOutcome(report, all(verdicts.values()), fields=fields, tables=tables)


def run_convergence_study(config, seed):
    study = config.data['study']
    nonlinearity = config.data['nonlinearity']
    rows = convergence_study(
        study['nx'],
        pc1=build_pc1(nonlinearity['kind'], nonlinearity['params']),
        solution=study['solution'],
        b=study['b'],
        solver=solver_from_config(config.data),
    )
    orders = observed_orders(rows)
    min_order = float(orders.min()) if orders.size else None
    verdicts = {'order': min_order is not None and min_order >= study['min_order']}
    report = {
        'solution': study['solution'],
        'rows': StudyRowSerializer(rows, many=True).data,
        'min_observed_order': min_order,
        'verdicts': verdicts,
    }
    return TaskOutcome(report, verdicts['order'], tables={'convergence': (rows, STUDY_COLUMNS)})


TASKS = {
    'solve-state': run_solve_state,
    'optimize': run_optimize,
    'verify': run_verify,
    'bouligand-limit': run_bouligand_limit,
    'wset-limit': run_wset_limit,
    'convergence-study': run_convergence_study,
}


def output_dir(config, out_dir=None):
    if out_dir is not None:
        return Path(out_dir)
    configured = config.data['output']['dir']
    if configured:
        path = Path(configured)
        return path if path.is_absolute() else config.path.parent / path
    return Path(settings.CONTROL_OUTPUT_DIR) / f"{config.path.stem}-{config.task}"


def versions():
    return {
        'python': platform.python_version(),
        'django': django.get_version(),
        'djangorestframework': rest_framework.VERSION,
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'sympy': sympy.__version__,
    }


def _write_artifacts(out_dir, outcome, vtk):
    artifacts = []
    for name, values in outcome.fields.items():
        write_field_csv(out_dir / f'{name}.csv', values)
        artifacts.append(f'{name}.csv')
    for name, (rows, columns) in outcome.tables.items():
        write_table_csv(out_dir / f'{name}.csv', rows, columns)
        artifacts.append(f'{name}.csv')
    omega_fields = {name: f for name, f in outcome.fields.items() if isinstance(f, Field)}
    if vtk and omega_fields:
        grid = next(iter(omega_fields.values())).grid
        write_vtk(out_dir / 'fields.vtk', grid, omega_fields)
        artifacts.append('fields.vtk')
    return sorted(artifacts)


def run(config, out_dir=None, seed=None):
    """Execute config.task and write its artifacts; returns the exit code and report."""
    seed = config.seed if seed is None else seed
    out_dir = output_dir(config, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    logger.info(f"Running {config.task} from {config.path} (seed {seed}) into {out_dir}")

    try:
        outcome = TASKS[config.task](config, seed)
    except (NonConvergence, LineSearchFailure) as exc:
        logger.error(f"{config.task} failed: {exc}")
        report = {'task': config.task, 'seed': seed, 'error': {'type': type(exc).__name__, 'message': str(exc)}}
        if isinstance(exc, NonConvergence) and exc.report is not None:
            report['error']['solve'] = SolveReportSerializer(exc.report).data
        if isinstance(exc, LineSearchFailure) and exc.trace is not None:
            report['error']['trace'] = OptimizeTraceSerializer(exc.trace).data
        exit_code, artifacts = EXIT_SOLVER_ERROR, []
    except DjangoValidationError as exc:
        raise ConfigError(f"{config.path}: {'; '.join(exc.messages)}", list(exc.messages))
    else:
        artifacts = _write_artifacts(out_dir, outcome, config.data['output']['vtk'])
        report = {'task': config.task, 'seed': seed, 'passed': outcome.passed, 'artifacts': artifacts}
        report.update(outcome.report)
        exit_code = EXIT_OK if outcome.passed else EXIT_VERDICT_FAILED

    write_json(out_dir / 'report.json', report)
    write_json(out_dir / 'manifest.json', {
        'config': config.raw,
        'config_path': str(config.path),
        'task': config.task,
        'seed': seed,
        'exit_code': exit_code,
        'artifacts': ['report.json'] + artifacts,
        'versions': versions(),
        'wall_time': time.perf_counter() - started,
    })
    log = logger.info if exit_code == EXIT_OK else logger.warning
    log(f"{config.task} finished with exit code {exit_code} in {time.perf_counter() - started:.2f}s")
    return RunResult(exit_code=exit_code, report=report, out_dir=out_dir)
