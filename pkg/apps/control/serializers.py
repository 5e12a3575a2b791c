"""
Run-configuration schema.

A config is a JSON document with one object per section; every section and
every key is optional. Data fields (targets, bounds, b, controls) accept a
number, an expression string in x1, x2, or {"csv": "path"} with the path
relative to the config file.
"""
from pathlib import Path
import logging

from django.core.exceptions import ValidationError as DjangoValidationError
from rest_framework import serializers
from rest_framework.settings import api_settings

from .benchmarks import BENCHMARKS, SMOOTH_SOLUTION, build_benchmark
from .constants import MINUS, PC1_CHOICES, PLUS, SIDE_CHOICES, TASK_CHOICES
from .expressions import DataSource, parse_expression
from .grid import BoundaryField, Field, build_grid
from .nonsmooth import build_pc1
from .objective import ProblemSpec
from .operator import BouligandLimitConfig, ControlPair
from .optimize import OptimizeConfig
from .pde import SolverConfig

logger = logging.getLogger(__name__)

BOTH = 'both'
LIMIT_SIDE_CHOICES = SIDE_CHOICES + [(BOTH, 'Both sides')]
BENCHMARK_CHOICES = [(name, name.replace('_', ' ')) for name in BENCHMARKS]


def _messages(exc):
    """Django ValidationError -> serializer error payload."""
    if hasattr(exc, 'error_dict'):
        return {key: [str(m) for e in errors for m in e.messages] for key, errors in exc.error_dict.items()}
    return list(exc.messages)


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown key.'] for key in unknown})
        return super().to_internal_value(data)


class GridDataField(serializers.Field):
    """Constant, expression or CSV file; resolves to a DataSource."""

    default_error_messages = {
        'invalid': 'Expected a number, an expression string or {"csv": path}.',
        'missing_file': 'CSV file {path} does not exist.',
    }

    def to_internal_value(self, data):
        if isinstance(data, bool):
            self.fail('invalid')
        if isinstance(data, (int, float)):
            return DataSource('constant', float(data))
        if isinstance(data, str):
            try:
                parse_expression(data)
            except DjangoValidationError as exc:
                raise serializers.ValidationError(exc.messages)
            return DataSource('expression', data)
        if isinstance(data, dict) and set(data) == {'csv'} and isinstance(data['csv'], str):
            path = Path(data['csv'])
            if not path.is_absolute():
                path = Path(self.context.get('base_dir', '.')) / path
            if not path.is_file():
                self.fail('missing_file', path=path)
            return DataSource('csv', path)
        self.fail('invalid')

    def to_representation(self, value):
        return value.as_config() if isinstance(value, DataSource) else value


class GridSerializer(StrictSerializer):
    nx = serializers.IntegerField(min_value=3, default=33)
    ny = serializers.IntegerField(min_value=3, required=False, allow_null=True, default=None)
    rect = serializers.ListField(
        child=serializers.FloatField(), min_length=4, max_length=4, default=lambda: [0.0, 0.0, 1.0, 1.0]
    )

    def validate_rect(self, value):
        if value[2] <= 0 or value[3] <= 0:
            raise serializers.ValidationError("rect is [x0, y0, lx, ly] with lx, ly > 0.")
        return value


class NonlinearitySerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=PC1_CHOICES, default='max0')
    params = serializers.DictField(default=dict)

    def validate(self, attrs):
        try:
            build_pc1(attrs['kind'], attrs['params'])
        except DjangoValidationError as exc:
            raise serializers.ValidationError({'params': _messages(exc)})
        return attrs


class ProblemSerializer(StrictSerializer):
    y_omega = GridDataField(default=DataSource('constant', 0.0))
    y_gamma = GridDataField(default=DataSource('constant', 0.0))
    alpha = serializers.FloatField(min_value=0.0, default=1.0)
    kappa_omega = serializers.FloatField(default=1.0)
    kappa_gamma = serializers.FloatField(default=1.0)
    b = GridDataField(default=DataSource('constant', 1.0))
    u_b = GridDataField(required=False, allow_null=True, default=None)
    v_b = GridDataField(required=False, allow_null=True, default=None)
    delta_level = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    benchmark = serializers.ChoiceField(choices=BENCHMARK_CHOICES, required=False, allow_null=True, default=None)

    def validate_kappa_omega(self, value):
        if value <= 0:
            raise serializers.ValidationError("kappa_omega must be > 0 (control cost on Omega).")
        return value

    def validate_kappa_gamma(self, value):
        if value <= 0:
            raise serializers.ValidationError("kappa_gamma must be > 0 (control cost on Gamma).")
        return value


class ControlsSerializer(StrictSerializer):
    u = GridDataField(required=False, allow_null=True, default=None)
    v = GridDataField(required=False, allow_null=True, default=None)


class SolverSerializer(StrictSerializer):
    newton_tol = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    newton_max_iter = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    linear_tol = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    linear_max_iter = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    kink_branch = serializers.ChoiceField(choices=SIDE_CHOICES, required=False, allow_null=True, default=None)
    picard_max_iter = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)

    def validate(self, attrs):
        try:
            SolverConfig.from_settings(**attrs)
        except DjangoValidationError as exc:
            raise serializers.ValidationError(_messages(exc))
        return attrs


class OptimizerSerializer(StrictSerializer):
    max_iters = serializers.IntegerField(min_value=0, default=500)
    c = serializers.FloatField(default=1e-4)
    backtrack = serializers.FloatField(default=0.5)
    max_backtracks = serializers.IntegerField(min_value=1, default=40)
    initial_step = serializers.FloatField(default=1.0)
    tol = serializers.FloatField(default=1e-8)
    slack = serializers.FloatField(default=1e-12)
    b_probes = serializers.IntegerField(min_value=0, default=200)

    def validate(self, attrs):
        try:
            OptimizeConfig(**attrs)
        except DjangoValidationError as exc:
            raise serializers.ValidationError(_messages(exc))
        return attrs


class VerifySerializer(StrictSerializer):
    n_probes = serializers.IntegerField(min_value=0, default=200)


class LimitSerializer(StrictSerializer):
    epsilons = serializers.ListField(child=serializers.FloatField(), min_length=1, required=False, allow_null=True, default=None)
    sigma = serializers.FloatField(min_value=0.0, default=0.0)
    side = serializers.ChoiceField(choices=LIMIT_SIDE_CHOICES, default=BOTH)
    n_probes = serializers.IntegerField(min_value=1, default=3)

    def validate(self, attrs):
        try:
            limit_config(attrs)
        except DjangoValidationError as exc:
            raise serializers.ValidationError({'epsilons': _messages(exc)})
        return attrs


class WsetSerializer(StrictSerializer):
    f = GridDataField(default=DataSource('constant', 1.0))
    h = GridDataField(default=DataSource('constant', 0.0))


class StudySerializer(StrictSerializer):
    nx = serializers.ListField(child=serializers.IntegerField(min_value=3), min_length=2, default=lambda: [17, 33, 65])
    solution = serializers.CharField(default=SMOOTH_SOLUTION)
    b = serializers.FloatField(default=1.0)
    min_order = serializers.FloatField(default=1.8)

    def validate_nx(self, value):
        if any(later <= earlier for earlier, later in zip(value, value[1:])):
            raise serializers.ValidationError("Study grids must be strictly increasing.")
        return value

    def validate_solution(self, value):
        try:
            parse_expression(value)
        except DjangoValidationError as exc:
            raise serializers.ValidationError(exc.messages)
        return value

    def validate_b(self, value):
        if value <= 0:
            raise serializers.ValidationError("b must be > 0.")
        return value


class OutputSerializer(StrictSerializer):
    dir = serializers.CharField(required=False, allow_null=True, default=None)
    vtk = serializers.BooleanField(default=False)


SECTIONS = {
    'grid': GridSerializer,
    'nonlinearity': NonlinearitySerializer,
    'problem': ProblemSerializer,
    'controls': ControlsSerializer,
    'solver': SolverSerializer,
    'optimizer': OptimizerSerializer,
    'verify': VerifySerializer,
    'limit': LimitSerializer,
    'wset': WsetSerializer,
    'study': StudySerializer,
    'output': OutputSerializer,
}


class RunConfigSerializer(StrictSerializer):
    """Whole run configuration; missing sections take their defaults."""
    task = serializers.ChoiceField(choices=TASK_CHOICES, default='solve-state')
    seed = serializers.IntegerField(min_value=0, default=0)
    grid = GridSerializer()
    nonlinearity = NonlinearitySerializer()
    problem = ProblemSerializer()
    controls = ControlsSerializer()
    solver = SolverSerializer()
    optimizer = OptimizerSerializer()
    verify = VerifySerializer()
    limit = LimitSerializer()
    wset = WsetSerializer()
    study = StudySerializer()
    output = OutputSerializer()

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError({api_settings.NON_FIELD_ERRORS_KEY: ['A config must be a JSON object.']})
        data = dict(data)
        for name in SECTIONS:
            if data.get(name) is None:
                data[name] = {}
        return super().to_internal_value(data)

    def validate(self, attrs):
        # Sample everything once so grid-dependent invariants fail at parse time
        try:
            spec = problem_from_config(attrs)
        except DjangoValidationError as exc:
            raise serializers.ValidationError({'problem': _messages(exc)})
        try:
            controls_from_config(attrs, spec)
            if attrs['task'] == 'wset-limit':
                direction_from_config(attrs, spec)
        except DjangoValidationError as exc:
            raise serializers.ValidationError({'controls': _messages(exc)})
        except ValueError as exc:
            raise serializers.ValidationError({'controls': [str(exc)]})
        return attrs


def solver_from_config(data):
    return SolverConfig.from_settings(**data['solver'])


def limit_config(limit):
    if limit.get('epsilons') is None:
        return BouligandLimitConfig(sigma=limit['sigma'])
    return BouligandLimitConfig(epsilons=tuple(limit['epsilons']), sigma=limit['sigma'])


def optimize_config(data, initial=None):
    return OptimizeConfig(initial=initial, seed=data['seed'], **data['optimizer'])


def limit_sides(limit):
    return (MINUS, PLUS) if limit['side'] == BOTH else (limit['side'],)


def _sample(source, grid, boundary=False):
    return None if source is None else source.sample(grid, boundary)


def problem_from_config(data, nx=None):
    """ProblemSpec from validated config data; nx overrides the grid size (ny follows)."""
    grid_data = data['grid']
    solver = solver_from_config(data)
    size = nx or grid_data['nx']
    if data['problem'].get('benchmark'):
        return build_benchmark(data['problem']['benchmark'], size, solver=solver).spec
    ny = size if nx or grid_data['ny'] is None else grid_data['ny']
    grid = build_grid(size, ny, grid_data['rect'])
    nonlinearity = data['nonlinearity']
    problem = data['problem']
    return ProblemSpec(
        grid=grid,
        pc1=build_pc1(nonlinearity['kind'], nonlinearity['params']),
        y_omega=_sample(problem['y_omega'], grid),
        y_gamma=_sample(problem['y_gamma'], grid, boundary=True),
        alpha=problem['alpha'],
        kappa_omega=problem['kappa_omega'],
        kappa_gamma=problem['kappa_gamma'],
        b=_sample(problem['b'], grid, boundary=True),
        u_b=_sample(problem['u_b'], grid),
        v_b=_sample(problem['v_b'], grid, boundary=True),
        solver=solver,
        delta_level=problem['delta_level'],
        name=problem.get('benchmark') or 'custom',
    )


def controls_from_config(data, spec):
    """
    Control pair named by the controls section.

    Missing entries fall back to the benchmark's known stationary control,
    then to zero.
    """
    grid = spec.grid
    fallback = None
    if data['problem'].get('benchmark'):
        fallback = build_benchmark(data['problem']['benchmark'], grid.nx, solver=spec.solver).w_bar
    controls = data['controls']
    u = _sample(controls['u'], grid)
    v = _sample(controls['v'], grid, boundary=True)
    if u is None:
        u = fallback.u if fallback is not None else Field.zeros(grid)
    if v is None:
        v = fallback.v if fallback is not None else BoundaryField.zeros(grid)
    return ControlPair(u, v)


def direction_from_config(data, spec):
    wset = data['wset']
    return wset['f'].sample(spec.grid), wset['h'].sample(spec.grid, boundary=True)


def _flatten(errors, path=()):
    if isinstance(errors, dict):
        for key, value in errors.items():
            yield from _flatten(value, path + (key,))
    elif isinstance(errors, list) and errors and not all(isinstance(e, str) for e in errors):
        for index, value in enumerate(errors):
            if value:
                yield from _flatten(value, path + (index,))
    else:
        for message in (errors if isinstance(errors, list) else [errors]):
            yield path, str(message)


def locate_line(text, path):
    """Line of the innermost key of path found in order in the raw JSON text; None if absent."""
    position, found = 0, None
    for key in path:
        if not isinstance(key, str) or key == api_settings.NON_FIELD_ERRORS_KEY:
            continue
        index = text.find(f'"{key}"', position)
        if index < 0:
            break
        position = found = index
    return None if found is None else text.count('\n', 0, found) + 1


def format_errors(errors, text):
    """Flat 'path (line N): message' strings for a serializer error dict."""
    lines = []
    for path, message in _flatten(errors):
        keys = [str(k) for k in path if k != api_settings.NON_FIELD_ERRORS_KEY]
        location = '.'.join(keys) or '<root>'
        line = locate_line(text, path)
        if line is not None:
            location = f"{location} (line {line})"
        lines.append(f"{location}: {message}")
    return lines
