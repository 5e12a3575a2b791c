from rest_framework import serializers


class SolveReportSerializer(serializers.Serializer):
    """Serializer for state-solve diagnostics"""
    iterations = serializers.IntegerField()
    residual = serializers.FloatField()
    converged = serializers.BooleanField()
    method = serializers.CharField()
    picard_iterations = serializers.IntegerField()
    backtracks = serializers.IntegerField()
    linear_solves = serializers.IntegerField()
    linear_iterations = serializers.IntegerField()
    kink_nodes = serializers.IntegerField()


class TraceRowSerializer(serializers.Serializer):
    iteration = serializers.IntegerField()
    objective = serializers.FloatField()
    pg_norm = serializers.FloatField()
    step = serializers.FloatField()
    defect = serializers.FloatField()


class OptimizeTraceSerializer(serializers.Serializer):
    """Serializer for projected-gradient runs; rows hold one entry per iteration"""
    converged = serializers.BooleanField()
    iterations = serializers.IntegerField()
    b_stat_min = serializers.FloatField(allow_null=True)
    final_objective = serializers.SerializerMethodField()
    final_pg_norm = serializers.SerializerMethodField()
    rows = TraceRowSerializer(many=True)

    def get_final_objective(self, obj) -> float:
        return obj.final.objective if obj.final else None

    def get_final_pg_norm(self, obj) -> float:
        return obj.final.pg_norm if obj.final else None


class ProbeSerializer(serializers.Serializer):
    label = serializers.CharField()
    value = serializers.FloatField()


class BStatSerializer(serializers.Serializer):
    min_value = serializers.FloatField()
    scale = serializers.FloatField()
    tol = serializers.FloatField()
    argmin = serializers.CharField(allow_null=True)
    passed = serializers.BooleanField()
    probes = ProbeSerializer(many=True)


class StrongSerializer(serializers.Serializer):
    residuals = serializers.DictField(child=serializers.FloatField())
    cq_measure = serializers.FloatField()
    conditional = serializers.BooleanField()
    tol = serializers.FloatField()
    passed = serializers.BooleanField()


class MultiplierSerializer(serializers.Serializer):
    side = serializers.CharField()
    residual = serializers.FloatField()
    residual_omega = serializers.FloatField()
    residual_gamma = serializers.FloatField()
    mu_min = serializers.FloatField()
    mu_norm = serializers.FloatField()
    mu_outside_band = serializers.FloatField()
    band_nodes = serializers.IntegerField()
    solver_status = serializers.IntegerField()
    tol = serializers.FloatField()
    passed = serializers.BooleanField()


class BoundCaseSerializer(serializers.Serializer):
    omega = serializers.FloatField()
    gamma = serializers.FloatField()
    tol = serializers.FloatField()
    passed = serializers.BooleanField()


class AppendixSerializer(serializers.Serializer):
    strong_residual = serializers.FloatField()
    band_laplacian = serializers.FloatField()
    band_discrepancy = serializers.FloatField()
    band_nodes = serializers.IntegerField()


class EquivalenceSerializer(serializers.Serializer):
    verdict = serializers.CharField()
    b_passed = serializers.BooleanField()
    strong_passed = serializers.BooleanField()
    conditional = serializers.BooleanField()
    strong_implies_b = serializers.BooleanField()
    b_implies_strong = serializers.BooleanField()
    passed = serializers.BooleanField()


class StationarityReportSerializer(serializers.Serializer):
    """Serializer for the full verification report; optional checks serialize as null"""
    b_stat = BStatSerializer()
    cq = serializers.FloatField()
    strong = StrongSerializer()
    multiplier_minus = MultiplierSerializer()
    multiplier_plus = MultiplierSerializer(allow_null=True)
    ubvb = BoundCaseSerializer(allow_null=True)
    appendix = AppendixSerializer(allow_null=True)
    equivalence = EquivalenceSerializer(allow_null=True)
    verdicts = serializers.DictField(child=serializers.BooleanField())
    passed = serializers.BooleanField()


class LimitRowSerializer(serializers.Serializer):
    eps = serializers.FloatField()
    rho = serializers.FloatField()
    probe_id = serializers.IntegerField()
    err_h1 = serializers.FloatField()
    err_max = serializers.FloatField()
    degenerate = serializers.BooleanField()


class StudyRowSerializer(serializers.Serializer):
    nx = serializers.IntegerField()
    h = serializers.FloatField()
    error = serializers.FloatField()
    order = serializers.FloatField(allow_null=True)


class GridSummarySerializer(serializers.Serializer):
    nx = serializers.IntegerField()
    ny = serializers.IntegerField()
    hx = serializers.FloatField()
    hy = serializers.FloatField()


class ProblemSummarySerializer(serializers.Serializer):
    """Serializer for the problem header shared by all task reports"""
    name = serializers.CharField()
    grid = GridSummarySerializer()
    nonlinearity = serializers.SerializerMethodField()
    alpha = serializers.FloatField()
    kappa_omega = serializers.FloatField()
    kappa_gamma = serializers.FloatField()
    bounded = serializers.BooleanField()
    solver = serializers.SerializerMethodField()

    def get_nonlinearity(self, obj) -> dict:
        d = obj.pc1
        return {
            'name': d.name,
            't_bar': d.t_bar,
            'left_slope': d.left_slope,
            'right_slope': d.right_slope,
            'differentiable': d.is_differentiable,
        }

    def get_solver(self, obj) -> dict:
        return obj.solver.as_dict()
