"""Constants for the control app."""

# Side of a one-sided construction (left/right Bouligand elements)
MINUS = 'minus'
PLUS = 'plus'

SIDE_CHOICES = [
    (MINUS, 'Left (d1 branch on the kink set)'),
    (PLUS, 'Right (d2 branch on the kink set)'),
]

# Built-in nonlinearities
PC1_CHOICES = [
    ('max0', 'max(t, 0)'),
    ('kink', 'Two affine pieces meeting at t_bar'),
    ('smooth', 't + t^3/3 (differentiable control group)'),
    ('branches', 'Explicit polynomial branches'),
]

TASK_CHOICES = [
    ('solve-state', 'Solve the state equation'),
    ('optimize', 'Projected-gradient minimization'),
    ('verify', 'Stationarity verification'),
    ('bouligand-limit', 'Gateaux-to-Bouligand limit test'),
    ('wset-limit', 'Difference-quotient limit test'),
    ('convergence-study', 'Manufactured-solution convergence study'),
]

# Relative width of the "exact" kink band, times the range of the state
LEVEL_BAND_FACTOR = 1e-8

# Relative width of the active-set band, times (1 + max |u_b|)
ACTIVE_BAND_FACTOR = 1e-8

# Band nodes whose directional increment is below this (relative to
# max |delta|) keep their previous branch
DIRECTION_ZERO_FACTOR = 1e-14

# Degenerate perturbation parameters are multiplied by this factor and
# retried at most DEGENERATE_RESAMPLES times
EPS_RESAMPLE_FACTOR = 1.0 + 1e-3
DEGENERATE_RESAMPLES = 5

# Exit codes of the ocp command
EXIT_OK = 0
EXIT_SOLVER_ERROR = 1
EXIT_VERDICT_FAILED = 2
