"""Numerical tolerances shared by every module."""

# algebraic identities: decomposition round trips, Hermiticity, rule checks
ALGEBRA_TOL = 1e-10

# unitarity of constructed propagators
UNITARY_TOL = 1e-12

# decomposition terms with |coeff| at or below this are dropped
COEFF_CUTOFF = 1e-10

# default residual coupling phase (rad) a refocusing plan may leave behind
DEFAULT_PHASE_TOL = 0.05

# residual phase allowed when a gate is composed into SWAPs or routed CNOTs
STRICT_PHASE_TOL = 1e-9

# default classifier threshold, well above the ~4% spurious signal level
DEFAULT_THRESHOLD = 0.2
