"""Operating characteristics of quickest change-point detection charts.

The package solves the integral equations for the ARL to false alarm, the
conditional average detection delay, the quasi-stationary distribution and
a minimax lower bound of Shiryaev-Roberts type charts with a head start,
the randomized (quasi-stationary) start, CUSUM and EWMA.  Thresholds are
calibrated to ARL targets and every quantity can be cross-checked by Monte
Carlo simulation.
"""

__version__ = "0.1.0"

from .calibration import (  # noqa: E402
    CalibrationError,
    CalibrationResult,
    CalibrationTolerances,
    calibrate,
    delay_at,
    find_r_nu,
    find_r_star,
    pilot_threshold,
    resolve_strategy,
    worst_delay,
)
from .discretization import DriftMap, Grid, build_conjugate_operator, build_forward_operator, build_grid  # noqa: E402
from .metrics import (  # noqa: E402
    add_profile,
    compute_performance_vectors,
    local_false_alarm_prob,
    lower_bound,
    rho_sequence,
    scan_profiles,
    srp_characteristics,
)
from .models import LikelihoodRatioModel, Measure, lr_cdf, lr_pdf  # noqa: E402
from .montecarlo import McEstimate, Quantity, QsdSampler, estimate, simulate_stopping_time  # noqa: E402
from .procedures import Chart, InitStrategy, ProcedureSpec, operating_characteristics, step_statistic  # noqa: E402
from .solvers import SolveMethod, SolveOptions, leading_left_eigenpair, solve_second_kind  # noqa: E402

__all__ = [
    "CalibrationError", "CalibrationResult", "CalibrationTolerances", "Chart", "DriftMap", "Grid",
    "InitStrategy", "LikelihoodRatioModel", "McEstimate", "Measure", "ProcedureSpec", "QsdSampler",
    "Quantity", "SolveMethod", "SolveOptions", "add_profile", "build_conjugate_operator",
    "build_forward_operator", "build_grid", "calibrate", "compute_performance_vectors", "delay_at",
    "estimate", "find_r_nu", "find_r_star", "leading_left_eigenpair", "local_false_alarm_prob",
    "lower_bound", "lr_cdf", "lr_pdf", "operating_characteristics", "pilot_threshold",
    "resolve_strategy", "rho_sequence", "scan_profiles", "simulate_stopping_time",
    "solve_second_kind", "srp_characteristics", "step_statistic", "worst_delay",
]
