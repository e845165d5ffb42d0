"""Multiclass recalibration under lp calibration error.

The package splits into geometry (:mod:`lpcal.simplex`), synthetic data with
exact ground truth (:mod:`lpcal.world`), sample-based estimation with
adaptive query pools (:mod:`lpcal.estimation`), the merge-only partition
structures (:mod:`lpcal.partitions`), the recalibration loop
(:mod:`lpcal.calibrator`), the exact evaluator (:mod:`lpcal.evaluator`), and
the experiment CLI (:mod:`lpcal.cli`).
"""

from .calibrator import (
    CalibParams,
    CalibratedPredictor,
    RunTrace,
    calibrate,
    derive_params,
    select_bins,
)
from .errors import (
    DisjointnessError,
    EnumerationCapError,
    EstimateFailureError,
    InvariantError,
    MembershipError,
    QueryBudgetError,
)
from .estimation import (
    BinMassTable,
    DisjointQueryPool,
    bin_mass_sample_size,
    estimate_bin_masses,
    pool_create,
    pool_sample_size,
)
from .evaluator import (
    ErrorReport,
    empirical_report,
    exact_bin_class_error,
    exact_lp_error,
    exact_report,
    exact_sq_error,
)
from .simplex import (
    Level,
    canonical,
    enumerate_levels,
    is_member,
    level_count,
    project_simplex,
    round_down,
)
from .world import (
    Predictor,
    SampleBatch,
    World,
    draw,
    exact_event_stats,
    make_scenario,
)

__all__ = [
    "BinMassTable",
    "CalibParams",
    "CalibratedPredictor",
    "DisjointQueryPool",
    "DisjointnessError",
    "EnumerationCapError",
    "ErrorReport",
    "EstimateFailureError",
    "InvariantError",
    "Level",
    "MembershipError",
    "Predictor",
    "QueryBudgetError",
    "RunTrace",
    "SampleBatch",
    "World",
    "bin_mass_sample_size",
    "calibrate",
    "canonical",
    "derive_params",
    "draw",
    "empirical_report",
    "enumerate_levels",
    "estimate_bin_masses",
    "exact_bin_class_error",
    "exact_event_stats",
    "exact_lp_error",
    "exact_report",
    "exact_sq_error",
    "is_member",
    "level_count",
    "make_scenario",
    "pool_create",
    "pool_sample_size",
    "project_simplex",
    "round_down",
    "select_bins",
]

__version__ = "0.1.0"
