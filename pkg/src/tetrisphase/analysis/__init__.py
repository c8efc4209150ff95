from .distill import DistillResult, FittedExpression, NoActiveBranchError, distill_network
from .linfit import (
    DegenerateFitWarning,
    LinearFit,
    branch_correlator_features,
    branch_linear_fit,
    least_squares_fit,
    per_label_means,
)
from .report import AnalysisReport, analyze, write_report
from .sr import Expression, ParetoArchive, SrConfig, optimize_constants, sr_fit
from .transition import Curve, TransitionEstimate, curve_from_samples, transition_location

__all__ = [
    "DistillResult",
    "FittedExpression",
    "NoActiveBranchError",
    "distill_network",
    "DegenerateFitWarning",
    "LinearFit",
    "branch_correlator_features",
    "branch_linear_fit",
    "least_squares_fit",
    "per_label_means",
    "AnalysisReport",
    "analyze",
    "write_report",
    "Expression",
    "ParetoArchive",
    "SrConfig",
    "optimize_constants",
    "sr_fit",
    "Curve",
    "TransitionEstimate",
    "curve_from_samples",
    "transition_location",
]
