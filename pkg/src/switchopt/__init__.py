"""switchopt: relaxation-homotopy solvers for switching-constrained programs."""

from .analysis import (
    BranchSpec, OracleResult, ProfileTable, RunRecord, branch_enumerate_global,
    branch_problem, builtin_names, make_benchmark, make_portfolio,
    performance_profile, portfolio_branch_prune, profile_to_csv,
    results_to_csv, semicontinuous_reformulate,
)
from .driver import (
    DriverOptions, IterationRecord, SolveTrace, recover_mpsc_multipliers,
    solve_mpsc, switch_multiplier_matrix,
)
from .exceptions import (
    DimensionMismatch, EnumerationCapExceeded, EvaluationFailure,
    InfeasiblePoint, ParseError, SwitchoptError,
)
from .expr import Expression, ProblemFile, load_problem_file, load_problem_text, parse_expression
from .nlp import EvalCounters, NlpOptions, NlpResult, kkt_residual, solve_nlp
from .problem import (
    EvalRecord, IndexPartition, Multipliers, MpscProblem, classify_indices,
    evaluate, finite_difference_gradient, finite_difference_jacobian,
)
from .relaxation import (
    NlpEval, NlpProblem, RelaxedPartition, Scheme, SchemeKind, ThetaSpec,
    build_relaxed, dphi_su, dtheta, grad_phi, phi, phi_su, relaxed_partition,
    switch_rows_eval, theta,
)
from .stationarity import (
    CqFlags, StationarityCertificate, check_mpsc_licq, check_mpsc_mfcq,
    check_nnamcq, classify_stationarity, verify_stationarity,
)

__version__ = "0.1.0"

__all__ = [
    "BranchSpec", "CqFlags", "DimensionMismatch", "DriverOptions",
    "EnumerationCapExceeded", "EvalCounters", "EvalRecord", "EvaluationFailure",
    "Expression", "IndexPartition", "InfeasiblePoint", "IterationRecord",
    "Multipliers", "MpscProblem", "NlpEval", "NlpOptions", "NlpProblem",
    "NlpResult", "OracleResult", "ParseError", "ProblemFile", "ProfileTable",
    "RelaxedPartition", "RunRecord", "Scheme", "SchemeKind", "SolveTrace",
    "StationarityCertificate", "SwitchoptError", "ThetaSpec",
    "branch_enumerate_global", "branch_problem", "build_relaxed",
    "builtin_names", "check_mpsc_licq", "check_mpsc_mfcq", "check_nnamcq",
    "classify_indices", "classify_stationarity", "dphi_su", "dtheta",
    "evaluate", "finite_difference_gradient", "finite_difference_jacobian",
    "grad_phi", "kkt_residual", "load_problem_file", "load_problem_text",
    "make_benchmark", "make_portfolio", "parse_expression",
    "performance_profile", "phi", "phi_su", "portfolio_branch_prune",
    "profile_to_csv", "recover_mpsc_multipliers", "relaxed_partition",
    "results_to_csv", "semicontinuous_reformulate", "solve_mpsc", "solve_nlp",
    "switch_multiplier_matrix", "switch_rows_eval", "theta",
    "verify_stationarity",
]
