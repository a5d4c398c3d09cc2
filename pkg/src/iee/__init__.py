"""Iterative estimating equations (IEE) for longitudinal regression with
unspecified within-subject covariances."""

from .covariance import (
    CovarianceEstimate,
    RepairPolicy,
    assemble,
    estimate_componentwise,
    estimate_matrixwise,
    matrixwise_by_visit_set,
    repair_pd,
    residuals,
)
from .dataset import (
    ByCovariateLevel,
    CovarianceGrouping,
    Explicit,
    LongitudinalDataset,
    PairOnly,
    PartitionDesign,
    SubjectRecord,
    build_dataset,
    build_grouping,
    detect_partition,
    read_csv,
    read_grouping_spec,
    write_csv,
)
from .driver import FitResult, IeeOptions, TraceEntry, convergence_rate_diagnostic, fit_iee, one_step_fit
from .errors import (
    DatasetError,
    GroupingError,
    IEEError,
    IndefiniteCovariance,
    MissingGroup,
    NewtonDiverged,
    NewtonSingular,
    NoPartition,
    NonFiniteMean,
    NotConverged,
    SingularInformation,
)
from .gee import (
    CovarianceSet,
    GeeOptions,
    blue_linear,
    estimating_function,
    information,
    model_based_covariance,
    ols_linear,
    solve_gee,
)
from .mean_model import Custom, Linear, LogisticRandomIntercept, MeanModel
from .simulation import McSummary, ScenarioSpec, exact_blue_covariance, generate, monte_carlo

__version__ = "0.1.0"

__all__ = [
    "assemble",
    "blue_linear",
    "build_dataset",
    "build_grouping",
    "ByCovariateLevel",
    "convergence_rate_diagnostic",
    "CovarianceEstimate",
    "CovarianceGrouping",
    "CovarianceSet",
    "Custom",
    "DatasetError",
    "detect_partition",
    "estimate_componentwise",
    "estimate_matrixwise",
    "estimating_function",
    "exact_blue_covariance",
    "Explicit",
    "fit_iee",
    "FitResult",
    "GeeOptions",
    "generate",
    "GroupingError",
    "IEEError",
    "IeeOptions",
    "IndefiniteCovariance",
    "information",
    "Linear",
    "LogisticRandomIntercept",
    "LongitudinalDataset",
    "matrixwise_by_visit_set",
    "McSummary",
    "MeanModel",
    "MissingGroup",
    "model_based_covariance",
    "monte_carlo",
    "NewtonDiverged",
    "NewtonSingular",
    "NonFiniteMean",
    "NoPartition",
    "NotConverged",
    "ols_linear",
    "one_step_fit",
    "PairOnly",
    "PartitionDesign",
    "read_csv",
    "read_grouping_spec",
    "repair_pd",
    "RepairPolicy",
    "residuals",
    "ScenarioSpec",
    "SingularInformation",
    "solve_gee",
    "SubjectRecord",
    "TraceEntry",
    "write_csv",
]
