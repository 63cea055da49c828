"""Trajectory policies from repeated demonstrations.

Gaussian Process regression over mixed real/integer/categorical task
variables with heteroscedastic noise, exact replication-compressed
inference, temporal alignment of demonstrations, and via-point modulation.
"""

from .domain import (
    CompressedDataset,
    DataError,
    DegenerateDataError,
    DegenerateTrajectoryError,
    Demonstration,
    DemonstrationSet,
    DimSpec,
    SchemaError,
    TaskPoint,
    TaskSchema,
    build_compressed,
    load_demonstrations,
    save_demonstrations,
    validate_point,
)
from .gp import (
    FitControls,
    GPModel,
    NoiseModel,
    PredictiveDistribution,
    fit_heteroscedastic,
    fit_mogp,
    load_models,
    log_marginal_likelihood,
    predict,
    predict_mogp,
    save_models,
)
from .hyperopt import InitializationError, OptControl, OptResult, optimize
from .kernels import (
    InfeasibleParameterError,
    KernelComponent,
    KernelSpec,
    compose,
    cross_gram,
    default_kernel_spec,
    gram,
)
from .modulation import ViaPoint, ViaPointSet, condition, modulate, viapoint_distribution
from .preprocess import AlignmentResult, TimeScaler, compute_tci, dtw_align, resample_uniform, time_scale
from .replication import (
    CompressedSystem,
    NumericalError,
    bench_replication,
    loglik_compressed,
    predict_compressed,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "CompressedDataset",
    "CompressedSystem",
    "DataError",
    "DegenerateDataError",
    "DegenerateTrajectoryError",
    "Demonstration",
    "DemonstrationSet",
    "DimSpec",
    "FitControls",
    "GPModel",
    "InfeasibleParameterError",
    "InitializationError",
    "KernelComponent",
    "KernelSpec",
    "NoiseModel",
    "NumericalError",
    "OptControl",
    "OptResult",
    "PredictiveDistribution",
    "SchemaError",
    "TaskPoint",
    "TaskSchema",
    "TimeScaler",
    "ViaPoint",
    "ViaPointSet",
    "bench_replication",
    "build_compressed",
    "compose",
    "compute_tci",
    "condition",
    "cross_gram",
    "default_kernel_spec",
    "dtw_align",
    "fit_heteroscedastic",
    "fit_mogp",
    "gram",
    "load_demonstrations",
    "load_models",
    "log_marginal_likelihood",
    "modulate",
    "optimize",
    "predict",
    "predict_compressed",
    "predict_mogp",
    "resample_uniform",
    "save_demonstrations",
    "save_models",
    "time_scale",
    "validate_point",
    "viapoint_distribution",
    "__version__",
]
