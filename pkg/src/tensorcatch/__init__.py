"""Covariate-adjusted sparse discriminant analysis for tensor predictors."""
from .tensor import DenseTensor, read_ctb, write_ctb
from .estimation import CatchModel, LabeledDataset, estimate_parameters
from .solver import KERNEL, SolverConfig, fit_path, fit_single

__version__ = "0.1.0"

__all__ = [
    "CatchModel",
    "DenseTensor",
    "KERNEL",
    "LabeledDataset",
    "SolverConfig",
    "estimate_parameters",
    "fit_path",
    "fit_single",
    "read_ctb",
    "write_ctb",
]
