"""Sparse recovery with l1-Tikhonov regularization and a-priori support certificates."""

from .operators import DenseOperator, FBIError, SparseSignal, SupportSet
from .solver import SolverOptions, SolveResult, ista_solve
from .certify import AlphaPolicy, Certificate, NoiseInfo, build_certificate

__all__ = [
    "DenseOperator",
    "FBIError",
    "SparseSignal",
    "SupportSet",
    "SolverOptions",
    "SolveResult",
    "ista_solve",
    "AlphaPolicy",
    "Certificate",
    "NoiseInfo",
    "build_certificate",
]

__version__ = "0.1.0"
