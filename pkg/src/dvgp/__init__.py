"""Sparse variational Gaussian processes with decoupled mean/covariance bases:
inducing-point means, Fourier-feature covariances, and the SVGP / SGPR / VFF
baselines, plus a config-driven benchmark harness."""

from .kernels import InputDomain, KernelSpec, PeriodicSpec, eval_kernel, kernel_matrix
from .fourier import FourierBasis, MultiDimBasis, cross_covariance, gram, make_frequencies
from .likelihoods import GaussianLikelihood, ProbitLikelihood
from .model import (
    DecoupledGP,
    FourierCovBasis,
    InducingCovBasis,
    Predictive,
    VariationalState,
    coupled_basis_predict,
    sgpr_fit,
)
from .training import TrainConfig, TrainTrace, minibatch_stream, train
from .data import Dataset, gp_sample, load_csv, sample_synthetic, split, standardize
from .metrics import MetricsRecord, aggregate, evaluate

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "PeriodicSpec", "InputDomain", "eval_kernel", "kernel_matrix",
    "FourierBasis", "MultiDimBasis", "make_frequencies", "cross_covariance", "gram",
    "GaussianLikelihood", "ProbitLikelihood",
    "DecoupledGP", "FourierCovBasis", "InducingCovBasis", "Predictive",
    "VariationalState", "coupled_basis_predict", "sgpr_fit",
    "TrainConfig", "TrainTrace", "minibatch_stream", "train",
    "Dataset", "gp_sample", "sample_synthetic", "load_csv", "split", "standardize",
    "MetricsRecord", "evaluate", "aggregate",
    "__version__",
]
