"""Bayesian estimation and projection of subnational contraceptive supply shares.

Hierarchical P-spline models on the logit scale, fitted by a blocked Gibbs
sampler, with posterior summaries, out-of-sample validation and synthetic-data
oracles.
"""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .basis import BasisConfig, KnotVector, build_basis, place_knots
from .data import Dataset, LogitData, Method, Observation, parse_dataset, prepare_logit_data, split_train_test
from .diagnostics import convergence_report, ess, r_hat
from .errors import (ConfigError, ConvergenceWarning, DataError, MissingArtifactError, RowValidationError,
                     SchemaError, SupplyShareError)
from .process import ParameterState, log_likelihood, log_prior, reconstruct_beta
from .sampler import DrawStore, SamplerConfig, initialize, run_chains
from .variants import MODEL_NAMES, ModelSpec, get_model

__all__ = [
    "BACKEND", "BasisConfig", "KnotVector", "build_basis", "place_knots", "Dataset", "LogitData", "Method",
    "Observation", "parse_dataset", "prepare_logit_data", "split_train_test", "convergence_report", "ess",
    "r_hat", "ConfigError", "ConvergenceWarning", "DataError", "MissingArtifactError", "RowValidationError",
    "SchemaError", "SupplyShareError", "ParameterState", "log_likelihood", "log_prior", "reconstruct_beta",
    "DrawStore", "SamplerConfig", "initialize", "run_chains", "MODEL_NAMES", "ModelSpec", "get_model",
]
