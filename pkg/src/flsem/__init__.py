"""Causal effects of a functional exposure with sparse scalar instruments and controls."""

__version__ = "0.1.0"

from .config import RunConfig, parse_config
from .datagen import FunctionalDataset, SimConfig, generate
from .exposure import ExposureFit, fgsdar_fit, predict_zhat, select_exposure_sparsity
from .inference import TestResult, nullity_test
from .ivcheck import IvProblem, IvReport, check_identifiability, corollary_max_invalid
from .numerics import Grid, KernelSpec, default_kernel, gram_matrix
from .outcome import OutcomeFit, outcome_fit, pflm_baseline_fit, select_sparsity
from .pipeline import fit_pipeline, run_replicates

__all__ = [
    "RunConfig", "parse_config", "FunctionalDataset", "SimConfig", "generate",
    "ExposureFit", "fgsdar_fit", "predict_zhat", "select_exposure_sparsity",
    "TestResult", "nullity_test", "IvProblem", "IvReport", "check_identifiability",
    "corollary_max_invalid", "Grid", "KernelSpec", "default_kernel", "gram_matrix",
    "OutcomeFit", "outcome_fit", "pflm_baseline_fit", "select_sparsity",
    "fit_pipeline", "run_replicates",
]
