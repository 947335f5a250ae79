"""Bayesian multivariate Bernoulli mixture profiling.

Clusters units described by binary indicators into latent profiles with a
fully Bayesian mixture whose component count is itself sampled, using
coupled tempered chains.  Includes binarization of continuous tables,
label-switching repair, profile summaries, and a downstream Bayesian
logistic regression on profile membership.
"""

__version__ = "0.1.0"

from .dataset import (
    BinaryDataset,
    RawTable,
    ThresholdRule,
    ThresholdSpec,
    binarize,
    compute_thresholds,
    load_binary_dataset,
    load_table,
    save_binary_dataset,
)
from .model import Priors
from .oracle import SyntheticSpec, brute_force_posterior, generate_synthetic
from .sampler import Mc3Config, PosteriorSamples, heat_schedule, run_mc3
from .postprocess import ProfileSummary, summarize_samples

__all__ = [
    "BinaryDataset",
    "RawTable",
    "ThresholdRule",
    "ThresholdSpec",
    "binarize",
    "compute_thresholds",
    "load_binary_dataset",
    "load_table",
    "save_binary_dataset",
    "Priors",
    "SyntheticSpec",
    "brute_force_posterior",
    "generate_synthetic",
    "Mc3Config",
    "PosteriorSamples",
    "heat_schedule",
    "run_mc3",
    "ProfileSummary",
    "summarize_samples",
]
