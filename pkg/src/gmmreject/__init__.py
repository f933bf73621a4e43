"""Rejection sampling from differentiable log-densities with refined mixture proposals."""

from .bench import BenchSpec, oracle_sample
from .proposal import GmmProposal, TruncatedGaussianMixture
from .sampler import RefinedRejectionSampler, RunReport, SamplerConfig, run
from .target import Domain, Dual, LogTarget

__all__ = [
    "BenchSpec", "Domain", "Dual", "GmmProposal", "LogTarget", "RefinedRejectionSampler",
    "RunReport", "SamplerConfig", "TruncatedGaussianMixture", "oracle_sample", "run",
]

__version__ = "0.1.0"
