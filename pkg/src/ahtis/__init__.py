"""Adaptive importance sampling for heavy-tailed targets with Student-t proposals."""

from .diagnostics import (
    DegenerateWeights,
    WeightSet,
    alpha_ess,
    discrete_alpha_divergence,
    dm_log_weights,
    ess,
    snis_alpha_divergence,
    snis_expectation,
    z_estimate,
)
from .sampler import Mode, RunRecord, SamplerConfig, compare_runs, run, run_ahtis, run_amis
from .studentt import StudentTParams, alpha_of_nu, log_pdf, optimal_alpha_divergence
from .targets import SyntheticTargetSpec, make_synthetic_target, student_target

__version__ = "0.1.0"
