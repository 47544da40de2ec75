"""Variational inference for Gaussian-process-modulated Poisson processes.

Fits a continuous intensity function lambda(x) = f(x)^2, with f a sparse
(inducing-point) Gaussian process, by maximising an evidence lower bound
that requires no discretisation of the domain.  Includes held-out
predictive bounds, a truncated-normal kernel-smoothing benchmark and a
thinning-based simulator for ground-truth experiments.
"""

from .pointdata import Domain, EventSet, domain_measure, load_events, poisson_log_likelihood
from .kernel import HyperParams, kernel_eval, gram, psi_matrix
from .core import (
    VariationalState,
    InducingPoints,
    Model,
    qf_marginal,
    kl_qu_pu,
    expected_log_f_sq,
    integral_terms,
    elbo,
    elbo_gradient,
)
from .optimizer import FitConfig, fit, pack, unpack, z_from_omega, regular_grid
from .predictive import (
    PredictiveReport,
    predictive_bound_lp,
    predictive_bound_l0,
    mc_predictive,
    posterior_intensity,
)
from .baseline import KsModel, truncnorm_pdf, fit_bandwidth, ks_log_predictive, ks_intensity
from .simulate import GroundTruth, ground_truth, sample_gp_grid, thin_sample, make_grid

__all__ = [
    "Domain", "EventSet", "domain_measure", "load_events", "poisson_log_likelihood",
    "HyperParams", "kernel_eval", "gram", "psi_matrix",
    "VariationalState", "InducingPoints", "Model",
    "qf_marginal", "kl_qu_pu", "expected_log_f_sq", "integral_terms",
    "elbo", "elbo_gradient",
    "FitConfig", "fit", "pack", "unpack", "z_from_omega", "regular_grid",
    "PredictiveReport", "predictive_bound_lp", "predictive_bound_l0",
    "mc_predictive", "posterior_intensity",
    "KsModel", "truncnorm_pdf", "fit_bandwidth", "ks_log_predictive", "ks_intensity",
    "GroundTruth", "ground_truth", "sample_gp_grid", "thin_sample", "make_grid",
]

__version__ = "0.1.0"
