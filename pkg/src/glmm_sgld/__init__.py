"""Stochastic-gradient Langevin sampling for generalized linear mixed models,
with a Lyapunov-equation covariance correction for the minibatch noise."""

__version__ = "0.1.0"

from .correction import (
    CorrectionResult,
    correct_chain,
    correct_samples,
    posthoc_correct,
    predicted_inflation,
    solve_lyapunov,
)
from .datagen import DESIGNS, generate_data
from .data_io import load_chain, load_dataset, save_chain, save_dataset
from .families import FAMILIES, BernoulliLogit, Family, Gaussian, Poisson, get_family
from .model import Dataset, GlmmModel
from .priors import PriorSpec
from .reference import full_gibbs_bernoulli, lmm_posterior
from .samplers import ConditionalSampler, conditional_sampler
from .sgld import (
    Chain,
    DivergenceError,
    SgldConfig,
    glmm_gradient_source,
    run_chain,
    select_delta,
    step_size,
)

__all__ = [
    "Chain",
    "ConditionalSampler",
    "CorrectionResult",
    "DESIGNS",
    "Dataset",
    "DivergenceError",
    "FAMILIES",
    "BernoulliLogit",
    "Family",
    "Gaussian",
    "GlmmModel",
    "Poisson",
    "PriorSpec",
    "SgldConfig",
    "conditional_sampler",
    "correct_chain",
    "correct_samples",
    "full_gibbs_bernoulli",
    "generate_data",
    "get_family",
    "glmm_gradient_source",
    "lmm_posterior",
    "load_chain",
    "load_dataset",
    "posthoc_correct",
    "predicted_inflation",
    "run_chain",
    "save_chain",
    "save_dataset",
    "select_delta",
    "solve_lyapunov",
    "step_size",
]
