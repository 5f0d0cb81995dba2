"""Multidimensional latent Markov item-response models.

Estimation (EM with multi-start), model selection (BIC/BIC*), hypothesis
testing (chi-squared and parametric-bootstrap LR tests), and seeded
simulation for long sequences of binary outcomes whose latent ability
vector follows a partially homogeneous Markov chain.
"""

from .em import (FitOptions, FitResult, canonicalize, e_step, fit, loglik,
                 m_step_initial, m_step_items, m_step_transitions,
                 permute_states, validate_params)
from .errors import (DataFormatError, DegenerateLikelihoodError,
                     EstimationError, LmirtError, SpecValidationError)
from .inference import (BootstrapOptions, ComparisonRow, LRTestResult, bic,
                        bic_star, check_nested, embed_params, lr_test,
                        model_table)
from .likelihood import (ChainParams, Dataset, ForwardBackwardResult,
                         ForwardResult, ParamSet, PosteriorSet, SubjectRecord,
                         forward, forward_backward, forward_backward_all,
                         initial_prob_matrix, initial_probs)
from .model_spec import (ConstraintSet, ItemBank, MeasurementMode, ModelSpec,
                         RegimePlan, count_free_params, validate)
from .response_model import (AbilitySupport, ItemParams, bernoulli_prob,
                             canonical_state_order, log_success_prob,
                             success_prob, success_prob_table)
from .simulate import (ArmTemplate, DesignPlan, SimulatedDataset,
                       paper_fixture, simulate, simulate_responses,
                       verify_simulation)

__version__ = "0.1.0"

__all__ = [
    "AbilitySupport", "ArmTemplate", "BootstrapOptions", "ChainParams",
    "ComparisonRow", "ConstraintSet", "DataFormatError", "Dataset",
    "DegenerateLikelihoodError", "DesignPlan", "EstimationError",
    "FitOptions", "FitResult", "ForwardBackwardResult", "ForwardResult",
    "ItemBank", "ItemParams", "LRTestResult", "LmirtError",
    "MeasurementMode", "ModelSpec", "ParamSet", "PosteriorSet", "RegimePlan",
    "SimulatedDataset", "SpecValidationError", "SubjectRecord",
    "bernoulli_prob", "bic", "bic_star", "canonical_state_order",
    "canonicalize", "check_nested", "count_free_params", "e_step", "embed_params", "fit",
    "forward", "forward_backward", "forward_backward_all",
    "initial_prob_matrix", "initial_probs", "log_success_prob", "loglik",
    "lr_test", "m_step_initial", "m_step_items", "m_step_transitions",
    "model_table", "paper_fixture", "permute_states", "simulate",
    "simulate_responses", "success_prob", "success_prob_table", "validate",
    "validate_params", "verify_simulation",
]
