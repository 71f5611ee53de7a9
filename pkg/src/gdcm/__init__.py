"""Latent-class diagnostic models with a sparse item-interaction network."""

from .core import (
    AttributeProfile,
    ClassPrior,
    DesignMatrix,
    DesignVector,
    DinaItemParams,
    GdcmModel,
    ItemCoefficients,
    QMatrix,
    ResponseMatrix,
    conditional_item_prob,
    design_vector,
    exact_pmf,
    item_response_prob,
    marginal_exact_pmf,
    unnormalized_joint,
)
from .estimate import (
    FitConfig,
    FitResult,
    fit,
    fit_fixed_lambda,
    fit_path,
    lambda_max,
    posterior_weights,
)
from .gof import GofResult, gof_p_value, run_gof, unnormalized_loglik
from .report import RecoveryMetrics, maximal_cliques, recovery_metrics
from .simulate import (
    GraphScenario,
    SimConfig,
    SimTruth,
    build_scenario_phi,
    gen_q_matrix,
    gibbs_sample_responses,
    sample_truth,
    sim_config,
    simulate_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
