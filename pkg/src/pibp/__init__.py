"""Binary latent feature inference with IBP and phylogenetic IBP priors."""

from ._kernels import BACKEND
from .likelihood import LikelihoodCache, collapsed_log_likelihood
from .model import (
    BinaryFactorMatrix,
    FactorDecomposition,
    GroupPartition,
    NoiseParams,
    approximation_error,
    degree,
    factor_decomposition,
    feature_similarity,
    generate_data,
    similarity_error,
    truncated_feature_count,
)
from .prior import (
    StickState,
    alpha_log_prior,
    column_log_prob,
    conditional_leaf_prob,
    prior_mass_estimate,
    sample_column,
    stick_draw,
)
from .sampler import (
    ChainState,
    PosteriorSample,
    SamplerConfig,
    gibbs_sweep,
    propose_new_features,
    run_chain,
    select_map_sample,
    update_alpha,
    update_sticks,
    update_variances,
    verify_cache,
)
from .tree import (
    RootedTree,
    flat_tree,
    group_tree,
    parse_newick,
    two_group_tree,
    validate_tree,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BinaryFactorMatrix",
    "ChainState",
    "FactorDecomposition",
    "GroupPartition",
    "LikelihoodCache",
    "NoiseParams",
    "PosteriorSample",
    "RootedTree",
    "SamplerConfig",
    "StickState",
    "alpha_log_prior",
    "approximation_error",
    "collapsed_log_likelihood",
    "column_log_prob",
    "conditional_leaf_prob",
    "degree",
    "factor_decomposition",
    "feature_similarity",
    "flat_tree",
    "generate_data",
    "gibbs_sweep",
    "group_tree",
    "parse_newick",
    "prior_mass_estimate",
    "propose_new_features",
    "run_chain",
    "sample_column",
    "select_map_sample",
    "similarity_error",
    "stick_draw",
    "truncated_feature_count",
    "two_group_tree",
    "update_alpha",
    "update_sticks",
    "update_variances",
    "validate_tree",
    "verify_cache",
]
