"""Max-value entropy search Bayesian optimization.

GP modeling, max-value sampling (Gumbel CDF approximation and random-feature
posterior draws), information-theoretic and classic acquisitions, additive-GP
high-dimensional variants, and a reproducible benchmark harness.
"""

from .acquisition import (
    AcquisitionSpec,
    add_gp_ucb_alpha,
    add_mes_alpha,
    ei_alpha,
    est_alpha,
    g,
    mes_alpha,
    mes_alpha_marginal,
    optimize_acquisition,
    optimize_acquisition_discrete,
    optimize_acquisition_per_component,
    pi_alpha,
    ucb_alpha,
)
from .benchmarks import (
    Objective,
    inference_regret,
    inference_regret_curve,
    make_eggholder,
    make_michalewicz,
    make_shekel10,
    sample_synthetic_additive_objective,
    sample_synthetic_gp_objective,
    simple_regret,
)
from .exceptions import NumericalError
from .gp import (
    AddGpPosterior,
    Domain,
    GpPosterior,
    KernelParams,
    ObservationSet,
    Partition,
    PointPrediction,
    fit_add_posterior,
    fit_hyperparameters,
    fit_posterior,
    learn_decomposition,
    log_marginal_likelihood,
    predict,
    predict_batch,
    predict_component,
    predict_component_batch,
    se_kernel,
    se_kernel_matrix,
)
from .harness import (
    ExperimentSpec,
    MethodSpec,
    ObjectiveSpec,
    run_experiment,
    run_random_search,
)
from .loop import BoConfig, BoTrace, LearnSpec, model_adaptation_step, run_add_mes, run_mes
from .maxvalue import (
    FeatureMap,
    FeaturePosterior,
    GridStats,
    GumbelParams,
    MaxValueSamples,
    build_feature_map,
    build_grid_stats,
    feature_posterior,
    fit_gumbel,
    invert_cdf_max,
    log_cdf_max,
    sample_max_features,
    sample_max_gumbel,
    sample_posterior_function,
)

__version__ = "0.1.0"
