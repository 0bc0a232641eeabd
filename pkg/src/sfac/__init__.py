"""Symmetric f-divergence regularization toolkit."""

from sfac.divergences import (
    DivergenceFamily,
    FORWARD_KL,
    GAN,
    JEFFREYS,
    JENSEN_SHANNON,
    REVERSE_KL,
    SYMMETRIC_FAMILIES,
    chi_family,
    chi_n,
    exact_f_divergence,
    f_derivative_at_one,
    f_value,
    g_derivative_at_one,
    g_value,
    parse_family,
    series_coefficient,
    taylor_divergence,
    truncation_bound,
)
from sfac.gaussfit import (
    FitReport,
    GaussFitError,
    GaussianMixture,
    GaussianModel,
    QuadratureError,
    best_fit_quadrature,
    fit_sgd,
    quadrature_divergence,
    sgd_loss_and_grad,
    standard_mixture,
)
from sfac.losses import (
    LossConfig,
    RatioBatch,
    advantage_weight,
    awr_term,
    clip_ratio,
    conditional_symmetry_term,
    loss_series_weights,
    sfac_total_loss,
    tabular_sfac_loss,
)
from sfac.policy import (
    PolicySolveError,
    RegularizationConfig,
    RegularizedSolution,
    oracle_solve,
    project_to_simplex,
    q_exp,
    solve_chi2,
    solve_chi23,
    total_variation,
)
from sfac.trainer import (
    CriticTables,
    EvalReport,
    OfflineDataset,
    TabularMdp,
    TabularPolicy,
    TrainConfig,
    TrainResult,
    TrainState,
    TrainerError,
    Transition,
    behavior_policy,
    config_from_dict,
    config_to_dict,
    evaluate_policy,
    expectile_value,
    fit_critics,
    generate_dataset,
    make_gridworld,
    sfac_update,
    train,
)

__version__ = "0.1.0"
