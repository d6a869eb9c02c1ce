"""Simulator for value-incentivized model-based learning in matrix games,
finite and discounted Markov games, and single-agent reductions."""

from .core import (
    LinearPayoffModel,
    MatrixDataset,
    NoiseOracle,
    RegGameSpec,
    as_simplex,
    kl_divergence,
    one_hot_features,
    project_simplex,
    random_matrix_model,
    reg_game_value,
    uniform_simplex,
)
from .discounted import (
    DiscountedMarkovGame,
    InfiniteVmgConfig,
    discounted_best_response,
    discounted_nash_gap,
    discounted_values,
    discounted_visitation_exact,
    random_discounted_game,
    run_vmg_infinite,
    run_vmg_mdp,
    sampler,
)
from .envs import (
    FiniteMarkovGame,
    JointPolicy,
    LinearMixtureKernel,
    best_response_dp,
    evaluate_values,
    nash_gap,
    random_finite_game,
    sample_trajectory,
    visitation,
)
from .harness import (
    baseline_greedy_mle,
    fit_regret_slope,
    run_cell,
    run_experiment,
    validate_config,
)
from .learners import DiscountedGameLearner, MarkovGameLearner, MatrixGameLearner
from .markov import (
    MarkovVmgConfig,
    TransitionDataset,
    equilibrium,
    markov_model_objective,
    markov_model_update,
    nll_loss,
    run_vmg_markov,
)
from .matrix import (
    MatrixVmgConfig,
    best_response_max,
    best_response_min,
    duality_gap,
    model_objective,
    model_objective_grad,
    run_vmg_bandit,
    run_vmg_matrix,
    run_vmg_symmetric,
    solve_matrix_ne,
    update_model,
)
from .trace import RegretTrace

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
