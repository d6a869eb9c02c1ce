"""Estimator-style wrappers around the online runners.

Each learner is a scikit-learn BaseEstimator: constructor arguments are plain
hyperparameters (so get_params/set_params and clone work), fit consumes an
environment object and exposes the results as trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .core import RegGameSpec, uniform_simplex
from .discounted import InfiniteVmgConfig, run_vmg_infinite, run_vmg_mdp
from .errors import ConfigInvalid
from .markov import MarkovVmgConfig, run_vmg_markov
from .matrix import (
    MatrixVmgConfig,
    run_vmg_bandit,
    run_vmg_matrix,
    run_vmg_symmetric,
)


def _schedule(alpha, delta):
    if alpha == "paper":
        return ("paper_formula", delta)
    if alpha == "zero":
        return ("zero",)
    return ("constant", float(alpha))


def _finalize(est, trace):
    est.trace_ = trace
    est.gaps_ = np.asarray(trace.gaps)
    est.cum_regret_ = trace.cum_regret
    est.min_gap_ = trace.min_gap()
    est.final_residual_ = trace.final_residual
    est.n_rounds_ = len(trace)
    return est


class MatrixGameLearner(BaseEstimator):
    """Online matrix-game learner with bandit feedback.

    variant selects the general two-policy loop, the single-policy symmetric
    reduction, or the n = 1 bandit reduction. fit takes a NoiseOracle.
    """

    def __init__(self, T=200, beta=0.5, alpha="paper", delta=0.05,
                 solver_tol=1e-8, variant="matrix", seed=0):
        self.T = T
        self.beta = beta
        self.alpha = alpha
        self.delta = delta
        self.solver_tol = solver_tol
        self.variant = variant
        self.seed = seed

    def fit(self, oracle, y=None):
        tm = oracle.true_model
        spec = RegGameSpec(self.beta, uniform_simplex(tm.m), uniform_simplex(tm.n))
        config = MatrixVmgConfig(
            m=tm.m, n=tm.n, d=tm.d, spec=spec, T=self.T,
            alpha_schedule=_schedule(self.alpha, self.delta),
            solver_tol=self.solver_tol, seed=self.seed)
        runners = {"matrix": run_vmg_matrix, "symmetric": run_vmg_symmetric,
                   "bandit": run_vmg_bandit}
        if self.variant not in runners:
            raise ConfigInvalid(f"unknown variant {self.variant!r}")
        return _finalize(self, runners[self.variant](config, oracle))


class MarkovGameLearner(BaseEstimator):
    """Finite-horizon Markov-game learner; fit takes a FiniteMarkovGame."""

    def __init__(self, T=100, beta=0.0, equilibrium_mode="general_cce",
                 alpha="paper", delta=0.05, solver_tol=1e-8, seed=0):
        self.T = T
        self.beta = beta
        self.equilibrium_mode = equilibrium_mode
        self.alpha = alpha
        self.delta = delta
        self.solver_tol = solver_tol
        self.seed = seed

    def fit(self, game, y=None):
        config = MarkovVmgConfig(
            T=self.T, beta=self.beta, equilibrium_mode=self.equilibrium_mode,
            alpha_schedule=_schedule(self.alpha, self.delta),
            solver_tol=self.solver_tol, seed=self.seed)
        return _finalize(self, run_vmg_markov(config, game))


class DiscountedGameLearner(BaseEstimator):
    """Discounted learner; fit takes a DiscountedMarkovGame. variant 'game'
    runs the multi-player loop, 'mdp' the single-agent reduction."""

    def __init__(self, T=100, beta=0.0, equilibrium_mode="general_cce",
                 alpha="paper", delta=0.05, solver_tol=1e-8, variant="game",
                 option="I", seed=0):
        self.T = T
        self.beta = beta
        self.equilibrium_mode = equilibrium_mode
        self.alpha = alpha
        self.delta = delta
        self.solver_tol = solver_tol
        self.variant = variant
        self.option = option
        self.seed = seed

    def fit(self, game, y=None):
        config = InfiniteVmgConfig(
            T=self.T, beta=self.beta, equilibrium_mode=self.equilibrium_mode,
            alpha_schedule=_schedule(self.alpha, self.delta),
            solver_tol=self.solver_tol, seed=self.seed)
        if self.variant == "game":
            trace = run_vmg_infinite(config, game)
        elif self.variant == "mdp":
            trace = run_vmg_mdp(config, game, option=self.option)
        else:
            raise ConfigInvalid(f"unknown variant {self.variant!r}")
        return _finalize(self, trace)
