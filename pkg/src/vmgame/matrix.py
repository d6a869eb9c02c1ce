"""Value-incentivized online matrix game: regularized NE solver, model update,
best responses and data collection, plus the symmetric-game and bandit
reductions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LinearPayoffModel,
    MatrixDataset,
    RegGameSpec,
    as_simplex,
    antisymmetric_check,
    kl_divergence,
    logsumexp1,
    project_l2_ball,
    reg_game_value,
    softmax1,
)
from .errors import AsymmetricFeatures, BetaZeroUnsupported, DimensionMismatch, NonConvergence
from .schedules import matrix_alpha, resolve_alpha
from .trace import RegretTrace


# ---------------------------------------------------------------------------
# best responses and duality gap
# ---------------------------------------------------------------------------

def best_response_max(A, nu, spec):
    """argmax_mu f^{mu,nu}(A): softmax closed form for beta > 0, point mass on
    the first maximizing row for beta = 0."""
    A = np.asarray(A, dtype=float)
    nu = np.asarray(nu, dtype=float)
    payoff = A @ nu
    if spec.beta > 0:
        logits = np.log(spec.mu_ref) + payoff / spec.beta
        return as_simplex(softmax1(logits))
    out = np.zeros(A.shape[0])
    out[int(np.argmax(payoff))] = 1.0
    return as_simplex(out)


def best_response_min(A, mu, spec):
    """argmin_nu f^{mu,nu}(A); mirror of best_response_max."""
    A = np.asarray(A, dtype=float)
    mu = np.asarray(mu, dtype=float)
    payoff = A.T @ mu
    if spec.beta > 0:
        logits = np.log(spec.nu_ref) - payoff / spec.beta
        return as_simplex(softmax1(logits))
    out = np.zeros(A.shape[1])
    out[int(np.argmin(payoff))] = 1.0
    return as_simplex(out)


def duality_gap(A, mu, nu, spec):
    """f^{*,nu}(A) - f^{mu,*}(A); zero exactly at the regularized NE."""
    mu_br = best_response_max(A, nu, spec)
    nu_br = best_response_min(A, mu, spec)
    return reg_game_value(A, mu_br, nu, spec) - reg_game_value(A, mu, nu_br, spec)


# ---------------------------------------------------------------------------
# regularized NE solver
# ---------------------------------------------------------------------------

def _log_normalize(logp):
    return logp - logsumexp1(logp)


def _mirror_prox_reg(A, spec, tol, max_iter, lmu0=None, lnu0=None):
    """Extragradient mirror descent-ascent in the KL geometry; linear
    last-iterate convergence for beta > 0."""
    beta = spec.beta
    m, n = A.shape
    lref_mu = np.log(spec.mu_ref)
    lref_nu = np.log(spec.nu_ref)
    lmu = lref_mu.copy() if lmu0 is None else lmu0.copy()
    lnu = lref_nu.copy() if lnu0 is None else lnu0.copy()
    amax = float(np.max(np.abs(A))) if A.size else 0.0
    eta = 1.0 / (2.0 * amax + 2.0 * beta + 1e-12)
    denom = 1.0 + eta * beta

    def _step(lmu_base, lnu_base, mu_g, nu_g):
        new_lmu = _log_normalize((lmu_base + eta * (A @ nu_g) + eta * beta * lref_mu) / denom)
        new_lnu = _log_normalize((lnu_base - eta * (A.T @ mu_g) + eta * beta * lref_nu) / denom)
        return new_lmu, new_lnu

    gap = np.inf
    for it in range(max_iter):
        mu, nu = np.exp(lmu), np.exp(lnu)
        lmu_h, lnu_h = _step(lmu, lnu, mu, nu)
        lmu, lnu = _step(lmu, lnu, np.exp(lmu_h), np.exp(lnu_h))
        if it % 10 == 9 or it == max_iter - 1:
            mu, nu = as_simplex(np.exp(lmu)), as_simplex(np.exp(lnu))
            gap = duality_gap(A, mu, nu, spec)
            if gap <= tol:
                return mu, nu, lmu, lnu, gap
    return as_simplex(np.exp(lmu)), as_simplex(np.exp(lnu)), lmu, lnu, gap


def _polish_support(A, mu, nu, spec0, tol):
    """Solve the indifference equations on the apparent supports of an
    approximate unregularized NE; returns an exact pair or None."""
    m, n = A.shape
    for thresh in (1e-9, 1e-6, 1e-4, 1e-2):
        I = np.nonzero(mu > thresh)[0]
        J = np.nonzero(nu > thresh)[0]
        if len(I) == 0 or len(J) == 0:
            continue
        k, l = len(I), len(J)
        # unknowns: mu_I (k), nu_J (l), v (1)
        rows = []
        rhs = []
        sub = A[np.ix_(I, J)]
        for j in range(l):  # indifference of min player support
            row = np.zeros(k + l + 1)
            row[:k] = sub[:, j]
            row[-1] = -1.0
            rows.append(row)
            rhs.append(0.0)
        for i in range(k):  # indifference of max player support
            row = np.zeros(k + l + 1)
            row[k:k + l] = sub[i, :]
            row[-1] = -1.0
            rows.append(row)
            rhs.append(0.0)
        row = np.zeros(k + l + 1)
        row[:k] = 1.0
        rows.append(row)
        rhs.append(1.0)
        row = np.zeros(k + l + 1)
        row[k:k + l] = 1.0
        rows.append(row)
        rhs.append(1.0)
        sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
        mu_c = np.zeros(m)
        nu_c = np.zeros(n)
        mu_c[I] = np.clip(sol[:k], 0.0, None)
        nu_c[J] = np.clip(sol[k:k + l], 0.0, None)
        if mu_c.sum() <= 0 or nu_c.sum() <= 0:
            continue
        mu_c = as_simplex(mu_c)
        nu_c = as_simplex(nu_c)
        if duality_gap(A, mu_c, nu_c, spec0) <= tol:
            return mu_c, nu_c
    return None


def solve_matrix_ne(A, spec, tol=1e-8, max_iter=100_000):
    """Nash equilibrium of the (possibly KL-regularized) matrix game.

    beta > 0: mirror descent-ascent in the KL geometry, stopped on the
    duality-gap certificate. beta = 0: the same solver on a geometrically
    annealed regularization path, with support polishing and a beta = 0
    duality-gap certificate.

    Raises NonConvergence if the certificate is not met within the caps.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    A = np.asarray(A, dtype=float)
    if A.shape != (len(spec.mu_ref), len(spec.nu_ref)):
        raise DimensionMismatch(f"A {A.shape} vs refs ({len(spec.mu_ref)}, {len(spec.nu_ref)})")

    if spec.beta > 0:
        mu, nu, _, _, gap = _mirror_prox_reg(A, spec, tol, max_iter)
        if gap > tol:
            raise NonConvergence(f"regularized solver gap {gap:.3e} > tol {tol:.3e}",
                                 best=(mu, nu))
        return mu, nu

    # beta = 0: annealing path with certificate-based stopping
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        return as_simplex(spec.mu_ref.copy()), as_simplex(spec.nu_ref.copy())
    m, n = A.shape
    interior = RegGameSpec.uniform(m, n, beta=1.0)
    lmu = lnu = None
    beta_k = scale
    best = None
    for _ in range(60):
        stage = RegGameSpec(beta_k, interior.mu_ref, interior.nu_ref)
        stage_tol = max(0.05 * beta_k, tol * 1e-3)
        mu, nu, lmu, lnu, _ = _mirror_prox_reg(
            A, stage, stage_tol, max_iter, lmu0=lmu, lnu0=lnu)
        gap0 = duality_gap(A, mu, nu, spec)
        if best is None or gap0 < best[2]:
            best = (mu, nu, gap0)
        if gap0 <= tol:
            return mu, nu
        polished = _polish_support(A, mu, nu, spec, tol)
        if polished is not None:
            return polished
        beta_k *= 0.25
        if beta_k < 1e-11 * scale:
            break
    raise NonConvergence(
        f"annealed solver did not certify gap <= {tol:.3e}", best=best[:2])


# ---------------------------------------------------------------------------
# value-incentivized model update
# ---------------------------------------------------------------------------

def _br_max_value(A, nu, spec):
    """f^{*,nu}(A) in closed form (beta > 0) or as a vertex max (beta = 0)."""
    payoff = A @ nu
    if spec.beta > 0:
        lse = logsumexp1(np.log(spec.mu_ref) + payoff / spec.beta)
        return spec.beta * float(lse) + spec.beta * kl_divergence(nu, spec.nu_ref)
    return float(np.max(payoff))


def _br_min_value(A, mu, spec):
    """f^{mu,*}(A) in closed form (beta > 0) or as a vertex min (beta = 0)."""
    payoff = A.T @ mu
    if spec.beta > 0:
        lse = logsumexp1(np.log(spec.nu_ref) - payoff / spec.beta)
        return -spec.beta * float(lse) - spec.beta * kl_divergence(mu, spec.mu_ref)
    return float(np.min(payoff))


def model_objective(model, data, mu_t, nu_t, spec, alpha):
    """Squared loss on the dataset plus alpha * (f^{mu_t,*} - f^{*,nu_t}),
    both value terms evaluated at the model's payoff matrix."""
    A = model.payoff_matrix()
    ii, jj, vv = data.arrays()
    ls = float(np.sum((A[ii, jj] - vv) ** 2))
    if alpha == 0.0:
        return ls
    reg = -_br_max_value(A, nu_t, spec) + _br_min_value(A, mu_t, spec)
    return ls + alpha * reg


def model_objective_grad(model, data, mu_t, nu_t, spec, alpha):
    """Analytic gradient: the squared-loss term plus the Danskin gradient of
    the value regularizer through the closed-form best responses."""
    A = model.payoff_matrix()
    ii, jj, vv = data.arrays()
    grad = 2.0 * np.einsum("t,td->d", A[ii, jj] - vv, model.features[ii, jj])
    if alpha != 0.0:
        mu_br = best_response_max(A, nu_t, spec)
        nu_br = best_response_min(A, mu_t, spec)
        e_max = np.einsum("i,j,ijd->d", mu_br, nu_t, model.features)
        e_min = np.einsum("i,j,ijd->d", mu_t, nu_br, model.features)
        grad += -alpha * e_max + alpha * e_min
    return grad


@dataclass
class ModelOptSettings:
    """Projected-gradient settings for the model update."""

    max_iter: int = 500
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    init_step: float = 1.0


def update_model(model, data, mu_t, nu_t, spec, alpha, opt=None):
    """Projected gradient descent (onto the l2 ball of radius sqrt(d)) on the
    value-incentivized objective, warm-started from the current parameter.

    Returns (new_model, info); info['converged'] is False when the iteration
    cap was reached, in which case the best iterate is returned.
    """
    if opt is None:
        opt = ModelOptSettings()
    radius = np.sqrt(model.d)
    omega = model.omega.copy()

    # specialized closures: algebraically identical to model_objective and
    # model_objective_grad, but with the terms constant in omega precomputed
    # (the KL penalties of the frozen policies) and without re-validation
    m, n = model.m, model.n
    F = model.features.reshape(m * n, model.d)
    ii, jj, vv = data.arrays()
    flat_idx = ii * n + jj
    Fd = model.features[ii, jj]
    beta = spec.beta
    mu_t = np.asarray(mu_t, dtype=float)
    nu_t = np.asarray(nu_t, dtype=float)
    if alpha != 0.0 and beta > 0:
        lmu_ref = np.log(spec.mu_ref)
        lnu_ref = np.log(spec.nu_ref)
        kl_const = kl_divergence(nu_t, spec.nu_ref) + kl_divergence(mu_t, spec.mu_ref)

    def f(w):
        Aw = F @ w
        resid = Aw[flat_idx] - vv
        val = float(resid @ resid)
        if alpha == 0.0:
            return val
        A = Aw.reshape(m, n)
        if beta > 0:
            lse_max = logsumexp1(lmu_ref + (A @ nu_t) / beta)
            lse_min = logsumexp1(lnu_ref - (A.T @ mu_t) / beta)
            return val - alpha * beta * (lse_max + lse_min + kl_const)
        return val + alpha * (float(np.min(A.T @ mu_t)) - float(np.max(A @ nu_t)))

    def g(w):
        Aw = F @ w
        grad = 2.0 * ((Aw[flat_idx] - vv) @ Fd)
        if alpha == 0.0:
            return grad
        A = Aw.reshape(m, n)
        if beta > 0:
            mu_br = softmax1(lmu_ref + (A @ nu_t) / beta)
            nu_br = softmax1(lnu_ref - (A.T @ mu_t) / beta)
        else:
            mu_br = np.zeros(m)
            mu_br[int(np.argmax(A @ nu_t))] = 1.0
            nu_br = np.zeros(n)
            nu_br[int(np.argmin(A.T @ mu_t))] = 1.0
        e_max = np.einsum("i,j,ijd->d", mu_br, nu_t, model.features)
        e_min = np.einsum("i,j,ijd->d", mu_t, nu_br, model.features)
        return grad - alpha * e_max + alpha * e_min

    obj = f(omega)
    step = opt.init_step
    converged = False
    iters = 0
    for iters in range(1, opt.max_iter + 1):
        grad = g(omega)
        # projected-gradient stationarity measure
        moved = project_l2_ball(omega - grad, radius)
        if np.linalg.norm(omega - moved) <= opt.grad_tol:
            converged = True
            break
        accepted = False
        while step >= 1e-16:
            cand = project_l2_ball(omega - step * grad, radius)
            cobj = f(cand)
            if cobj <= obj - opt.armijo_c * float(grad @ (omega - cand)):
                accepted = True
                break
            step *= 0.5
        if not accepted or np.allclose(cand, omega, atol=1e-16):
            converged = True  # no descent direction left at float resolution
            break
        omega, obj = cand, cobj
        step = min(step * 2.0, 1e6)
    info = {"converged": converged, "iterations": iters, "objective": obj}
    return model.with_omega(omega), info


# ---------------------------------------------------------------------------
# the online game runners
# ---------------------------------------------------------------------------

@dataclass
class MatrixVmgConfig:
    m: int
    n: int
    d: int
    spec: RegGameSpec
    T: int
    alpha_schedule: tuple = ("zero",)
    solver_tol: float = 1e-8
    model_opt: ModelOptSettings = field(default_factory=ModelOptSettings)
    seed: int = 0
    omega0: np.ndarray | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be > 0")

    def alpha(self):
        return resolve_alpha(
            self.alpha_schedule, lambda delta: matrix_alpha(self.T, self.d, delta))


def _sample_index(rng, p):
    return int(rng.choice(len(p), p=p))


def _final_residual(model, data):
    if len(data) == 0:
        return 0.0
    A = model.payoff_matrix()
    ii, jj, vv = data.arrays()
    return float(np.mean((A[ii, jj] - vv) ** 2))


def _check_config(config, oracle):
    tm = oracle.true_model
    if (tm.m, tm.n, tm.d) != (config.m, config.n, config.d):
        raise DimensionMismatch(
            f"oracle model ({tm.m},{tm.n},{tm.d}) vs config "
            f"({config.m},{config.n},{config.d})")


def run_vmg_matrix(config, oracle):
    """The full online loop: NE under the previous model, value-incentivized
    model update, best responses under the new model, two samples per round.

    Records the true-model duality gap of (mu_t, nu_t) each round, and the
    saddle-sandwich margin under the previous model in the trace metadata.
    """
    _check_config(config, oracle)
    spec = config.spec
    rng = np.random.default_rng(config.seed)
    alpha = config.alpha()
    features = oracle.true_model.features
    omega0 = np.zeros(config.d) if config.omega0 is None else config.omega0
    model = LinearPayoffModel(features, omega0, oracle.true_model.bound_Bl, validate=False)
    A_true = oracle.true_model.payoff_matrix()
    data = MatrixDataset(config.m, config.n)
    trace = RegretTrace(seed=config.seed)
    trace.meta["sandwich_violations"] = 0
    trace.meta["sandwich_margin_max"] = -np.inf
    for _ in range(config.T):
        t0 = time.perf_counter()
        A_prev = model.payoff_matrix()
        try:
            mu, nu = solve_matrix_ne(A_prev, spec, config.solver_tol)
        except NonConvergence as exc:
            trace.meta["aborted"] = str(exc)
            break
        model, _ = update_model(model, data, mu, nu, spec, alpha, config.model_opt)
        A_cur = model.payoff_matrix()
        mu_br = best_response_max(A_cur, nu, spec)
        nu_br = best_response_min(A_cur, mu, spec)
        lhs = reg_game_value(A_prev, mu_br, nu, spec)
        rhs = reg_game_value(A_prev, mu, nu_br, spec)
        margin = lhs - rhs
        trace.meta["sandwich_margin_max"] = max(trace.meta["sandwich_margin_max"], margin)
        if margin > 2.0 * config.solver_tol:
            trace.meta["sandwich_violations"] += 1
        i1 = _sample_index(rng, mu_br)
        j1 = _sample_index(rng, nu)
        i2 = _sample_index(rng, mu)
        j2 = _sample_index(rng, nu_br)
        data.append(i1, j1, oracle.query(i1, j1, rng))
        data.append(i2, j2, oracle.query(i2, j2, rng))
        gap = duality_gap(A_true, mu, nu, spec)
        trace.append(gap, (time.perf_counter() - t0) * 1e3)
    trace.final_residual = _final_residual(model, data)
    trace.meta["dataset_size"] = len(data)
    return trace


def run_vmg_symmetric(config, oracle):
    """Single-policy reduction for antisymmetric payoffs: one tracked policy,
    one sample per round, min-side value regularizer only."""
    _check_config(config, oracle)
    if config.m != config.n:
        raise AsymmetricFeatures("symmetric game needs m == n")
    if not antisymmetric_check(oracle.true_model.features):
        raise AsymmetricFeatures("feature table must satisfy phi(i,j) = -phi(j,i)")
    spec = config.spec
    if spec.beta > 0 and not np.allclose(spec.mu_ref, spec.nu_ref):
        raise ValueError("symmetric game needs mu_ref == nu_ref")
    rng = np.random.default_rng(config.seed)
    alpha = config.alpha()
    features = oracle.true_model.features
    omega0 = np.zeros(config.d) if config.omega0 is None else config.omega0
    model = LinearPayoffModel(features, omega0, oracle.true_model.bound_Bl, validate=False)
    A_true = oracle.true_model.payoff_matrix()
    data = MatrixDataset(config.m, config.n)
    trace = RegretTrace(seed=config.seed)
    for _ in range(config.T):
        t0 = time.perf_counter()
        A_prev = model.payoff_matrix()
        try:
            mu, _ = solve_matrix_ne(A_prev, spec, config.solver_tol)
        except NonConvergence as exc:
            trace.meta["aborted"] = str(exc)
            break
        # for antisymmetric A, -f^{*,mu} + f^{mu,*} = 2 f^{mu,*}: halving
        # alpha makes the general objective match the +alpha*f^{mu,*} update
        model, _ = update_model(model, data, mu, mu, spec, alpha / 2.0, config.model_opt)
        A_cur = model.payoff_matrix()
        mu_br = best_response_max(A_cur, mu, spec)
        i = _sample_index(rng, mu_br)
        j = _sample_index(rng, mu)
        data.append(i, j, oracle.query(i, j, rng))
        gap = duality_gap(A_true, mu, mu, spec)
        trace.append(gap, (time.perf_counter() - t0) * 1e3)
    trace.final_residual = _final_residual(model, data)
    trace.meta["dataset_size"] = len(data)
    return trace


def run_vmg_bandit(config, oracle):
    """n = 1 reduction: closed-form softmax policy, one sample per round, the
    model update sees the current round's sample (dataset D_t)."""
    _check_config(config, oracle)
    if config.n != 1:
        raise DimensionMismatch("bandit reduction needs n == 1")
    spec = config.spec
    if spec.beta <= 0:
        raise BetaZeroUnsupported("the bandit policy closed form needs beta > 0")
    rng = np.random.default_rng(config.seed)
    alpha = config.alpha()
    features = oracle.true_model.features
    omega0 = np.zeros(config.d) if config.omega0 is None else config.omega0
    model = LinearPayoffModel(features, omega0, oracle.true_model.bound_Bl, validate=False)
    A_true = oracle.true_model.payoff_matrix()
    ones = np.array([1.0])
    data = MatrixDataset(config.m, 1)
    trace = RegretTrace(seed=config.seed)
    for _ in range(config.T):
        t0 = time.perf_counter()
        A_prev = model.payoff_matrix()
        mu = best_response_max(A_prev, ones, spec)
        i = _sample_index(rng, mu)
        data.append(i, 0, oracle.query(i, 0, rng))
        model, _ = update_model(model, data, mu, ones, spec, alpha, config.model_opt)
        gap = duality_gap(A_true, mu, ones, spec)
        trace.append(gap, (time.perf_counter() - t0) * 1e3)
    trace.final_residual = _final_residual(model, data)
    trace.meta["dataset_size"] = len(data)
    return trace
