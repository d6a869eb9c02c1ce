"""Infinite-horizon discounted Markov games: the geometric-stopping sampler,
exact discounted evaluation and visitation, regularized best responses via
policy iteration, the value-incentivized online loop, and the single-agent
MDP reductions.

Stationary joint policies are JointPolicy objects with a single step index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import RegGameSpec, as_simplex, kl_divergence, project_simplex, softmax1
from .envs import (
    ENV_SCHEMA,
    JointPolicy,
    LinearMixtureKernel,
    _deviator_q,
    check_kernel,
    combine_with_deviation,
    random_base_kernels,
)
from .errors import (
    CapExceeded,
    ConfigInvalid,
    NonConvergence,
    SingularSystem,
)
from .markov import (
    MarkovOptSettings,
    TransitionDataset,
    _nll_grad,
    _stage_cce,
    nll_loss,
)
from .matrix import solve_matrix_ne
from .schedules import infinite_alpha, resolve_alpha
from .trace import RegretTrace

SAMPLER_CAP = 10 ** 6


@dataclass
class DiscountedMarkovGame:
    """Homogeneous-kernel discounted game: rewards (N, S, A_joint) in [0,1],
    a single-step linear mixture kernel, discount gamma < 1."""

    num_players: int
    num_states: int
    action_counts: tuple
    gamma: float
    rewards: np.ndarray  # (N, S, A_joint)
    true_kernel: object  # LinearMixtureKernel with H=1
    rho: np.ndarray
    pi_ref: list  # per player, (S, A_n)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigInvalid("gamma must lie in [0, 1)")
        self.action_counts = tuple(int(c) for c in self.action_counts)
        self.rewards = np.asarray(self.rewards, dtype=float)
        A = int(np.prod(self.action_counts))
        expected = (self.num_players, self.num_states, A)
        if self.rewards.shape != expected:
            raise ConfigInvalid(f"rewards shape {self.rewards.shape}, expected {expected}")
        self.rho = as_simplex(self.rho)
        self.pi_ref = [np.asarray(p, dtype=float) for p in self.pi_ref]

    @property
    def num_joint_actions(self):
        return int(np.prod(self.action_counts))


def stationary_policy(table, action_counts):
    """Wrap an (S, A_joint) table as a single-step JointPolicy."""
    return JointPolicy(np.asarray(table, dtype=float)[None], action_counts)


def sampler(game, policy, rho, rng):
    """One draw from the discounted visitation: roll out under the true
    kernel, continuing with probability gamma each step; return the triple
    (s, a_joint, s_next) at the stopping step."""
    P = game.true_kernel.matrix(0)
    s = int(rng.choice(game.num_states, p=as_simplex(rho)))
    for _ in range(SAMPLER_CAP):
        a = int(rng.choice(policy.A, p=policy.table[0, s]))
        s_next = int(rng.choice(game.num_states, p=as_simplex(P[s, a])))
        if rng.random() >= game.gamma:
            return s, a, s_next
        s = s_next
    raise CapExceeded(f"sampler exceeded {SAMPLER_CAP} steps")


def discounted_visitation_exact(kernel, policy, rho, gamma):
    """Exact normalized discounted state-action visitation, shape (S, A):
    d = (1-gamma)*rho*pi + gamma * pushforward(d), solved densely."""
    S, A = kernel.S, kernel.A
    P = kernel.matrix(0)  # (S, A, S')
    pi = policy.table[0]  # (S, A)
    # transition operator on flattened (s,a): W[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')
    W = (P[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)
    b = (1.0 - gamma) * (np.asarray(rho)[:, None] * pi).reshape(-1)
    M = np.eye(S * A) - gamma * W.T
    try:
        d = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc))
    if np.max(np.abs(M @ d - b)) > 1e-9:
        raise SingularSystem("discounted visitation solve residual too large")
    return as_simplex(np.clip(d, 0.0, None)).reshape(S, A)


def _marginal_kls(policy, beta, pi_ref):
    """Per-player vectors of KL(marginal(s) || ref(s)), shape (N, S)."""
    N = len(pi_ref)
    S = policy.S
    out = np.zeros((N, S))
    if beta <= 0:
        return out
    for n in range(N):
        marg = policy.marginal(n)[0]
        for s in range(S):
            out[n, s] = kl_divergence(as_simplex(marg[s]), as_simplex(pi_ref[n][s]))
    return out


def discounted_values(kernel, policy, beta, pi_ref, rewards, gamma):
    """Exact regularized policy evaluation: V (N, S) and Q (N, S, A) solving
    V_n = Pi(r_n) - beta*KL_n + gamma * Pi P V_n densely."""
    S, A = kernel.S, kernel.A
    N = rewards.shape[0]
    P = kernel.matrix(0)
    pi = policy.table[0]
    Ppi = np.einsum("sa,sat->st", pi, P)
    kls = _marginal_kls(policy, beta, pi_ref)
    M = np.eye(S) - gamma * Ppi
    V = np.zeros((N, S))
    Q = np.zeros((N, S, A))
    for n in range(N):
        b = np.einsum("sa,sa->s", pi, rewards[n]) - beta * kls[n]
        V[n] = np.linalg.solve(M, b)
        Q[n] = rewards[n] + gamma * P @ V[n]
    return V, Q


def discounted_best_response(kernel, policy, n, beta, pi_ref, rewards, gamma,
                             tol=1e-9, max_iter=10_000):
    """Player n's regularized best response against the others' stationary
    correlated policy, by policy iteration: soft-greedy improvement (softmax
    for beta > 0, greedy lowest index for beta = 0) alternating with exact
    evaluation until the value stops moving.

    Returns (policy_n of shape (S, A_n), v_star of shape (S,))."""
    S = kernel.S
    counts = policy.action_counts
    A_n = counts[n]
    others = policy.others_marginal(n)[0]  # (S, grid w/o n)
    ref_n = np.asarray(pi_ref[n], dtype=float)
    pol = np.full((S, A_n), 1.0 / A_n) if beta == 0 else ref_n.copy()
    v_prev = None
    for _ in range(max_iter):
        joint = combine_with_deviation(policy, n, pol[None])
        V, Q = discounted_values(kernel, joint, beta, pi_ref, rewards, gamma)
        new = np.zeros_like(pol)
        for s in range(S):
            qbar = _deviator_q(Q[n, s], others[s], counts, n)
            if beta > 0:
                new[s] = softmax1(np.log(ref_n[s]) + qbar / beta)
            else:
                new[s, int(np.argmax(qbar))] = 1.0
        if v_prev is not None and float(np.max(np.abs(V[n] - v_prev))) <= tol:
            return new, V[n]
        v_prev = V[n]
        pol = new
    raise NonConvergence("policy iteration did not converge", best=(pol, v_prev))


def discounted_nash_gap(game, policy, beta):
    """(1/N) sum_n (V_n^{*,pi^{-n}}(rho) - V_n^pi(rho)) with discounted
    regularized values under the true kernel."""
    V, _ = discounted_values(
        game.true_kernel, policy, beta, game.pi_ref, game.rewards, game.gamma)
    total = 0.0
    for n in range(game.num_players):
        _, v_star = discounted_best_response(
            game.true_kernel, policy, n, beta, game.pi_ref, game.rewards,
            game.gamma)
        total += float(game.rho @ (v_star - V[n]))
    return total / game.num_players


# ---------------------------------------------------------------------------
# equilibrium under a model kernel
# ---------------------------------------------------------------------------

def discounted_equilibrium(kernel, rewards, beta, pi_ref, mode, action_counts,
                           gamma, tol=1e-8, max_iter=10_000):
    """Stationary equilibrium by fixed-point iteration over stage games.

    zero_sum_ne solves each state's stage game on the Q-difference matrix;
    general_cce (beta = 0) uses the welfare-maximizing stage CCE LP.
    """
    S = kernel.S
    N = rewards.shape[0]
    A = kernel.A
    counts = tuple(action_counts)
    P = kernel.matrix(0)
    if mode == "zero_sum_ne" and (N != 2 or len(counts) != 2):
        raise ConfigInvalid("zero_sum_ne requires exactly two players")
    if mode == "general_cce" and beta != 0.0:
        raise ConfigInvalid("general_cce supports beta=0 only")
    if mode not in ("zero_sum_ne", "general_cce"):
        raise ConfigInvalid(f"unknown equilibrium mode {mode!r}")
    V = np.zeros((N, S))
    table = np.full((S, A), 1.0 / A)
    stage_tol = max(tol, 1e-10)
    for _ in range(max_iter):
        V_new = np.zeros_like(V)
        for s in range(S):
            Qs = np.stack([rewards[n, s] + gamma * P[s] @ V[n] for n in range(N)])
            if mode == "zero_sum_ne":
                diff = (Qs[0] - Qs[1]).reshape(counts) / 2.0
                spec = RegGameSpec(beta, pi_ref[0][s], pi_ref[1][s])
                mu, nu = solve_matrix_ne(diff, spec, tol=stage_tol)
                table[s] = np.outer(mu, nu).reshape(-1)
                V_new[0, s] = float(mu @ Qs[0].reshape(counts) @ nu)
                V_new[1, s] = float(mu @ Qs[1].reshape(counts) @ nu)
                if beta > 0:
                    V_new[0, s] -= beta * kl_divergence(mu, spec.mu_ref)
                    V_new[1, s] -= beta * kl_divergence(nu, spec.nu_ref)
            else:
                z = _stage_cce(Qs, counts)
                table[s] = z
                V_new[:, s] = Qs @ z
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta <= stage_tol:
            return JointPolicy(table[None], counts, product=mode == "zero_sum_ne")
    raise NonConvergence("discounted equilibrium iteration did not converge",
                         best=JointPolicy(table[None], counts))


# ---------------------------------------------------------------------------
# model objective and update (pooled single-step parameter block)
# ---------------------------------------------------------------------------

def _br_value_sum_inf(kernel, pi_t, beta, pi_ref, rewards, rho, gamma):
    total = 0.0
    combined = []
    N = rewards.shape[0]
    for n in range(N):
        pol_n, v_star = discounted_best_response(
            kernel, pi_t, n, beta, pi_ref, rewards, gamma)
        total += float(rho @ v_star)
        combined.append(combine_with_deviation(pi_t, n, pol_n[None]))
    return total, combined


def _eval_grad_inf(kernel, policy, n, beta, pi_ref, rewards, rho, gamma):
    """Envelope gradient of player n's discounted value in theta:
    (gamma/(1-gamma)) sum_{s,a} d(s,a) sum_{s'} phi(s,a,s') V_n(s')."""
    V, _ = discounted_values(kernel, policy, beta, pi_ref, rewards, gamma)
    d = discounted_visitation_exact(kernel, policy, rho, gamma)
    scale = gamma / (1.0 - gamma)
    return scale * np.einsum("sa,ksat,t->k", d, kernel.base[0], V[n])[None]


def infinite_model_objective(kernel, dataset, pi_t, alpha, rho, beta, rewards,
                             pi_ref, gamma):
    """Pooled negative log-likelihood minus alpha times the sum of
    best-response values under the candidate kernel."""
    value = 0.0
    if alpha > 0.0:
        value, _ = _br_value_sum_inf(kernel, pi_t, beta, pi_ref, rewards, rho, gamma)
    return nll_loss(kernel, dataset) - alpha * value


def infinite_model_update(kernel, dataset, pi_t, alpha, rho, beta, rewards,
                          pi_ref, gamma, opt=None):
    """Projected gradient descent on the single-step simplex for the pooled
    value-regularized likelihood; mirrors the finite-horizon optimizer."""
    if opt is None:
        opt = MarkovOptSettings()

    def objective(kern):
        return infinite_model_objective(
            kern, dataset, pi_t, alpha, rho, beta, rewards, pi_ref, gamma)

    def gradient(kern):
        grad = _nll_grad(kern, dataset)
        if alpha > 0.0:
            _, combined = _br_value_sum_inf(
                kern, pi_t, beta, pi_ref, rewards, rho, gamma)
            for n, pol in enumerate(combined):
                grad -= alpha * _eval_grad_inf(
                    kern, pol, n, beta, pi_ref, rewards, rho, gamma)
        return grad

    kern = kernel
    obj = objective(kern)
    grad = gradient(kern)
    step = opt.init_step
    converged = False
    iters = 0
    for iters in range(1, opt.max_iter + 1):
        theta = kern.theta
        moved = project_simplex((theta - grad)[0])[None]
        if float(np.linalg.norm(moved - theta)) <= opt.grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(60):
            cand = project_simplex((theta - step * grad)[0])[None]
            decrease = float(np.sum(grad * (theta - cand)))
            cand_kern = kern.with_theta(cand)
            cand_obj = objective(cand_kern)
            if cand_obj <= obj - opt.armijo_c * decrease + 1e-15:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        kern, obj = cand_kern, cand_obj
        grad = gradient(kern)
        step = min(step * 2.0, 1e6)
    return kern, {"converged": converged, "iterations": iters, "objective": obj}


# ---------------------------------------------------------------------------
# online loops
# ---------------------------------------------------------------------------

@dataclass
class InfiniteVmgConfig:
    T: int
    beta: float = 0.0
    equilibrium_mode: str = "general_cce"
    alpha_schedule: tuple = ("zero",)
    solver_tol: float = 1e-8
    # the per-evaluation cost of the pooled objective is dominated by policy
    # iteration, so the default step budget is smaller than the finite case
    model_opt: MarkovOptSettings = field(
        default_factory=lambda: MarkovOptSettings(max_iter=60))
    seed: int = 0
    theta0: np.ndarray = None

    def alpha(self, game):
        return resolve_alpha(
            self.alpha_schedule,
            lambda delta: infinite_alpha(
                self.T, game.gamma, game.true_kernel.d, game.num_states,
                game.num_players, delta))


def _initial_model(game, theta0):
    d = game.true_kernel.d
    if theta0 is None:
        theta0 = np.full((1, d), 1.0 / d)
    return game.true_kernel.with_theta(np.asarray(theta0, dtype=float))


def run_vmg_infinite(config, game):
    """Value-incentivized loop for discounted games: equilibrium under the
    previous model, pooled model update, best responses, then one sampler
    triple from the equilibrium policy and one per unilateral deviation.
    Records the discounted sub-optimality gap each round."""
    if config.T < 1:
        raise ConfigInvalid("T must be >= 1")
    rng = np.random.default_rng(config.seed)
    model = _initial_model(game, config.theta0)
    data = TransitionDataset(1)
    alpha = config.alpha(game)
    trace = RegretTrace(seed=config.seed)
    trace.meta["alpha"] = alpha
    for t in range(1, config.T + 1):
        t0 = time.perf_counter()
        try:
            pi_t = discounted_equilibrium(
                model, game.rewards, config.beta, game.pi_ref,
                config.equilibrium_mode, game.action_counts, game.gamma,
                tol=config.solver_tol)
        except NonConvergence:
            trace.meta["aborted_round"] = t
            break
        model, info = infinite_model_update(
            model, data, pi_t, alpha, game.rho, config.beta, game.rewards,
            game.pi_ref, game.gamma, opt=config.model_opt)
        data.append(0, *sampler(game, pi_t, game.rho, rng))
        for n in range(game.num_players):
            pol_n, _ = discounted_best_response(
                model, pi_t, n, config.beta, game.pi_ref, game.rewards,
                game.gamma)
            dev = combine_with_deviation(pi_t, n, pol_n[None])
            data.append(0, *sampler(game, dev, game.rho, rng))
        gap = discounted_nash_gap(game, pi_t, config.beta)
        trace.append(gap, (time.perf_counter() - t0) * 1e3)
        trace.meta["model_update"] = info
    trace.meta["dataset_size"] = len(data)
    trace.final_residual = nll_loss(model, data)
    return trace


def random_discounted_game(num_players, num_states, action_counts, gamma, d,
                           seed, zero_sum=False):
    """Realizable-by-construction discounted instance with a homogeneous
    Dirichlet-mixture kernel, uniform[0,1] rewards, uniform references."""
    rng = np.random.default_rng(seed)
    action_counts = tuple(int(c) for c in action_counts)
    A = int(np.prod(action_counts))
    base = random_base_kernels(1, d, num_states, A, rng)
    theta = rng.dirichlet(np.ones(d), size=1)
    kernel = LinearMixtureKernel(base, theta)
    rewards = rng.uniform(0.0, 1.0, size=(num_players, num_states, A))
    if zero_sum:
        if num_players != 2:
            raise ConfigInvalid("zero_sum generation needs exactly 2 players")
        rewards[1] = 1.0 - rewards[0]
    rho = rng.dirichlet(np.ones(num_states))
    pi_ref = [np.full((num_states, c), 1.0 / c) for c in action_counts]
    return DiscountedMarkovGame(
        num_players=num_players, num_states=num_states,
        action_counts=action_counts, gamma=gamma, rewards=rewards,
        true_kernel=kernel, rho=rho, pi_ref=pi_ref)


def discounted_env_to_json(game):
    """Serialize a discounted environment to a 'vmg-env/1' document."""
    return {
        "schema": ENV_SCHEMA,
        "kind": "discounted",
        "num_players": game.num_players,
        "num_states": game.num_states,
        "action_counts": list(game.action_counts),
        "gamma": game.gamma,
        "rewards": game.rewards.tolist(),
        "features": game.true_kernel.base.tolist(),
        "theta_star": game.true_kernel.theta.tolist(),
        "rho": game.rho.tolist(),
        "pi_ref": [p.tolist() for p in game.pi_ref],
    }


def discounted_env_from_json(doc):
    """Deserialize a discounted 'vmg-env/1' document."""
    if doc.get("schema") != ENV_SCHEMA:
        raise ValueError(f"unsupported env schema {doc.get('schema')!r}")
    if doc.get("kind") != "discounted":
        raise ValueError(f"expected a discounted env, got kind {doc.get('kind')!r}")
    kernel = LinearMixtureKernel(np.array(doc["features"]), np.array(doc["theta_star"]))
    return DiscountedMarkovGame(
        num_players=doc["num_players"], num_states=doc["num_states"],
        action_counts=tuple(doc["action_counts"]), gamma=doc["gamma"],
        rewards=np.array(doc["rewards"]), true_kernel=kernel,
        rho=np.array(doc["rho"]),
        pi_ref=[np.array(p) for p in doc["pi_ref"]])


def verify_discounted_env(doc):
    """Invariant re-check for serialized discounted environments."""
    try:
        game = discounted_env_from_json(doc)
    except Exception as exc:
        return [f"deserialization failed: {exc}"]
    problems = check_kernel(game.true_kernel, game.rewards, game.rho)
    if not 0.0 <= game.gamma < 1.0:
        problems.append("gamma outside [0, 1)")
    return problems


def _mdp_optimal(kernel, game, beta):
    """Single-agent optimal stationary policy and value under a kernel."""
    dummy = stationary_policy(
        np.full((game.num_states, game.num_joint_actions),
                1.0 / game.num_joint_actions), game.action_counts)
    return discounted_best_response(
        kernel, dummy, 0, beta, game.pi_ref, game.rewards, game.gamma)


def run_vmg_mdp(config, game, option="I"):
    """Single-agent reduction: per round, act with the model-optimal policy,
    collect one geometric-stopping rollout's transitions, then refit the
    model on all data so far.

    Option I regularizes the likelihood by -alpha*V_f^*(rho); option II by
    -alpha*V_f^*(rho) + alpha*V_f^{pi_t}(rho). The trace records the true
    sub-optimality V^*(rho) - V^{pi_t}(rho) each round."""
    if game.num_players != 1:
        raise ConfigInvalid("run_vmg_mdp requires a single-agent game")
    if option not in ("I", "II"):
        raise ConfigInvalid(f"unknown option {option!r}")
    rng = np.random.default_rng(config.seed)
    model = _initial_model(game, config.theta0)
    data = TransitionDataset(1)
    alpha = config.alpha(game)
    trace = RegretTrace(seed=config.seed)
    trace.meta["alpha"] = alpha
    trace.meta["option"] = option
    _, v_true = _mdp_optimal(game.true_kernel, game, config.beta)
    opt = config.model_opt

    def objective(kern, pi_t):
        obj = nll_loss(kern, data)
        if alpha > 0.0:
            _, v_star = _mdp_optimal(kern, game, config.beta)
            obj -= alpha * float(game.rho @ v_star)
            if option == "II":
                V, _ = discounted_values(
                    kern, pi_t, config.beta, game.pi_ref, game.rewards,
                    game.gamma)
                obj += alpha * float(game.rho @ V[0])
        return obj

    def gradient(kern, pi_t):
        grad = _nll_grad(kern, data)
        if alpha > 0.0:
            pol, _ = _mdp_optimal(kern, game, config.beta)
            star = stationary_policy(pol, game.action_counts)
            grad -= alpha * _eval_grad_inf(
                kern, star, 0, config.beta, game.pi_ref, game.rewards,
                game.rho, game.gamma)
            if option == "II":
                grad += alpha * _eval_grad_inf(
                    kern, pi_t, 0, config.beta, game.pi_ref, game.rewards,
                    game.rho, game.gamma)
        return grad

    for t in range(1, config.T + 1):
        t0 = time.perf_counter()
        pol_t, _ = _mdp_optimal(model, game, config.beta)
        pi_t = stationary_policy(pol_t, game.action_counts)
        # one rollout with geometric stopping, keeping every transition
        s = int(rng.choice(game.num_states, p=game.rho))
        P = game.true_kernel.matrix(0)
        for _ in range(SAMPLER_CAP):
            a = int(rng.choice(pi_t.A, p=pi_t.table[0, s]))
            s_next = int(rng.choice(game.num_states, p=as_simplex(P[s, a])))
            data.append(0, s, a, s_next)
            if rng.random() >= game.gamma:
                break
            s = s_next
        # projected gradient descent on the option-specific objective
        kern = model
        obj = objective(kern, pi_t)
        grad = gradient(kern, pi_t)
        step = opt.init_step
        for _ in range(opt.max_iter):
            theta = kern.theta
            moved = project_simplex((theta - grad)[0])[None]
            if float(np.linalg.norm(moved - theta)) <= opt.grad_tol:
                break
            accepted = False
            for _ in range(60):
                cand = project_simplex((theta - step * grad)[0])[None]
                decrease = float(np.sum(grad * (theta - cand)))
                cand_kern = kern.with_theta(cand)
                cand_obj = objective(cand_kern, pi_t)
                if cand_obj <= obj - opt.armijo_c * decrease + 1e-15:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            kern, obj = cand_kern, cand_obj
            grad = gradient(kern, pi_t)
            step = min(step * 2.0, 1e6)
        model = kern
        V, _ = discounted_values(
            game.true_kernel, pi_t, config.beta, game.pi_ref, game.rewards,
            game.gamma)
        gap = float(game.rho @ (v_true - V[0]))
        trace.append(gap, (time.perf_counter() - t0) * 1e3)
    trace.meta["dataset_size"] = len(data)
    trace.final_residual = nll_loss(model, data)
    return trace
