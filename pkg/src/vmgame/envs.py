"""Finite-horizon multi-player Markov game machinery: linear mixture kernels,
KL-regularized value evaluation, best-response dynamic programming, visitation
distributions, trajectory sampling, and the sub-optimality gap.

Joint actions are flattened row-major over the per-player action counts;
policies and rewards index the flattened joint action space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import as_simplex, kl_divergence, logsumexp1, project_simplex, softmax1
from .errors import DimensionMismatch, IndexOutOfRange, NonFiniteKL

ENV_SCHEMA = "vmg-env/1"


class LinearMixtureKernel:
    """Transition kernel P_h(s'|s,a) = phi_h(s,a,s')^T theta_h.

    base_kernels has shape (H, d, S, A, S): component i of the step-h feature
    map is itself a transition kernel. theta has shape (H, d), each row on the
    d-simplex, which guarantees every induced row is a valid distribution.
    """

    def __init__(self, base_kernels, theta, validate=True):
        base = np.asarray(base_kernels, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if base.ndim != 5:
            raise DimensionMismatch(f"base_kernels must be (H,d,S,A,S), got {base.shape}")
        H, d, S, A, S2 = base.shape
        if S != S2:
            raise DimensionMismatch("state axes of base kernels disagree")
        if theta.shape != (H, d):
            raise DimensionMismatch(f"theta shape {theta.shape}, expected ({H},{d})")
        if validate:
            rowsums = base.sum(axis=4)
            if np.max(np.abs(rowsums - 1.0)) > 1e-9 or base.min() < -1e-12:
                raise ValueError("each base feature slice must be a transition kernel")
            norms = np.sqrt((base ** 2).sum(axis=1))
            if norms.max() > 1.0 + 1e-9:
                raise ValueError(f"feature norm {norms.max():.6f} exceeds 1")
        theta = np.stack([project_simplex(theta[h]) for h in range(H)])
        self.base = base
        self.theta = theta
        self.H, self.d, self.S, self.A = H, d, S, A
        self.base.setflags(write=False)
        self.theta.setflags(write=False)
        self._matrices = [None] * H

    def matrix(self, h):
        """Dense P_h of shape (S, A, S'), memoized (base and theta are
        immutable after construction)."""
        cached = self._matrices[h]
        if cached is None:
            cached = np.tensordot(self.theta[h], self.base[h], axes=(0, 0))
            cached.setflags(write=False)
            self._matrices[h] = cached
        return cached

    def prob(self, h, s, a, s_next):
        if not (0 <= h < self.H and 0 <= s < self.S and 0 <= a < self.A
                and 0 <= s_next < self.S):
            raise IndexOutOfRange(f"(h={h}, s={s}, a={a}, s'={s_next})")
        return float(self.base[h, :, s, a, s_next] @ self.theta[h])

    def phi(self, h, s, a, s_next):
        return self.base[h, :, s, a, s_next]

    def with_theta(self, theta):
        return LinearMixtureKernel(self.base, theta, validate=False)


def kernel_prob(kernel, h, s, a_joint, s_next):
    return kernel.prob(h, s, a_joint, s_next)


class JointPolicy:
    """Per-step, per-state distribution over the flattened joint action space.

    product is True when the table factorizes over players (NE-style
    policies); CCE policies are generally correlated.
    """

    def __init__(self, table, action_counts, product=False):
        table = np.asarray(table, dtype=float)
        if table.ndim != 3:
            raise DimensionMismatch(f"policy table must be (H,S,A), got {table.shape}")
        if table.shape[2] != int(np.prod(action_counts)):
            raise DimensionMismatch("joint action axis does not match action counts")
        if np.min(table) < -1e-12 or np.max(np.abs(table.sum(axis=2) - 1.0)) > 1e-9:
            raise ValueError("each conditional must be a probability vector")
        self.table = np.clip(table, 0.0, None)
        self.table /= self.table.sum(axis=2, keepdims=True)
        self.action_counts = tuple(int(c) for c in action_counts)
        self.product = product
        self.H, self.S, self.A = self.table.shape
        self.table.setflags(write=False)

    @classmethod
    def from_factors(cls, factors):
        """Build a product policy from per-player tables of shape (H,S,A_n)."""
        factors = [np.asarray(f, dtype=float) for f in factors]
        H, S = factors[0].shape[:2]
        counts = tuple(f.shape[2] for f in factors)
        table = np.ones((H, S, 1))
        for f in factors:
            table = table[:, :, :, None] * f[:, :, None, :]
            table = table.reshape(H, S, -1)
        return cls(table, counts, product=True)

    def grid(self):
        """Table reshaped to (H, S, A_1, ..., A_N)."""
        return self.table.reshape(self.H, self.S, *self.action_counts)

    def marginal(self, n):
        """Player n's marginal, shape (H, S, A_n)."""
        g = self.grid()
        axes = tuple(2 + k for k in range(len(self.action_counts)) if k != n)
        return g.sum(axis=axes)

    def others_marginal(self, n):
        """Joint marginal over all players except n: (H, S, A_{-n} grid)."""
        g = self.grid()
        return g.sum(axis=2 + n)


def combine_with_deviation(policy, n, policy_n):
    """Joint policy where player n deviates to policy_n (H,S,A_n) played
    independently, while the others keep their correlated marginal."""
    others = policy.others_marginal(n)  # (H, S, counts w/o n)
    counts = policy.action_counts
    H, S = policy.H, policy.S
    pn = np.asarray(policy_n, dtype=float)
    # broadcast player n's axis back into position n
    shape_n = [1] * len(counts)
    shape_n[n] = counts[n]
    out = np.expand_dims(others, axis=2 + n) * pn.reshape((H, S) + tuple(shape_n))
    return JointPolicy(out.reshape(H, S, -1), counts, product=policy.product)


@dataclass
class FiniteMarkovGame:
    """Ground-truth finite-horizon game: rewards in [0,1], a linear mixture
    kernel holding theta*, initial distribution, and reference policies."""

    num_players: int
    num_states: int
    action_counts: tuple
    horizon: int
    rewards: np.ndarray  # (H, N, S, A_joint)
    true_kernel: LinearMixtureKernel
    rho: np.ndarray
    pi_ref: list  # per player, (H, S, A_n)

    def __post_init__(self):
        self.action_counts = tuple(int(c) for c in self.action_counts)
        self.rewards = np.asarray(self.rewards, dtype=float)
        A = int(np.prod(self.action_counts))
        expected = (self.horizon, self.num_players, self.num_states, A)
        if self.rewards.shape != expected:
            raise DimensionMismatch(f"rewards shape {self.rewards.shape}, expected {expected}")
        if self.rewards.min() < 0.0 or self.rewards.max() > 1.0:
            raise ValueError("rewards must lie in [0,1]")
        self.rho = as_simplex(self.rho)
        self.pi_ref = [np.asarray(p, dtype=float) for p in self.pi_ref]

    @property
    def num_joint_actions(self):
        return int(np.prod(self.action_counts))

    def uniform_joint_policy(self):
        factors = [
            np.full((self.horizon, self.num_states, c), 1.0 / c)
            for c in self.action_counts
        ]
        return JointPolicy.from_factors(factors)


@dataclass
class ValueTable:
    """V[h][n][s] and Q[h][n][s][a] for all players; V has an extra terminal
    layer of zeros."""

    V: np.ndarray  # (H+1, N, S)
    Q: np.ndarray  # (H, N, S, A)
    beta: float


def evaluate_values(kernel, policy, beta, pi_ref, rewards):
    """Exact backward-induction evaluation of every player's KL-regularized
    value and Q tables under the given kernel and joint policy."""
    H, S, A = policy.H, policy.S, policy.A
    N = rewards.shape[1]
    V = np.zeros((H + 1, N, S))
    Q = np.zeros((H, N, S, A))
    marginals = [policy.marginal(n) for n in range(N)]
    for h in range(H - 1, -1, -1):
        P = kernel.matrix(h)  # (S, A, S')
        for n in range(N):
            Q[h, n] = rewards[h, n] + P @ V[h + 1, n]
            V[h, n] = np.einsum("sa,sa->s", policy.table[h], Q[h, n])
            if beta > 0:
                for s in range(S):
                    marg = as_simplex(marginals[n][h, s])
                    ref = pi_ref[n][h, s]
                    if np.any((np.asarray(ref) <= 0.0) & (marg > 1e-15)):
                        raise NonFiniteKL(
                            f"player {n} policy escapes reference support at (h={h}, s={s})")
                    V[h, n, s] -= beta * kl_divergence(marg, as_simplex(ref))
    return ValueTable(V=V, Q=Q, beta=beta)


def _deviator_q(q_row, others, counts, n):
    """Average Q(s, (a_n, a_{-n})) over a_{-n} ~ others; returns (A_n,)."""
    grid = q_row.reshape(counts)
    moved = np.moveaxis(grid, n, 0).reshape(counts[n], -1)
    return moved @ others.reshape(-1)


def best_response_dp(kernel, policy, n, beta, pi_ref, rewards):
    """Player n's exact best response against the others' (possibly
    correlated) policy: backward induction with softmax (beta > 0) or greedy
    lowest-index (beta = 0) stage maximization.

    Returns (policy_n of shape (H,S,A_n), V of shape (H+1,S))."""
    H, S = policy.H, policy.S
    counts = policy.action_counts
    A_n = counts[n]
    others = policy.others_marginal(n).reshape(H, S, -1)
    ref_n = np.asarray(pi_ref[n], dtype=float)
    V = np.zeros((H + 1, S))
    out = np.zeros((H, S, A_n))
    srange = np.arange(S)
    for h in range(H - 1, -1, -1):
        P = kernel.matrix(h)
        Qn = rewards[h, n] + P @ V[h + 1]  # (S, A_joint)
        grid = Qn.reshape((S,) + counts)
        moved = np.moveaxis(grid, 1 + n, 1).reshape(S, A_n, -1)
        qbar = np.einsum("sar,sr->sa", moved, others[h])
        if beta > 0:
            logits = np.log(ref_n[h]) + qbar / beta  # (S, A_n)
            mx = logits.max(axis=1, keepdims=True)
            ex = np.exp(logits - mx)
            z = ex.sum(axis=1)
            out[h] = ex / z[:, None]
            V[h] = beta * (mx[:, 0] + np.log(z))
        else:
            k = np.argmax(qbar, axis=1)
            out[h, srange, k] = 1.0
            V[h] = qbar[srange, k]
    return out, V


def visitation(kernel, policy, rho):
    """State-action visitation d_h(s,a) by forward recursion; each layer is a
    distribution over S x A_joint."""
    H, S, A = policy.H, policy.S, policy.A
    d = np.zeros((H, S, A))
    state = np.asarray(rho, dtype=float)
    for h in range(H):
        d[h] = state[:, None] * policy.table[h]
        P = kernel.matrix(h)
        state = np.einsum("sa,sat->t", d[h], P)
    return d


def sample_trajectory(game, policy, rng):
    """One rollout under the true kernel: list of (h, s, a_joint, s_next)."""
    s = int(rng.choice(game.num_states, p=game.rho))
    out = []
    for h in range(game.horizon):
        a = int(rng.choice(policy.A, p=policy.table[h, s]))
        probs = game.true_kernel.matrix(h)[s, a]
        s_next = int(rng.choice(game.num_states, p=as_simplex(probs)))
        out.append((h, s, a, s_next))
        s = s_next
    return out


def nash_gap(game, policy, beta):
    """(1/N) sum_n (V_n^{*,pi^{-n}}(rho) - V_n^pi(rho)) under the TRUE kernel."""
    table = evaluate_values(game.true_kernel, policy, beta, game.pi_ref, game.rewards)
    total = 0.0
    for n in range(game.num_players):
        _, v_br = best_response_dp(
            game.true_kernel, policy, n, beta, game.pi_ref, game.rewards)
        total += float(game.rho @ (v_br[0] - table.V[0, n]))
    return total / game.num_players


# ---------------------------------------------------------------------------
# synthetic instance generation and serialization
# ---------------------------------------------------------------------------

def _max_feature_norm(base):
    return float(np.sqrt((base ** 2).sum(axis=1)).max())


def random_base_kernels(H, d, S, A, rng):
    """Dirichlet(1) rows blended toward uniform just enough to keep every
    feature norm at or below 1 (minimal weight found by bisection, so the
    base kernels stay as diverse as the constraint allows)."""
    base = rng.dirichlet(np.ones(S), size=(H, d, S, A))
    # axes to (H, d, S, A, S'): dirichlet fills the last axis already
    if _max_feature_norm(base) <= 1.0:
        return base
    if d / S ** 2 > 1.0:
        raise ValueError(f"d={d}, S={S}: even the uniform kernel violates the norm bound")
    lo, hi = 0.0, 1.0
    for _ in range(60):
        w = 0.5 * (lo + hi)
        if _max_feature_norm((1.0 - w) * base + w / S) <= 1.0:
            hi = w
        else:
            lo = w
    w = min(hi + 1e-9, 1.0)
    return (1.0 - w) * base + w / S


def random_finite_game(num_players, num_states, action_counts, horizon, d,
                       seed, zero_sum=False):
    """Realizable-by-construction synthetic instance: Dirichlet base kernels
    and theta*, uniform[0,1] rewards, uniform references."""
    rng = np.random.default_rng(seed)
    action_counts = tuple(int(c) for c in action_counts)
    A = int(np.prod(action_counts))
    base = random_base_kernels(horizon, d, num_states, A, rng)
    theta = rng.dirichlet(np.ones(d), size=horizon)
    kernel = LinearMixtureKernel(base, theta)
    rewards = rng.uniform(0.0, 1.0, size=(horizon, num_players, num_states, A))
    if zero_sum:
        if num_players != 2:
            raise ValueError("zero_sum generation needs exactly 2 players")
        rewards[:, 1] = 1.0 - rewards[:, 0]
    rho = rng.dirichlet(np.ones(num_states))
    pi_ref = [
        np.full((horizon, num_states, c), 1.0 / c) for c in action_counts
    ]
    return FiniteMarkovGame(
        num_players=num_players, num_states=num_states,
        action_counts=action_counts, horizon=horizon, rewards=rewards,
        true_kernel=kernel, rho=rho, pi_ref=pi_ref)


def env_to_json(game):
    """Serialize a finite-horizon environment to a 'vmg-env/1' document."""
    return {
        "schema": ENV_SCHEMA,
        "kind": "finite",
        "num_players": game.num_players,
        "num_states": game.num_states,
        "action_counts": list(game.action_counts),
        "horizon": game.horizon,
        "rewards": game.rewards.tolist(),
        "features": game.true_kernel.base.tolist(),
        "theta_star": game.true_kernel.theta.tolist(),
        "rho": game.rho.tolist(),
        "pi_ref": [p.tolist() for p in game.pi_ref],
    }


def env_from_json(doc):
    """Deserialize a finite-horizon 'vmg-env/1' document."""
    if doc.get("schema") != ENV_SCHEMA:
        raise ValueError(f"unsupported env schema {doc.get('schema')!r}")
    if doc.get("kind") != "finite":
        raise ValueError(f"expected a finite-horizon env, got kind {doc.get('kind')!r}")
    kernel = LinearMixtureKernel(np.array(doc["features"]), np.array(doc["theta_star"]))
    return FiniteMarkovGame(
        num_players=doc["num_players"], num_states=doc["num_states"],
        action_counts=tuple(doc["action_counts"]), horizon=doc["horizon"],
        rewards=np.array(doc["rewards"]), true_kernel=kernel,
        rho=np.array(doc["rho"]),
        pi_ref=[np.array(p) for p in doc["pi_ref"]])


def check_kernel(kern, rewards, rho):
    """Shared invariant checks on a kernel/rewards/rho triple; returns a list
    of violation messages (empty when valid)."""
    problems = []
    rowsums = kern.base.sum(axis=4)
    if np.max(np.abs(rowsums - 1.0)) > 1e-9:
        problems.append("base kernel rows do not sum to 1")
    norms = np.sqrt((kern.base ** 2).sum(axis=1))
    if norms.max() > 1.0 + 1e-9:
        problems.append(f"feature norm {norms.max():.6f} exceeds 1")
    for h in range(kern.H):
        if abs(kern.theta[h].sum() - 1.0) > 1e-9 or kern.theta[h].min() < -1e-12:
            problems.append(f"theta[{h}] not on the simplex")
        P = kern.matrix(h)
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-9 or P.min() < -1e-12:
            problems.append(f"induced kernel at step {h} is not stochastic")
    rewards = np.asarray(rewards)
    if rewards.min() < 0 or rewards.max() > 1:
        problems.append("rewards outside [0,1]")
    if abs(np.asarray(rho).sum() - 1.0) > 1e-9:
        problems.append("rho is not a distribution")
    return problems


def verify_env(doc):
    """Re-check all invariants on a serialized finite-horizon document;
    returns a list of violation messages (empty when valid)."""
    try:
        game = env_from_json(doc)
    except Exception as exc:  # report, don't raise: this is a linting tool
        return [f"deserialization failed: {exc}"]
    return check_kernel(game.true_kernel, game.rewards, game.rho)


def save_env(path, game):
    with open(path, "w") as fh:
        json.dump(env_to_json(game), fh)


def load_env(path):
    with open(path) as fh:
        return env_from_json(json.load(fh))
