"""Brute-force reference implementations used only by tests and acceptance
runs: a self-contained dense simplex LP solver, exact matrix-game equilibria,
welfare-maximizing stage CCEs, central finite differences, exhaustive
deterministic-policy search, truncated-series visitations, and an independent
recomputation of the Markov model objective.

Nothing here shares numerical kernels with the production modules, so
agreement tests between the two code paths are meaningful.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import LpFailure, LpInfeasible, NonFiniteObjective, SpaceTooLarge


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    residual: float


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _simplex_phase(T, basis, num_vars, max_iter=20_000):
    """Run simplex to optimality on a tableau whose last row is the reduced
    cost row and last column the rhs. Bland's rule; minimization."""
    for _ in range(max_iter):
        cost = T[-1, :num_vars]
        enter = -1
        for j in range(num_vars):
            if cost[j] < -1e-10:
                enter = j
                break
        if enter < 0:
            return
        ratios = []
        for r in range(T.shape[0] - 1):
            # entries this small are roundoff noise; pivoting on one divides
            # the whole row by it and destroys the tableau's accuracy
            if T[r, enter] > 1e-9:
                ratios.append((T[r, -1] / T[r, enter], basis[r], r))
        if not ratios:
            raise LpFailure("LP is unbounded")
        _, _, row = min(ratios)
        _pivot(T, basis, row, enter)
    raise LpFailure("simplex iteration limit reached")


def simplex_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None):
    """Minimize c^T x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0, by the
    two-phase dense simplex method with Bland's anti-cycling rule."""
    c = np.asarray(c, dtype=float)
    n = len(c)
    rows = []
    rhs = []
    kinds = []
    if A_ub is not None:
        for row, b in zip(np.atleast_2d(A_ub), np.atleast_1d(b_ub)):
            rows.append(np.asarray(row, dtype=float))
            rhs.append(float(b))
            kinds.append("ub")
    if A_eq is not None:
        for row, b in zip(np.atleast_2d(A_eq), np.atleast_1d(b_eq)):
            rows.append(np.asarray(row, dtype=float))
            rhs.append(float(b))
            kinds.append("eq")
    m = len(rows)
    # slack columns for inequalities, then one artificial per row
    total = n + sum(1 for k in kinds if k == "ub") + m
    T = np.zeros((m + 1, total + 1))
    basis = [0] * m
    slack_at = n
    art_at = n + sum(1 for k in kinds if k == "ub")
    for i in range(m):
        row = rows[i].copy()
        b = rhs[i]
        sgn = 1.0
        if b < 0:
            row, b, sgn = -row, -b, -1.0
        T[i, :n] = row
        if kinds[i] == "ub":
            T[i, slack_at] = sgn
            slack_at += 1
        T[i, art_at + i] = 1.0
        basis[i] = art_at + i
        T[i, -1] = b
    # phase 1: minimize the sum of artificials
    T[-1, art_at:art_at + m] = 1.0
    for i in range(m):
        T[-1] -= T[i]
    T[-1, art_at:art_at + m] = np.maximum(T[-1, art_at:art_at + m], 0.0)
    _simplex_phase(T, basis, total)
    if T[-1, -1] < -1e-8:
        raise LpInfeasible(f"phase-1 objective {-T[-1, -1]:.3e} > 0")
    # drive any artificial still basic out of the basis when possible
    for r in range(m):
        if basis[r] >= art_at:
            for j in range(art_at):
                if abs(T[r, j]) > 1e-9:
                    _pivot(T, basis, r, j)
                    break
    # phase 2
    T[:, art_at:art_at + m] = 0.0
    T[-1, :] = 0.0
    T[-1, :n] = c
    for r in range(m):
        if basis[r] < art_at and T[-1, basis[r]] != 0.0:
            T[-1] -= T[-1, basis[r]] * T[r]
    _simplex_phase(T, basis, art_at)
    x = np.zeros(total)
    for r in range(m):
        x[basis[r]] = T[r, -1]
    x = x[:n]
    residual = 0.0
    if A_ub is not None:
        residual = max(residual, float(np.max(np.atleast_2d(A_ub) @ x - b_ub, initial=0.0)))
    if A_eq is not None:
        residual = max(residual, float(np.max(np.abs(np.atleast_2d(A_eq) @ x - b_eq), initial=0.0)))
    if residual > 1e-8:
        raise LpFailure(f"solution residual {residual:.3e} exceeds 1e-8")
    return LpSolution(x=x, objective=float(c @ x), residual=residual)


def exact_ne_lp(A):
    """Exact Nash equilibrium of the zero-sum matrix game max_mu min_nu
    mu^T A nu via the classical pair of linear programs.

    Returns (mu, nu, value)."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NonFiniteObjective("matrix has non-finite entries")
    m, n = A.shape
    shift = float(A.min()) - 1.0
    B = A - shift  # strictly positive
    # row player: min sum(x) s.t. B^T x >= 1, x >= 0; value = 1/sum(x)
    row = simplex_solve(np.ones(m), A_ub=-B.T, b_ub=-np.ones(n))
    # column player: max sum(y) s.t. B y <= 1, y >= 0
    col = simplex_solve(-np.ones(n), A_ub=B, b_ub=np.ones(m))
    sx = float(row.x.sum())
    sy = float(-col.objective)
    if sx <= 0 or sy <= 0:
        raise LpFailure("degenerate LP scaling")
    mu = row.x / sx
    nu = col.x / sy
    value = 1.0 / sx + shift
    value_dual = 1.0 / sy + shift
    if abs(value - value_dual) > 1e-7:
        raise LpFailure(f"primal/dual value mismatch {abs(value - value_dual):.3e}")
    return mu, nu, value


def exact_cce_lp(payoffs, action_counts):
    """Welfare-maximizing coarse correlated equilibrium of a one-shot game.

    payoffs has shape (N, A_joint) over the row-major flattened joint action
    space; returns the joint distribution."""
    payoffs = np.asarray(payoffs, dtype=float)
    N, A = payoffs.shape
    counts = tuple(action_counts)
    if A > 64:
        raise SpaceTooLarge(f"joint action space {A} > 64")
    rows = []
    for n in range(N):
        grid = payoffs[n].reshape(counts)
        for a_dev in range(counts[n]):
            dev = np.take(grid, a_dev, axis=n)
            dev = np.broadcast_to(np.expand_dims(dev, axis=n), counts)
            rows.append(dev.reshape(-1) - payoffs[n])
    sol = simplex_solve(
        -payoffs.sum(axis=0),
        A_ub=np.asarray(rows), b_ub=np.zeros(len(rows)),
        A_eq=np.ones((1, A)), b_eq=np.ones(1))
    z = np.clip(sol.x, 0.0, None)
    return z / z.sum()


def cce_deviation_slacks(payoffs, action_counts, z):
    """E_z[Q_n] - max deviation payoff, per (player, deviation); all entries
    must be >= -1e-8 for a valid CCE."""
    payoffs = np.asarray(payoffs, dtype=float)
    counts = tuple(action_counts)
    out = []
    for n in range(payoffs.shape[0]):
        base = float(payoffs[n] @ z)
        grid = payoffs[n].reshape(counts)
        for a_dev in range(counts[n]):
            dev = np.take(grid, a_dev, axis=n)
            dev = np.broadcast_to(np.expand_dims(dev, axis=n), counts)
            out.append(base - float(dev.reshape(-1) @ z))
    return np.asarray(out)


def finite_diff_grad(objective, x, step):
    """Central-difference gradient of a scalar function."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        hi = objective(x + e)
        lo = objective(x - e)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NonFiniteObjective(f"objective non-finite near coordinate {i}")
        g[i] = (hi - lo) / (2.0 * step)
    return g


def _eval_deterministic(P_list, rewards_n, others_list, counts, n, choice, rho):
    """Plain-loop evaluation of player n's undiscounted finite-horizon value
    when playing the deterministic policy 'choice' (H, S) against the others'
    correlated marginals."""
    H = len(P_list)
    S = P_list[0].shape[0]
    V = [0.0] * S
    for h in range(H - 1, -1, -1):
        P = P_list[h]
        newV = [0.0] * S
        for s in range(S):
            a_n = choice[h][s]
            total = 0.0
            others = others_list[h][s].reshape(-1)
            grid = (rewards_n[h][s] + P[s] @ np.asarray(V)).reshape(counts)
            picked = np.take(grid, a_n, axis=n).reshape(-1)
            for w, q in zip(others, picked):
                total += w * q
            newV[s] = total
        V = newV
    return sum(r * v for r, v in zip(rho, V))


def enumerate_deterministic_best_response(game, policy, n, beta=0.0):
    """Exhaustive maximum of player n's value over deterministic Markov
    policies (beta = 0 only); the cross-check for best_response_dp."""
    if beta != 0.0:
        raise ValueError("enumeration covers beta=0 only")
    H, S = game.horizon, game.num_states
    counts = game.action_counts
    A_n = counts[n]
    count = A_n ** (H * S)
    if count > 10 ** 5:
        raise SpaceTooLarge(f"{count} deterministic policies")
    P_list = [game.true_kernel.matrix(h) for h in range(H)]
    others_list = [
        [policy.others_marginal(n)[h, s] for s in range(S)] for h in range(H)
    ]
    rewards_n = [game.rewards[h, n] for h in range(H)]
    best = -math.inf
    for flat in itertools.product(range(A_n), repeat=H * S):
        choice = [flat[h * S:(h + 1) * S] for h in range(H)]
        v = _eval_deterministic(
            P_list, rewards_n, others_list, counts, n, choice, game.rho)
        if v > best:
            best = v
    return best


def truncated_discounted_visitation(P, pi, rho, gamma, horizon=200):
    """Discounted visitation by the truncated power series
    sum_{h<horizon} (1-gamma) gamma^h Pr(s_h=s, a_h=a)."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    S, A = pi.shape
    state = np.asarray(rho, dtype=float).copy()
    d = np.zeros((S, A))
    w = 1.0 - gamma
    for _ in range(horizon):
        layer = state[:, None] * pi
        d += w * layer
        state = np.einsum("sa,sat->t", layer, P)
        w *= gamma
    return d


def oracle_markov_objective(base, theta, dataset, pi_t, alpha, rho, beta,
                            rewards, pi_ref):
    """Independent recomputation of the finite-horizon model objective:
    plain-loop negative log-likelihood minus alpha times the sum of
    best-response values, with its own soft backward induction."""
    base = np.asarray(base, dtype=float)
    theta = np.asarray(theta, dtype=float)
    H, d, S, A, _ = base.shape
    counts = pi_t.action_counts
    nll = 0.0
    for h in range(H):
        for s, a, s_next in dataset.steps[h]:
            p = 0.0
            for k in range(d):
                p += base[h, k, s, a, s_next] * theta[h, k]
            nll -= math.log(max(p, 1e-12))
    if alpha == 0.0:
        return nll
    P_list = []
    for h in range(H):
        P = np.zeros((S, A, S))
        for k in range(d):
            P += theta[h, k] * base[h, k]
        P_list.append(P)
    N = rewards.shape[1]
    value = 0.0
    for n in range(N):
        ref = np.asarray(pi_ref[n], dtype=float)
        V = [0.0] * S
        for h in range(H - 1, -1, -1):
            others = pi_t.others_marginal(n)
            newV = [0.0] * S
            for s in range(S):
                grid = (rewards[h, n, s] + P_list[h][s] @ np.asarray(V)).reshape(counts)
                qbar = []
                for a_n in range(counts[n]):
                    picked = np.take(grid, a_n, axis=n).reshape(-1)
                    qbar.append(float(picked @ others[h, s].reshape(-1)))
                if beta > 0:
                    zs = [math.log(ref[h, s, a]) + qbar[a] / beta
                          for a in range(counts[n])]
                    peak = max(zs)
                    newV[s] = beta * (peak + math.log(
                        sum(math.exp(z - peak) for z in zs)))
                else:
                    newV[s] = max(qbar)
            V = newV
        value += sum(r * v for r, v in zip(rho, V))
    return nll - alpha * value
