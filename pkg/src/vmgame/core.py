"""Shared numerical primitives: simplex policies, KL divergence, linear payoff
models, the noisy bandit-feedback oracle, and dataset containers.

All objects here are immutable value types after construction; RNG streams are
owned by the caller and never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AbsoluteContinuityViolation,
    DimensionMismatch,
    IndexOutOfRange,
    NonFiniteInput,
)

SIMPLEX_ATOL = 1e-12
MIN_REF_ENTRY = 1e-9


def as_simplex(weights, renormalize=True):
    """Validate (and optionally renormalize) a vector as a probability vector.

    Entries must be nonnegative and sum to 1 within 1e-12; small float drift
    is absorbed by renormalization.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise DimensionMismatch(f"expected 1-d weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("simplex weights must be finite")
    if np.any(w < -SIMPLEX_ATOL):
        raise ValueError(f"negative simplex entry: min={w.min()}")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise ValueError("simplex weights sum to zero")
    if renormalize:
        w = w / total
    elif abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"simplex weights sum to {total}, not 1")
    w.setflags(write=False)
    return w


def uniform_simplex(k):
    return as_simplex(np.full(k, 1.0 / k))


def interior_reference(weights):
    """Validate a reference policy: must be strictly positive everywhere so
    KL stays finite on the simplex interior."""
    w = as_simplex(weights)
    if np.any(w < MIN_REF_ENTRY):
        raise ValueError(
            f"reference policy entry below {MIN_REF_ENTRY}; KL would be unbounded"
        )
    return w


def kl_divergence(p, q):
    """KL(p || q) = sum_i p_i log(p_i / q_i), with 0 log 0 = 0.

    Raises AbsoluteContinuityViolation when q_i = 0 but p_i > 0.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes {p.shape} vs {q.shape}")
    bad = (q <= 0.0) & (p > 0.0)
    if np.any(bad):
        raise AbsoluteContinuityViolation(
            f"p has mass on {int(bad.sum())} entries where q is zero"
        )
    mask = p > 0.0
    val = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    # clamp tiny negative drift from identical distributions
    return max(val, 0.0)


def logsumexp1(x):
    """log(sum(exp(x))) for a 1-d vector, shifted for stability; much lighter
    than the generalized scipy version on the small vectors used here."""
    x = np.asarray(x, dtype=float)
    m = float(x.max())
    return m + float(np.log(np.exp(x - m).sum()))


def softmax1(x):
    """Softmax of a 1-d vector (stable, lightweight)."""
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max())
    return e / e.sum()


def project_simplex(v):
    """Euclidean projection of v onto the probability simplex.

    Sort-and-threshold algorithm; idempotent on simplex points.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected 1-d input, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("cannot project non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    cond = u - css / ks > 0
    rho = np.nonzero(cond)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return as_simplex(np.clip(v - tau, 0.0, None))


def project_l2_ball(v, radius):
    nrm = float(np.linalg.norm(v))
    if nrm <= radius:
        return v
    return v * (radius / nrm)


@dataclass(frozen=True)
class RegGameSpec:
    """Regularization spec for the bilinear-plus-KL game objective."""

    beta: float
    mu_ref: np.ndarray
    nu_ref: np.ndarray

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.beta > 0:
            object.__setattr__(self, "mu_ref", interior_reference(self.mu_ref))
            object.__setattr__(self, "nu_ref", interior_reference(self.nu_ref))
        else:
            object.__setattr__(self, "mu_ref", as_simplex(self.mu_ref))
            object.__setattr__(self, "nu_ref", as_simplex(self.nu_ref))

    @staticmethod
    def uniform(m, n, beta=0.0):
        return RegGameSpec(beta, uniform_simplex(m), uniform_simplex(n))


def reg_game_value(A, mu, nu, spec):
    """f^{mu,nu}(A) = mu^T A nu - beta*KL(mu||mu_ref) + beta*KL(nu||nu_ref)."""
    A = np.asarray(A, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if A.shape != (mu.shape[0], nu.shape[0]):
        raise DimensionMismatch(f"A {A.shape} vs mu {mu.shape}, nu {nu.shape}")
    value = float(mu @ A @ nu)
    if spec.beta > 0:
        value -= spec.beta * kl_divergence(mu, spec.mu_ref)
        value += spec.beta * kl_divergence(nu, spec.nu_ref)
    return value


class LinearPayoffModel:
    """Payoff matrix parameterized as A_omega(i,j) = phi(i,j)^T omega.

    features has shape (m, n, d) with ||phi(i,j)||_2 <= 1; omega is kept in
    the l2 ball of radius sqrt(d).
    """

    def __init__(self, features, omega, bound_Bl=None, validate=True):
        features = np.asarray(features, dtype=float)
        omega = np.asarray(omega, dtype=float)
        if features.ndim != 3:
            raise DimensionMismatch(f"features must be (m, n, d), got {features.shape}")
        if omega.shape != (features.shape[2],):
            raise DimensionMismatch(
                f"omega shape {omega.shape} vs feature dim {features.shape[2]}"
            )
        d = features.shape[2]
        if validate:
            norms = np.linalg.norm(features, axis=2)
            if norms.max() > 1.0 + 1e-9:
                raise ValueError(f"feature norm {norms.max()} exceeds 1")
        omega = project_l2_ball(omega, np.sqrt(d))
        self.features = features
        self.omega = omega
        self.m, self.n, self.d = features.shape
        if bound_Bl is None:
            bound_Bl = np.sqrt(d)
        self.bound_Bl = float(bound_Bl)
        self.features.setflags(write=False)
        self.omega.setflags(write=False)

    def payoff_entry(self, i, j):
        if not (0 <= i < self.m and 0 <= j < self.n):
            raise IndexOutOfRange(f"({i}, {j}) outside {self.m}x{self.n}")
        return float(self.features[i, j] @ self.omega)

    def payoff_matrix(self):
        return self.features @ self.omega

    def with_omega(self, omega):
        return LinearPayoffModel(self.features, omega, self.bound_Bl, validate=False)


def one_hot_features(m, n):
    """Realizable d = m*n feature table: phi(i,j) = e_{i*n+j}."""
    d = m * n
    feats = np.zeros((m, n, d))
    for i in range(m):
        for j in range(n):
            feats[i, j, i * n + j] = 1.0
    return feats


def random_matrix_model(m, n, d, seed, antisymmetric=False):
    """Random realizable payoff model: Gaussian features scaled to unit norm,
    omega drawn on a sphere of radius 0.8*sqrt(d)."""
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(m, n, d))
    if antisymmetric:
        if m != n:
            raise DimensionMismatch("antisymmetric features need m == n")
        feats = (feats - feats.transpose(1, 0, 2)) / 2.0
    norms = np.linalg.norm(feats, axis=2)
    feats = feats / max(float(norms.max()), 1e-12)
    omega = rng.normal(size=d)
    omega = omega / np.linalg.norm(omega) * (0.8 * np.sqrt(d))
    return LinearPayoffModel(feats, omega)


def antisymmetric_check(features, atol=1e-10):
    """True when phi(i,j) = -phi(j,i), so A_omega is antisymmetric for all omega."""
    f = np.asarray(features, dtype=float)
    if f.shape[0] != f.shape[1]:
        return False
    return bool(np.max(np.abs(f + f.transpose(1, 0, 2))) <= atol)


class NoiseOracle:
    """Noisy entry-wise query access to a true payoff model.

    distribution 'gaussian' draws N(0, sigma^2); 'uniform-bounded' draws
    Uniform[-sigma*sqrt(3), sigma*sqrt(3)] (same variance).
    """

    DISTRIBUTIONS = ("gaussian", "uniform-bounded")

    def __init__(self, true_model, sigma, distribution="gaussian"):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        if distribution not in self.DISTRIBUTIONS:
            raise ValueError(f"unknown noise distribution {distribution!r}")
        self.true_model = true_model
        self.sigma = float(sigma)
        self.distribution = distribution

    def query(self, i, j, rng):
        value = self.true_model.payoff_entry(i, j)
        if self.sigma == 0.0:
            return value
        if self.distribution == "gaussian":
            noise = rng.normal(0.0, self.sigma)
        else:
            half = self.sigma * np.sqrt(3.0)
            noise = rng.uniform(-half, half)
        return value + noise


def noisy_query(oracle, i, j, rng):
    return oracle.query(i, j, rng)


@dataclass
class MatrixDataset:
    """Append-only list of (i, j, noisy value) tuples."""

    m: int
    n: int
    tuples: list = field(default_factory=list)

    def append(self, i, j, value):
        if not (0 <= i < self.m and 0 <= j < self.n):
            raise IndexOutOfRange(f"({i}, {j}) outside {self.m}x{self.n}")
        self.tuples.append((int(i), int(j), float(value)))

    def __len__(self):
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    def arrays(self):
        """Column arrays (i, j, values), cached until the next append."""
        cache = getattr(self, "_cache", None)
        if cache is None or len(cache[0]) != len(self.tuples):
            if self.tuples:
                ii = np.array([t[0] for t in self.tuples], dtype=int)
                jj = np.array([t[1] for t in self.tuples], dtype=int)
                vv = np.array([t[2] for t in self.tuples], dtype=float)
            else:
                ii = jj = np.zeros(0, dtype=int)
                vv = np.zeros(0)
            self._cache = (ii, jj, vv)
        return self._cache
