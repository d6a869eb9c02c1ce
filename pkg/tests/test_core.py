"""Tests for the shared numerical primitives."""

import numpy as np
import pytest

from vmgame.core import (
    LinearPayoffModel,
    MatrixDataset,
    NoiseOracle,
    RegGameSpec,
    antisymmetric_check,
    as_simplex,
    interior_reference,
    kl_divergence,
    logsumexp1,
    one_hot_features,
    project_l2_ball,
    project_simplex,
    random_matrix_model,
    reg_game_value,
    softmax1,
    uniform_simplex,
)
from vmgame.errors import (
    AbsoluteContinuityViolation,
    DimensionMismatch,
    IndexOutOfRange,
    NonFiniteInput,
)


class TestSimplex:
    def test_uniform(self):
        u = uniform_simplex(4)
        assert np.allclose(u, 0.25)

    def test_renormalizes_drift(self):
        w = as_simplex(np.array([0.5, 0.5 + 1e-13]))
        assert abs(w.sum() - 1.0) < 1e-15

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            as_simplex(np.array([-0.1, 1.1]))

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteInput):
            as_simplex(np.array([np.nan, 1.0]))

    def test_rejects_matrix(self):
        with pytest.raises(DimensionMismatch):
            as_simplex(np.eye(2))

    def test_interior_reference_rejects_tiny_entries(self):
        with pytest.raises(ValueError):
            interior_reference(np.array([1e-12, 1.0 - 1e-12]))

    def test_result_read_only(self):
        w = as_simplex(np.array([0.3, 0.7]))
        with pytest.raises(ValueError):
            w[0] = 1.0


class TestKl:
    def test_identical_is_zero(self):
        p = as_simplex(np.array([0.2, 0.8]))
        assert kl_divergence(p, p) == 0.0

    def test_known_value(self):
        # 0.7 log(0.7/0.5) + 0.3 log(0.3/0.5), evaluated by hand
        p = np.array([0.7, 0.3])
        q = np.array([0.5, 0.5])
        assert kl_divergence(p, q) == pytest.approx(0.0822828, abs=1e-6)

    def test_zero_times_log_zero(self):
        p = np.array([0.0, 1.0])
        q = np.array([0.5, 0.5])
        assert kl_divergence(p, q) == pytest.approx(np.log(2.0))

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityViolation):
            kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0]))

    def test_nonnegative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = as_simplex(rng.dirichlet(np.ones(5)))
            q = as_simplex(rng.dirichlet(np.ones(5)))
            assert kl_divergence(p, q) >= 0.0


class TestProjections:
    def test_simplex_point_fixed(self):
        p = np.array([0.2, 0.3, 0.5])
        assert np.allclose(project_simplex(p), p)

    def test_projection_valid(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.normal(size=6) * 3
            p = project_simplex(v)
            assert p.min() >= 0 and abs(p.sum() - 1) < 1e-12

    def test_projection_is_nearest(self):
        # compare against a dense grid search on the 2-simplex
        v = np.array([0.9, -0.3, 0.6])
        p = project_simplex(v)
        rng = np.random.default_rng(2)
        for _ in range(200):
            q = rng.dirichlet(np.ones(3))
            assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-9

    def test_l2_ball(self):
        v = np.array([3.0, 4.0])
        assert np.allclose(project_l2_ball(v, 5.0), v)
        assert np.linalg.norm(project_l2_ball(v, 1.0)) == pytest.approx(1.0)


class TestStableExp:
    def test_logsumexp_matches_naive(self):
        x = np.array([0.1, -2.0, 3.5])
        assert logsumexp1(x) == pytest.approx(np.log(np.exp(x).sum()))

    def test_logsumexp_large_values(self):
        x = np.array([1000.0, 1000.0])
        assert logsumexp1(x) == pytest.approx(1000.0 + np.log(2.0))

    def test_softmax_known(self):
        # softmax of (1, 0): e/(e+1)
        s = softmax1(np.array([1.0, 0.0]))
        assert s[0] == pytest.approx(0.7310586, abs=1e-6)
        assert s[1] == pytest.approx(0.2689414, abs=1e-6)


class TestRegGameValue:
    def test_zero_beta_is_bilinear(self):
        A = np.array([[1.0, 2.0], [3.0, 4.0]])
        spec = RegGameSpec.uniform(2, 2, 0.0)
        mu = np.array([1.0, 0.0])
        nu = np.array([0.0, 1.0])
        assert reg_game_value(A, mu, nu, spec) == 2.0

    def test_kl_terms_have_opposite_signs(self):
        A = np.zeros((2, 2))
        spec = RegGameSpec.uniform(2, 2, 1.0)
        point = np.array([1.0, 0.0])
        u = uniform_simplex(2)
        assert reg_game_value(A, point, u, spec) == pytest.approx(-np.log(2.0))
        assert reg_game_value(A, u, point, spec) == pytest.approx(np.log(2.0))

    def test_shape_mismatch(self):
        spec = RegGameSpec.uniform(2, 2, 0.0)
        with pytest.raises(DimensionMismatch):
            reg_game_value(np.zeros((2, 3)), uniform_simplex(2), uniform_simplex(2), spec)


class TestLinearPayoffModel:
    def test_one_hot_recovers_entries(self):
        feats = one_hot_features(2, 3)
        omega = np.arange(6.0) / 6.0
        model = LinearPayoffModel(feats, omega)
        assert model.payoff_entry(1, 2) == pytest.approx(5.0 / 6.0)
        assert np.allclose(model.payoff_matrix(), omega.reshape(2, 3))

    def test_feature_norm_validated(self):
        feats = np.full((1, 1, 4), 1.0)
        with pytest.raises(ValueError):
            LinearPayoffModel(feats, np.zeros(4))

    def test_omega_projected_to_ball(self):
        feats = one_hot_features(2, 2)
        model = LinearPayoffModel(feats, np.full(4, 100.0))
        assert np.linalg.norm(model.omega) == pytest.approx(2.0)

    def test_index_bounds(self):
        model = LinearPayoffModel(one_hot_features(2, 2), np.zeros(4))
        with pytest.raises(IndexOutOfRange):
            model.payoff_entry(2, 0)

    def test_random_model_valid(self):
        model = random_matrix_model(6, 4, 3, seed=0)
        norms = np.linalg.norm(model.features, axis=2)
        assert norms.max() <= 1.0 + 1e-12
        assert np.linalg.norm(model.omega) <= np.sqrt(3) + 1e-12

    def test_antisymmetric_generation(self):
        model = random_matrix_model(5, 5, 4, seed=1, antisymmetric=True)
        assert antisymmetric_check(model.features)
        A = model.payoff_matrix()
        assert np.allclose(A, -A.T)


class TestNoiseOracle:
    def test_zero_sigma_exact(self):
        model = LinearPayoffModel(one_hot_features(2, 2), np.array([1.0, 0, 0, 0]))
        oracle = NoiseOracle(model, 0.0)
        rng = np.random.default_rng(0)
        assert oracle.query(0, 0, rng) == 1.0

    @pytest.mark.parametrize("dist", ["gaussian", "uniform-bounded"])
    def test_noise_moments(self, dist):
        model = LinearPayoffModel(one_hot_features(1, 1), np.array([0.0]))
        oracle = NoiseOracle(model, 0.3, dist)
        rng = np.random.default_rng(3)
        draws = np.array([oracle.query(0, 0, rng) for _ in range(20000)])
        assert abs(draws.mean()) < 0.01
        assert draws.std() == pytest.approx(0.3, abs=0.01)

    def test_uniform_bounded_support(self):
        model = LinearPayoffModel(one_hot_features(1, 1), np.array([0.0]))
        oracle = NoiseOracle(model, 0.3, "uniform-bounded")
        rng = np.random.default_rng(4)
        draws = np.array([oracle.query(0, 0, rng) for _ in range(5000)])
        assert np.abs(draws).max() <= 0.3 * np.sqrt(3.0) + 1e-12

    def test_unknown_distribution(self):
        model = LinearPayoffModel(one_hot_features(1, 1), np.array([0.0]))
        with pytest.raises(ValueError):
            NoiseOracle(model, 0.1, "cauchy")


class TestMatrixDataset:
    def test_append_and_arrays(self):
        data = MatrixDataset(2, 2)
        data.append(0, 1, 0.5)
        data.append(1, 0, -0.25)
        ii, jj, vv = data.arrays()
        assert list(ii) == [0, 1] and list(jj) == [1, 0]
        assert np.allclose(vv, [0.5, -0.25])

    def test_arrays_cache_invalidation(self):
        data = MatrixDataset(2, 2)
        data.append(0, 0, 1.0)
        data.arrays()
        data.append(1, 1, 2.0)
        assert len(data.arrays()[0]) == 2

    def test_bounds(self):
        data = MatrixDataset(2, 2)
        with pytest.raises(IndexOutOfRange):
            data.append(0, 5, 1.0)
