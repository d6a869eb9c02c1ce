"""Tests for the command-line interface and the estimator wrappers."""

import json

import numpy as np
import pytest
from sklearn.base import clone

from vmgame.cli import main
from vmgame.core import NoiseOracle, random_matrix_model
from vmgame.discounted import random_discounted_game
from vmgame.envs import random_finite_game
from vmgame.errors import ConfigInvalid
from vmgame.learners import (
    DiscountedGameLearner,
    MarkovGameLearner,
    MatrixGameLearner,
)


class TestCliRun:
    def test_run_and_fit(self, tmp_path, capsys):
        out = tmp_path / "out"
        config = {
            "kind": "matrix", "T": 60, "seeds": [0], "out_dir": str(out),
            "beta": 0.5,
            "instance": {"m": 3, "n": 3, "d": 2, "sigma": 0.1,
                         "instance_seed": 3},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config))
        assert main(["run", str(cfg_path)]) == 0
        csv = out / "matrix_seed0.csv"
        assert csv.exists()
        code = main(["fit", str(csv)])
        msg = capsys.readouterr().out.strip().splitlines()[-1]
        if code == 0:
            fitted = json.loads(msg)
            assert {"slope", "intercept", "r2"} <= set(fitted)
        else:
            assert "slope undefined" in msg

    def test_run_invalid_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"kind": "matrix"}))
        assert main(["run", str(bad)]) == 1

    def test_fit_short_trace(self, tmp_path, capsys):
        path = tmp_path / "short.csv"
        path.write_text(
            "round,gap,cum_regret,wallclock_ms\r\n1,0.5,0.5,0.0\r\n")
        assert main(["fit", str(path)]) == 1
        assert "slope undefined" in capsys.readouterr().out


class TestCliEnvs:
    def test_gen_and_verify_finite(self, tmp_path, capsys):
        path = tmp_path / "env.json"
        assert main(["gen-env", "--kind", "finite", "--seed", "3",
                     "-o", str(path)]) == 0
        assert main(["verify", str(path)]) == 0
        assert "OK" in capsys.readouterr().out

    def test_gen_and_verify_discounted(self, tmp_path):
        path = tmp_path / "env.json"
        assert main(["gen-env", "--kind", "discounted", "--seed", "4",
                     "-o", str(path), "--gamma", "0.8"]) == 0
        assert main(["verify", str(path)]) == 0

    def test_verify_rejects_corrupted(self, tmp_path, capsys):
        path = tmp_path / "env.json"
        main(["gen-env", "--kind", "finite", "--seed", "5", "-o", str(path)])
        doc = json.loads(path.read_text())
        doc["rewards"][0][0][0][0] = 9.0
        path.write_text(json.dumps(doc))
        assert main(["verify", str(path)]) == 1
        assert "INVALID" in capsys.readouterr().out

    def test_zero_sum_flag(self, tmp_path):
        path = tmp_path / "env.json"
        main(["gen-env", "--kind", "finite", "--seed", "6", "-o", str(path),
              "--zero-sum"])
        doc = json.loads(path.read_text())
        r = np.array(doc["rewards"])
        assert np.allclose(r[:, 0] + r[:, 1], 1.0)


class TestLearners:
    def test_matrix_learner_fit(self):
        true = random_matrix_model(3, 3, 2, seed=0)
        est = MatrixGameLearner(T=10, beta=0.5, seed=0)
        est.fit(NoiseOracle(true, 0.1))
        assert est.n_rounds_ == 10
        assert est.gaps_.shape == (10,)
        assert np.allclose(est.cum_regret_, np.cumsum(est.gaps_))

    def test_learner_clone_and_params(self):
        est = MatrixGameLearner(T=25, beta=0.2)
        params = est.get_params()
        assert params["T"] == 25 and params["beta"] == 0.2
        twin = clone(est)
        assert twin.get_params() == params

    def test_unknown_variant_rejected(self):
        true = random_matrix_model(3, 3, 2, seed=1)
        est = MatrixGameLearner(T=5, variant="quantum")
        with pytest.raises(ConfigInvalid):
            est.fit(NoiseOracle(true, 0.1))

    def test_markov_learner_fit(self):
        game = random_finite_game(2, 3, (2, 2), 2, 3, seed=2)
        est = MarkovGameLearner(T=3, seed=0)
        est.fit(game)
        assert est.n_rounds_ == 3
        assert est.min_gap_ >= -1e-12

    def test_discounted_learner_mdp_variant(self):
        game = random_discounted_game(1, 3, (2,), 0.8, 2, seed=3)
        est = DiscountedGameLearner(T=3, variant="mdp", option="II", seed=0)
        est.fit(game)
        assert est.n_rounds_ == 3

    def test_fits_are_reproducible(self):
        true = random_matrix_model(3, 3, 2, seed=4)
        a = MatrixGameLearner(T=8, seed=5).fit(NoiseOracle(true, 0.1))
        b = MatrixGameLearner(T=8, seed=5).fit(NoiseOracle(true, 0.1))
        assert np.array_equal(a.gaps_, b.gaps_)
