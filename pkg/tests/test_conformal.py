import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpinn.conformal import (
    IntervalPredictor,
    QuantileNet,
    ScoreSet,
    calibrate_local,
    calibrate_scaled,
    calibrate_vanilla,
    conformal_quantile,
    fit_quantile_net,
    gaussian_multiplier,
    pinball,
    quantile_rank,
    raw_predictor,
    training_scores,
)
from cpinn.errors import ConfigError, EmptyInputError, NonFiniteError
from cpinn.uq_baselines import UncertaintyModel

ALPHAS = [round(0.01 * i, 2) for i in range(1, 100)]


def _model(mean, sigma, kind="GD"):
    return UncertaintyModel(mean, sigma, kind)


def _zero_mean(X):
    return np.zeros(len(np.atleast_2d(X)))


class TestQuantile:
    def test_examples(self):
        assert conformal_quantile(np.arange(1, 10), 0.1) == 9
        assert conformal_quantile([1, 2, 3], 0.5) == 2
        assert conformal_quantile([1, 2, 3], 0.1) == math.inf

    def test_rank_uses_exact_arithmetic(self):
        # (1 - 0.7) * 10 is 3.0000000000000004 in binary floating point
        assert quantile_rank(9, 0.7) == 3
        assert quantile_rank(99, 0.1) == 90
        assert quantile_rank(199, 0.05) == 190

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for n in range(1, 51):
            s = rng.exponential(size=n)
            ordered = sorted(s.tolist())
            for a in ALPHAS:
                # rank from integer percent arithmetic: ceil((100 - p)(n + 1) / 100)
                p = int(round(a * 100))
                k = -((-(100 - p) * (n + 1)) // 100)
                expected = math.inf if k > n else ordered[k - 1]
                assert conformal_quantile(s, a) == expected

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            conformal_quantile([], 0.1)

    def test_invalid_alpha(self):
        with pytest.raises(ConfigError):
            conformal_quantile([1.0], 1.0)

    def test_score_set_validation(self):
        with pytest.raises(NonFiniteError):
            ScoreSet([1.0, np.nan], "vanilla")
        with pytest.raises(ConfigError):
            ScoreSet([-1.0], "vanilla")
        with pytest.raises(ConfigError):
            ScoreSet([1.0], "mystery")
        s = ScoreSet([3.0, 1.0, 2.0], "scaled")
        np.testing.assert_array_equal(s.scores, [1, 2, 3])
        assert s.split == "cal"


class TestVanilla:
    X = np.array([[0.1], [0.5], [0.9]])

    def test_perfect_model(self):
        u = np.sin(self.X[:, 0])
        p = calibrate_vanilla(lambda X: np.sin(X[:, 0]), (self.X, u), 0.5)
        np.testing.assert_array_equal(p.half_width(self.X, 0.5), 0.0)

    def test_three_residuals(self):
        p = calibrate_vanilla(_zero_mean, (self.X, np.array([0.1, -0.2, 0.3])), 0.5)
        np.testing.assert_allclose(p.half_width(np.zeros((4, 1)), 0.5), 0.2)

    def test_centre(self):
        f = lambda X: 2 * X[:, 0]
        p = calibrate_vanilla(f, (self.X, np.zeros(3)), 0.5)
        lo, hi = p.interval(np.array([[0.3], [0.7]]), 0.5)
        np.testing.assert_allclose((lo + hi) / 2, [0.6, 1.4])

    def test_infinite_quantile(self):
        p = calibrate_vanilla(_zero_mean, (self.X, np.ones(3)), 0.1)
        lo, hi = p.interval(self.X, 0.1)
        assert np.all(np.isinf(lo)) and np.all(np.isinf(hi))

    def test_accepts_split_object(self):
        from cpinn.datagen import NoiseModel, sample_dataset
        from cpinn.problems import get_problem

        s = sample_dataset(get_problem("Poisson1D"), 1, 9, 0, NoiseModel("homoskedastic", 0.1), 0)
        p = calibrate_vanilla(_zero_mean, s, 0.1)
        assert p.multiplier(0.1) == np.sort(np.abs(s.cal_u))[8]

    def test_empty_calibration(self):
        with pytest.raises(EmptyInputError):
            calibrate_vanilla(_zero_mean, (np.zeros((0, 1)), np.zeros(0)), 0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.floats(0.01, 100))
    def test_scale_equivariance(self, res, c):
        X = np.zeros((len(res), 1))
        r = np.array(res)
        a = calibrate_vanilla(_zero_mean, (X, r), 0.2).half_width(X[:1], 0.2)
        b = calibrate_vanilla(_zero_mean, (X, c * r), 0.2).half_width(X[:1], 0.2)
        np.testing.assert_allclose(b, c * a, rtol=1e-14)


class TestScaled:
    def test_unit_sigma_equals_vanilla(self):
        rng = np.random.default_rng(1)
        X, u = rng.random((30, 1)), rng.standard_normal(30)
        m = _model(_zero_mean, lambda X: np.ones(len(X)))
        Q = rng.random((5, 1))
        for a in (0.05, 0.1, 0.5):
            np.testing.assert_array_equal(calibrate_scaled(m, (X, u), a).interval(Q, a), calibrate_vanilla(m, (X, u), a).interval(Q, a))

    def test_half_width_ratio(self):
        rng = np.random.default_rng(2)
        sig = lambda X: 0.5 + X[:, 0] ** 2
        p = calibrate_scaled(_model(_zero_mean, sig), (rng.random((20, 1)), rng.standard_normal(20)), 0.1)
        h = p.half_width(np.array([[0.2], [0.9]]), 0.1)
        assert h[0] / h[1] == pytest.approx(sig(np.array([[0.2]]))[0] / sig(np.array([[0.9]]))[0], rel=1e-14)

    def test_sigma_below_floor_is_floored(self, caplog):
        m = _model(_zero_mean, lambda X: np.zeros(len(X)))
        with caplog.at_level("WARNING"):
            p = calibrate_scaled(m, (np.zeros((3, 1)), np.array([1e-7, 2e-7, 3e-7])), 0.5)
        assert p.multiplier(0.5) == pytest.approx(0.2)
        assert "below floor" in caplog.text

    def test_coverage_small_simulation(self):
        # vectorised version of the marginal coverage guarantee
        rng = np.random.default_rng(3)
        trials, n = 400, 99
        s_cal = np.abs(rng.standard_normal((trials, n)))  # |u| / sigma
        q = np.sort(s_cal, axis=1)[:, quantile_rank(n, 0.1) - 1]
        x_t = rng.uniform(0.5, 2.0, (trials, 1000))
        u_t = x_t * rng.standard_normal((trials, 1000))
        cov = (np.abs(u_t) <= q[:, None] * x_t).mean()
        assert 0.9 - 0.01 <= cov <= 0.91 + 0.01


class TestLocal:
    def _data(self):
        rng = np.random.default_rng(4)
        X = rng.random((25, 1))
        return X, rng.standard_normal(25) * (0.2 + X[:, 0])

    def test_unit_g_equals_scaled(self):
        X, u = self._data()
        m = _model(_zero_mean, lambda Z: 0.2 + Z[:, 0])
        g = lambda Z: np.ones(len(Z))
        Q = np.linspace(0, 1, 6)[:, None]
        for a in (0.05, 0.3):
            np.testing.assert_allclose(calibrate_local(m, g, (X, u), a).interval(Q, a), calibrate_scaled(m, (X, u), a).interval(Q, a), rtol=1e-15)

    def test_half_width_ratio(self):
        X, u = self._data()
        sig = lambda Z: 0.2 + Z[:, 0]
        g = lambda Z: 1.0 + np.cos(Z[:, 0])
        p = calibrate_local(_model(_zero_mean, sig), g, (X, u), 0.1)
        Q = np.array([[0.1], [0.8]])
        h = p.half_width(Q, 0.1)
        gs = g(Q) * sig(Q)
        assert h[0] / h[1] == pytest.approx(gs[0] / gs[1], rel=1e-14)

    def test_rejects_calibration_fitted_g(self):
        X, u = self._data()
        g = fit_quantile_net(X, np.abs(u), 0.1, hidden=(4,), steps=5)
        g.fit_split = "cal"
        with pytest.raises(ConfigError):
            calibrate_local(_model(_zero_mean, lambda Z: np.ones(len(Z))), g, (X, u), 0.1)

    def test_fit_requires_training_split(self):
        with pytest.raises(ConfigError):
            fit_quantile_net(np.zeros((3, 1)), np.ones(3), 0.1, split="cal")


class TestMonotonicity:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 5), min_size=1, max_size=60), st.floats(0.01, 0.98), st.floats(0.001, 0.5))
    def test_half_width_non_increasing_in_alpha(self, res, a1, gap):
        a2 = min(a1 + gap, 0.99)
        X = np.zeros((len(res), 1))
        p = calibrate_vanilla(_zero_mean, (X, np.array(res)), a1)
        assert p.half_width(X[:1], a1)[0] >= p.half_width(X[:1], a2)[0]


class TestPinball:
    def test_values(self):
        assert pinball(1.0, 0.9) == pytest.approx(0.9)
        assert pinball(-1.0, 0.9) == pytest.approx(0.1)
        assert pinball(0.0, 0.3) == 0.0

    def test_minimizer_is_empirical_quantile(self):
        s = np.random.default_rng(5).exponential(size=401)
        grid = np.linspace(0, 5, 5001)
        losses = [pinball(s - c, 0.9).mean() for c in grid]
        assert grid[int(np.argmin(losses))] == pytest.approx(np.quantile(s, 0.9, method="inverted_cdf"), abs=1e-3)


class TestQuantileNet:
    def test_constant_scores(self):
        X = np.random.default_rng(6).uniform(-1, 1, (200, 2))
        g = fit_quantile_net(X, np.full(200, 0.37), 0.1, steps=2000)
        Q = np.random.default_rng(7).uniform(-1, 1, (100, 2))
        np.testing.assert_allclose(g(Q), 0.37, rtol=0.02)

    def test_positive_everywhere(self):
        X = np.linspace(0, 1, 50)[:, None]
        g = fit_quantile_net(X, np.zeros(50), 0.1, hidden=(8,), steps=200)
        assert np.all(g(np.linspace(-5, 5, 100)[:, None]) > 0)

    def test_round_trip(self):
        X = np.random.default_rng(8).random((30, 1))
        g = fit_quantile_net(X, np.abs(X[:, 0]), 0.2, hidden=(5,), steps=20, seed=2)
        back = QuantileNet.from_dict(g.to_dict())
        np.testing.assert_array_equal(back(X), g(X))

    def test_deterministic(self):
        X = np.random.default_rng(9).random((30, 1))
        a = fit_quantile_net(X, X[:, 0], 0.1, hidden=(5,), steps=50, seed=1)
        b = fit_quantile_net(X, X[:, 0], 0.1, hidden=(5,), steps=50, seed=1)
        np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())

    def test_minibatch(self):
        X = np.random.default_rng(9).random((40, 1))
        kw = dict(hidden=(5,), steps=30, seed=1)
        full = fit_quantile_net(X, X[:, 0], 0.1, **kw)
        np.testing.assert_array_equal(
            fit_quantile_net(X, X[:, 0], 0.1, batch_size=40, **kw).params.flatten(), full.params.flatten()
        )
        a = fit_quantile_net(X, X[:, 0], 0.1, batch_size=8, **kw)
        b = fit_quantile_net(X, X[:, 0], 0.1, batch_size=8, **kw)
        np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())
        assert not np.array_equal(a.params.flatten(), full.params.flatten())
        with pytest.raises(ConfigError):
            fit_quantile_net(X, X[:, 0], 0.1, batch_size=41, **kw)

    def test_bad_scores(self):
        with pytest.raises(NonFiniteError):
            fit_quantile_net(np.zeros((2, 1)), [1.0, -1.0], 0.1)
        with pytest.raises(ConfigError):
            fit_quantile_net(np.zeros((2, 1)), [1.0], 0.1)

    def test_training_scores_aligned(self):
        m = _model(_zero_mean, lambda Z: 2.0 * np.ones(len(Z)))
        np.testing.assert_allclose(training_scores(m, np.zeros((3, 1)), [1.0, -4.0, 2.0]), [0.5, 2.0, 1.0])


class TestRaw:
    def test_gaussian_multiplier(self):
        assert gaussian_multiplier(0.05) == pytest.approx(1.959963984540054)
        m = _model(_zero_mean, lambda Z: np.full(len(Z), 0.5))
        p = raw_predictor(m)
        assert p.scores is None
        np.testing.assert_allclose(p.half_width(np.zeros((2, 1)), 0.1), 0.5 * 1.6448536269514722)

    def test_serialization(self, tmp_path):
        p = calibrate_vanilla(_zero_mean, (np.zeros((3, 1)), np.array([0.1, 0.2, 0.3])), 0.1)
        d = p.to_dict()
        assert d["quantile"] == "inf" and d["n_cal"] == 3
        p.to_json(tmp_path / "c.json")
        assert (tmp_path / "c.json").exists()
        assert isinstance(p, IntervalPredictor)
