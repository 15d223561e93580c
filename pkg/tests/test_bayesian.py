import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpinn import diff_engine as de
from cpinn.bayesian import (
    HMCConfig,
    Likelihood,
    PosteriorSamples,
    VIConfig,
    VariationalParams,
    bayes_model,
    fit_variational,
    hmc_sample,
    inverse_softplus,
    kl_mean_field,
    leapfrog,
    negative_elbo,
    negative_elbo_grad,
    posterior_predict,
    softplus,
    train_vi,
)
from cpinn.datagen import NoiseModel, sample_dataset
from cpinn.errors import ConfigError, NonFiniteError
from cpinn.network import MlpParameters, forward, init_xavier
from cpinn.problems import get_problem, make_collocation
from cpinn.training import LossContext, TrainConfig, composite_loss, network_model
from cpinn.uq_baselines import SIGMA_FLOOR

from .conftest import central_diff


def _poisson_ctx(n=30, seed=0):
    prob = get_problem("Poisson1D")
    s = sample_dataset(prob, n, 0, 0, NoiseModel("homoskedastic", 0.15), seed)
    return LossContext(prob, s.train_x, s.train_u, make_collocation(prob, {"n_interior": 50}))


class TestKL:
    def test_identical_gaussians(self):
        rho = inverse_softplus(np.full(4, 2.0))
        assert kl_mean_field(np.zeros(4), rho, 2.0) == pytest.approx(0.0, abs=1e-14)

    def test_unit_mean_shift(self):
        assert kl_mean_field([1.0], inverse_softplus([1.0]), 1.0) == pytest.approx(0.5, abs=1e-14)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(0)
        mu, sig, s0 = rng.normal(0, 1, 3), rng.uniform(0.3, 2.0, 3), 1.3
        z = mu + sig * rng.standard_normal((1_000_000, 3))
        logq = -0.5 * ((z - mu) / sig) ** 2 - np.log(sig)
        logp = -0.5 * (z / s0) ** 2 - np.log(s0)
        mc = float((logq - logp).sum(axis=1).mean())
        assert kl_mean_field(mu, inverse_softplus(sig), s0) == pytest.approx(mc, rel=0.01)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=6),
        st.floats(-4, 4),
        st.floats(0.05, 5.0),
    )
    def test_non_negative(self, mu, rho, s0):
        assert kl_mean_field(np.array(mu), np.full(len(mu), rho), s0) >= -1e-12

    def test_var_path_agrees(self):
        mu, rho = np.array([0.3, -1.0]), np.array([-0.5, 0.7])
        v = kl_mean_field(de.Var(mu), de.Var(rho), 1.5)
        assert float(v.value) == pytest.approx(kl_mean_field(mu, rho, 1.5), rel=1e-14)

    def test_invalid_prior(self):
        with pytest.raises(ConfigError):
            kl_mean_field([0.0], [0.0], 0.0)


class TestElbo:
    def _setup(self):
        ctx = _poisson_ctx()
        p = init_xavier((1, 5, 1), 0)
        like = Likelihood(ctx, TrainConfig(), p.layer_dims, 0.15)
        vp = VariationalParams.from_params(p, sigma_init=0.05)
        return ctx, p, like, vp

    def test_kl_part_is_closed_form(self):
        _, _, like, vp = self._setup()
        _, parts = negative_elbo(vp, like, seed=1)
        assert parts["kl"] == kl_mean_field(vp.mu, vp.rho, vp.prior_std)

    def test_collapsed_q_gives_deterministic_loss(self):
        ctx, p, like, _ = self._setup()
        vp = VariationalParams(p.layer_dims, p.flatten(), np.full(p.n_params, -60.0))
        _, parts = negative_elbo(vp, like, seed=0)
        det, _ = composite_loss(network_model(p), ctx, TrainConfig())
        assert parts["nll"] == pytest.approx(det * like.scale, rel=1e-10)
        vp2 = VariationalParams(p.layer_dims, p.flatten(), np.full(p.n_params, -70.0))
        assert negative_elbo(vp2, like)[1]["kl"] > parts["kl"]

    def test_gradient_against_finite_differences(self):
        _, _, like, vp = self._setup()
        val, grad = negative_elbo_grad(vp, like, seed=3)
        n = vp.mu.size

        def f(x):
            return negative_elbo(VariationalParams(vp.layer_dims, x[:n], x[n:]), like, seed=3)[0]

        assert val == pytest.approx(f(vp.flatten()), rel=1e-12)
        fd = central_diff(f, vp.flatten(), h=1e-5)
        big = np.abs(fd) > 1e-3 * np.abs(fd).max()
        np.testing.assert_allclose(grad[big], fd[big], rtol=1e-4)

    def test_seeded(self):
        _, _, like, vp = self._setup()
        assert negative_elbo(vp, like, seed=4)[0] == negative_elbo(vp, like, seed=4)[0]


def _conjugate(n=20, s=0.5, seed=0):
    y = np.random.default_rng(seed).normal(0.8, s, n)
    prec = 1.0 + n / s**2
    return y, s, y.sum() / s**2 / prec, 1.0 / np.sqrt(prec)


class TestVariationalFit:
    def test_conjugate_gaussian_mean(self):
        y, s, post_mu, post_sd = _conjugate()

        def nll(theta):
            return ((theta - y) ** 2).sum() * (0.5 / s**2)

        vp0 = VariationalParams(None, [0.0], inverse_softplus([0.5]))
        vp, _, _ = fit_variational(nll, vp0, TrainConfig(epochs=20000, lr=1e-2, seed=0))
        assert vp.mu[0] == pytest.approx(post_mu, rel=0.02)
        assert vp.sigma[0] == pytest.approx(post_sd, rel=0.02)

    def test_trace_block_means_decrease(self):
        ctx = _poisson_ctx(60)
        cfg = TrainConfig(epochs=3000, lr=1e-2, seed=0)
        _, rep = train_vi(init_xavier((1, 16, 16, 1), 0), ctx, cfg, VIConfig(noise_std=0.15))
        blocks = rep.losses[1000:].reshape(-1, 500).mean(axis=1)
        assert np.all(np.diff(blocks) <= 0)
        assert set(rep.terms) == {"nll", "kl"}

    def test_seed_determinism(self):
        ctx = _poisson_ctx()
        cfg = TrainConfig(epochs=30, lr=1e-2, seed=7)
        a, _ = train_vi(init_xavier((1, 4, 1), 0), ctx, cfg)
        b, _ = train_vi(init_xavier((1, 4, 1), 0), ctx, cfg)
        np.testing.assert_array_equal(a.flatten(), b.flatten())

    def test_json_round_trip(self):
        vp = VariationalParams.from_params(init_xavier((2, 3, 1), 0), 0.1)
        back = VariationalParams.from_dict(vp.to_dict())
        np.testing.assert_array_equal(back.flatten(), vp.flatten())
        assert back.layer_dims == vp.layer_dims


def _harmonic_grad(th):
    return th


class TestLeapfrog:
    def test_reversible(self):
        rng = np.random.default_rng(0)
        th0, r0 = rng.standard_normal(3), rng.standard_normal(3)

        def grad(th):
            return th**3 - th + 0.2

        th1, r1 = leapfrog(th0, r0, 0.05, 40, grad)
        th2, r2 = leapfrog(th1, -r1, 0.05, 40, grad)
        np.testing.assert_allclose(th2, th0, atol=1e-10)
        np.testing.assert_allclose(-r2, r0, atol=1e-10)

    def test_free_particle(self):
        th, r = leapfrog(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.1, 1, lambda t: np.zeros(2))
        np.testing.assert_allclose(th, [1.05, 1.9])
        np.testing.assert_array_equal(r, [0.5, -1.0])

    def test_second_order_energy_error(self):
        def energy_err(eps):
            T = 1.0
            th, r = leapfrog(np.array([1.0]), np.array([0.0]), eps, int(round(T / eps)), _harmonic_grad)
            return abs(0.5 * th[0] ** 2 + 0.5 * r[0] ** 2 - 0.5)

        ratio = energy_err(0.04) / energy_err(0.01)
        assert 12 < ratio < 20

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            leapfrog(np.array([1.0]), np.array([1.0]), 0.1, 3, lambda t: np.array([np.inf]))
        with pytest.raises(ConfigError):
            leapfrog(np.array([1.0]), np.array([1.0]), 0.0, 3, _harmonic_grad)


def _gauss(var):
    var = np.asarray(var, dtype=float)
    return (lambda th: 0.5 * np.sum(th**2 / var)), (lambda th: th / var)


class TestHMC:
    def test_standard_normal(self):
        U, gU = _gauss([1.0])
        s = hmc_sample(np.zeros(1), U, gU, step_size=0.3, n_steps=7, n_samples=5000, n_burnin=200, thin=1, seed=0)
        assert abs(s.samples.mean()) < 0.05
        assert abs(s.samples.var() - 1.0) < 0.1
        assert 0.9 < s.acceptance_rate <= 1.0

    def test_anisotropic(self):
        U, gU = _gauss([1.0, 4.0])
        s = hmc_sample(np.zeros(2), U, gU, step_size=0.5, n_steps=5, n_samples=5000, n_burnin=200, thin=1, seed=1)
        np.testing.assert_allclose(s.samples.var(axis=0), [1.0, 4.0], rtol=0.1)

    def test_tiny_step_accepts_everything(self):
        U, gU = _gauss([1.0, 2.0])
        s = hmc_sample(np.ones(2), U, gU, step_size=1e-4, n_steps=3, n_samples=200, n_burnin=0, thin=1, seed=2)
        assert s.acceptance_rate == 1.0

    def test_chi_square_goodness_of_fit(self):
        # quadratic form of a 2D Gaussian is chi^2 with 2 dof, i.e. exponential(1/2)
        var = np.array([1.0, 2.5])
        U, gU = _gauss(var)
        s = hmc_sample(np.zeros(2), U, gU, step_size=0.6, n_steps=4, n_samples=10_000, n_burnin=500, thin=2, seed=3)
        q = np.sum(s.samples**2 / var, axis=1)
        edges = -2.0 * np.log(1.0 - np.linspace(0, 1, 11)[1:-1])  # deciles of chi^2_2
        counts = np.bincount(np.searchsorted(edges, q), minlength=10)
        stat = float(np.sum((counts - 1000.0) ** 2 / 1000.0))
        assert stat < 21.666  # chi^2_9 upper 1% point

    def test_low_acceptance_warns(self):
        U, gU = _gauss([1e-6])
        with pytest.warns(RuntimeWarning, match="acceptance"):
            s = hmc_sample(np.zeros(1), U, gU, step_size=5.0, n_steps=5, n_samples=50, n_burnin=10, thin=1, seed=0)
        assert s.warnings

    def test_adaptation_reaches_target(self):
        U, gU = _gauss(np.full(10, 0.01))
        s = hmc_sample(np.zeros(10), U, gU, step_size=1.0, n_steps=5, n_samples=1000, n_burnin=1000, thin=1, seed=4,
                       adapt=True, target_accept=0.65)
        assert 0.5 < s.acceptance_rate < 0.85

    def test_seeded(self):
        U, gU = _gauss([1.0])
        a = hmc_sample(np.zeros(1), U, gU, 0.3, 5, 20, 5, 1, seed=9)
        b = hmc_sample(np.zeros(1), U, gU, 0.3, 5, 20, 5, 1, seed=9)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_invalid_settings(self):
        U, gU = _gauss([1.0])
        with pytest.raises(ConfigError):
            hmc_sample(np.zeros(1), U, gU, step_size=-1.0)

    def test_save_load(self, tmp_path):
        s = PosteriorSamples(np.random.default_rng(0).random((3, 4)), "HMC", (1, 1, 1), 0.7, 0.01, [])
        s.save(tmp_path / "s.json")
        back = PosteriorSamples.load(tmp_path / "s.json")
        np.testing.assert_array_equal(back.samples, s.samples)
        assert back.acceptance_rate == 0.7 and back.layer_dims == (1, 1, 1)


class TestPredictive:
    def test_identical_samples(self):
        p = init_xavier((1, 4, 1), 0)
        s = PosteriorSamples(np.tile(p.flatten(), (5, 1)), "HMC", p.layer_dims, 1.0, 0.1, [])
        mu, sd = posterior_predict(s, np.array([[0.3], [0.6]]))
        np.testing.assert_allclose(mu, forward(p, np.array([[0.3], [0.6]])))
        np.testing.assert_array_equal(sd, SIGMA_FLOOR)

    def test_two_sample_arithmetic(self):
        # (1, 1) network is u = w x + b; samples give f = 0 and f = 2
        s = PosteriorSamples(np.array([[0.0, 0.0], [0.0, 2.0]]), "HMC", (1, 1), 1.0, 0.1, [])
        mu, sd = posterior_predict(s, [0.7], M=2)
        assert mu == 1.0 and sd**2 == pytest.approx(1.0)

    def test_vi_spread_grows_with_sigma(self):
        p = init_xavier((1, 8, 1), 2)
        vp = VariationalParams.from_params(p, sigma_init=0.01)
        wide = VariationalParams(p.layer_dims, vp.mu, inverse_softplus(vp.sigma * 10))
        X = np.linspace(0, 1, 7)[:, None]
        _, sd1 = posterior_predict(vp, X, M=500, seed=0)
        _, sd10 = posterior_predict(wide, X, M=500, seed=0)
        assert np.all(sd10 > sd1)

    def test_bayes_model_centre_is_predictive_mean(self):
        p = init_xavier((1, 8, 1), 2)
        vp = VariationalParams.from_params(p, sigma_init=0.1)
        X = np.linspace(0, 1, 5)[:, None]
        m = bayes_model(vp, "VI", M=50, seed=3)
        mu, sd = posterior_predict(vp, X, M=50, seed=3)
        np.testing.assert_array_equal(m.predict(X)[0], mu)
        np.testing.assert_array_equal(m.predict(X)[1], sd)

    def test_needs_two_draws(self):
        vp = VariationalParams.from_params(init_xavier((1, 2, 1), 0))
        with pytest.raises(ConfigError):
            posterior_predict(vp, [0.1], M=1)


class TestSoftplus:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-6, 30.0))
    def test_inverse(self, y):
        assert softplus(inverse_softplus(y)) == pytest.approx(y, rel=1e-9)
