"""Bayesian PINN baselines: mean-field variational inference and HMC.

Both methods share one unnormalized log posterior over the flat parameter
vector ``theta``:

    U(theta) = n_data * L(theta) / (2 noise_std^2) + |theta|^2 / (2 prior_std^2)

where ``L`` is the weighted composite PINN loss. The first term is the
Gaussian negative log-likelihood of the data term (up to a constant) with the
physics penalties folded in at their configured weights.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import diff_engine as de
from .errors import ConfigError, NonFiniteError, ShapeError
from .network import MlpParameters, forward, param_count
from .training import LossContext, TrainConfig, TrainReport, composite_loss, minimize_adam, network_model
from .uq_baselines import SIGMA_FLOOR, UncertaintyModel

log = logging.getLogger(__name__)

DEFAULT_PRIOR_STD = 1.0
DEFAULT_NOISE_STD = 0.1


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


# variational inference ------------------------------------------------------------


@dataclass(frozen=True)
class VariationalParams:
    """Mean-field Gaussian ``q(theta) = N(mu, softplus(rho)^2)`` in flat MLP layout.

    ``layer_dims`` may be None for a generic parameter vector.
    """

    layer_dims: tuple | None
    mu: np.ndarray
    rho: np.ndarray
    prior_std: float = DEFAULT_PRIOR_STD

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).ravel()
        rho = np.array(self.rho, dtype=np.float64).ravel()
        n = param_count(self.layer_dims) if self.layer_dims is not None else mu.size
        if mu.shape != (n,) or rho.shape != (n,):
            raise ShapeError(f"mu/rho must have length {n}, got {mu.shape} and {rho.shape}")
        if self.prior_std <= 0:
            raise ConfigError("prior_std must be positive")
        if not (np.isfinite(mu).all() and np.isfinite(rho).all()):
            raise NonFiniteError("non-finite variational parameters", where="VariationalParams")
        mu.flags.writeable = False
        rho.flags.writeable = False
        if self.layer_dims is not None:
            object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "rho", rho)

    @property
    def sigma(self):
        return softplus(self.rho)

    @classmethod
    def from_params(cls, params: MlpParameters, sigma_init=1e-3, prior_std=DEFAULT_PRIOR_STD):
        n = params.n_params
        return cls(params.layer_dims, params.flatten(), np.full(n, float(inverse_softplus(sigma_init))), prior_std)

    def flatten(self):
        return np.concatenate([self.mu, self.rho])

    def sample(self, rng) -> MlpParameters:
        eps = rng.standard_normal(self.mu.size)
        return MlpParameters.from_flat(self.layer_dims, self.mu + self.sigma * eps)

    def to_dict(self):
        return {
            "layer_dims": list(self.layer_dims) if self.layer_dims is not None else None,
            "mu": self.mu.tolist(),
            "rho": self.rho.tolist(),
            "prior_std": self.prior_std,
        }

    @classmethod
    def from_dict(cls, d):
        dims = tuple(d["layer_dims"]) if d.get("layer_dims") is not None else None
        return cls(dims, d["mu"], d["rho"], d["prior_std"])


def kl_mean_field(mu, rho, prior_std=DEFAULT_PRIOR_STD):
    """``KL(N(mu, softplus(rho)^2) || N(0, prior_std^2))`` summed over dimensions.

    Accepts arrays (returns a float) or ``Var`` (returns a ``Var``).
    """
    if prior_std <= 0:
        raise ConfigError(f"prior_std must be positive, got {prior_std}")
    s0 = float(prior_std)
    if isinstance(mu, de.Var) or isinstance(rho, de.Var):
        sig = de.softplus(rho)
        per = (sig * sig + mu * mu) * (0.5 / s0**2) - de.log(sig) + (math.log(s0) - 0.5)
        return per.sum()
    mu = np.asarray(mu, dtype=np.float64)
    sig = softplus(np.asarray(rho, dtype=np.float64))
    return float(np.sum(np.log(s0 / sig) + (sig**2 + mu**2) / (2 * s0**2) - 0.5))


@dataclass
class Likelihood:
    """Gaussian likelihood around the PINN composite loss."""

    ctx: LossContext
    cfg: TrainConfig
    layer_dims: tuple
    noise_std: float = DEFAULT_NOISE_STD

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ConfigError("likelihood noise_std must be positive")

    @property
    def n_data(self):
        return len(self.ctx.data_u)

    @property
    def scale(self):
        return max(self.n_data, 1) / (2.0 * self.noise_std**2)

    def nll(self, theta):
        """Negative log-likelihood (without the Gaussian normalizer) at a flat ``theta``."""
        vp = de.unflatten(theta, self.layer_dims)
        total, _ = composite_loss(network_model(vp), self.ctx, self.cfg)
        return total * self.scale


def negative_elbo(vp: VariationalParams, nll, n_samples=1, seed=0, rng=None):
    """Monte Carlo negative ELBO with the reparameterization ``theta = mu + sigma * eps``.

    ``nll`` maps a flat parameter ``Var`` to a scalar ``Var`` (a ``Likelihood``
    works). Returns ``(value, {"nll": ..., "kl": ...})`` as floats.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    eps = [rng.standard_normal(vp.mu.size) for _ in range(int(n_samples))]
    total, parts = _elbo_graph(de.const(vp.flatten()), vp.mu.size, vp.prior_std, nll, eps)
    return float(total.value), {k: float(v.value) for k, v in parts.items()}


def _elbo_graph(x, n, prior_std, nll, eps_list):
    f = nll.nll if isinstance(nll, Likelihood) else nll
    mu, rho = x[:n], x[n:]
    sig = de.softplus(rho)
    like = 0.0
    for eps in eps_list:
        like = like + f(mu + sig * eps)
    like = like * (1.0 / len(eps_list))
    kl = kl_mean_field(mu, rho, prior_std)
    return like + kl, {"nll": like, "kl": kl}


def negative_elbo_grad(vp: VariationalParams, nll, n_samples=1, seed=0):
    """Gradient of :func:`negative_elbo` with respect to ``[mu, rho]`` at a fixed seed."""
    rng = np.random.default_rng(seed)
    eps = [rng.standard_normal(vp.mu.size) for _ in range(int(n_samples))]
    return de.value_and_grad(lambda x: _elbo_graph(x, vp.mu.size, vp.prior_std, nll, eps)[0], vp.flatten())


@dataclass
class VIConfig:
    prior_std: float = DEFAULT_PRIOR_STD
    noise_std: float = DEFAULT_NOISE_STD
    sigma_init: float = 1e-3
    n_samples: int = 1
    n_predict: int = 200


def fit_variational(nll, vp0: VariationalParams, cfg: TrainConfig, n_samples=1):
    """Adam on the negative ELBO, fresh reparameterization noise every step.

    Returns ``(VariationalParams, losses, term traces)``.
    """
    n = vp0.mu.size
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))

    def objective(x, epoch):
        eps = [rng.standard_normal(n) for _ in range(int(n_samples))]
        return _elbo_graph(x, n, vp0.prior_std, nll, eps)

    flat, losses, traces = minimize_adam(objective, vp0.flatten(), cfg, what="variational inference")
    vp = VariationalParams(vp0.layer_dims, flat[:n], flat[n:], vp0.prior_std)
    return vp, losses, traces


def train_vi(init: MlpParameters, ctx: LossContext, cfg: TrainConfig, vi: VIConfig | None = None):
    """Mean-field VI for a PINN; returns ``(VariationalParams, TrainReport)``."""
    vi = vi or VIConfig()
    t0 = time.perf_counter()
    like = Likelihood(ctx, cfg, init.layer_dims, vi.noise_std)
    vp0 = VariationalParams.from_params(init, vi.sigma_init, vi.prior_std)
    vp, losses, traces = fit_variational(like, vp0, cfg, vi.n_samples)
    log.info("VI finished %d epochs, final -ELBO %.4e", cfg.epochs, losses[-1])
    return vp, TrainReport(losses, traces, vp, time.perf_counter() - t0)


# Hamiltonian Monte Carlo -----------------------------------------------------------


def _check_state(theta, r, where):
    if not (np.isfinite(theta).all() and np.isfinite(r).all()):
        raise NonFiniteError("leapfrog produced a non-finite state", where=where)


def leapfrog(theta, r, step_size, n_steps, grad_U, grad0=None):
    """Half kick, ``n_steps`` drifts with full kicks between, half kick (unit mass).

    Returns ``(theta, r)``. ``grad0`` may pass a cached gradient at the start.
    """
    if step_size <= 0 or int(n_steps) < 1:
        raise ConfigError("leapfrog needs step_size > 0 and n_steps >= 1")
    theta = np.array(theta, dtype=np.float64)
    r = np.array(r, dtype=np.float64)
    g = grad_U(theta) if grad0 is None else grad0
    r = r - 0.5 * step_size * g
    for i in range(int(n_steps)):
        theta = theta + step_size * r
        g = grad_U(theta)
        if i < n_steps - 1:
            r = r - step_size * g
    r = r - 0.5 * step_size * g
    _check_state(theta, r, "leapfrog")
    return theta, r


@dataclass
class PosteriorSamples:
    """Retained parameter vectors of a sampler (rows of ``samples``)."""

    samples: np.ndarray
    method: str
    layer_dims: tuple | None = None
    acceptance_rate: float | None = None
    step_size: float | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if len(self.samples) < 2:
            raise ConfigError("need at least 2 posterior samples")
        if not np.isfinite(self.samples).all():
            raise NonFiniteError("non-finite posterior sample", where=self.method)

    def __len__(self):
        return len(self.samples)

    def to_dict(self):
        return {
            "method": self.method,
            "layer_dims": list(self.layer_dims) if self.layer_dims else None,
            "acceptance_rate": self.acceptance_rate,
            "step_size": self.step_size,
            "warnings": list(self.warnings),
            "samples": self.samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        dims = tuple(d["layer_dims"]) if d.get("layer_dims") else None
        return cls(d["samples"], d["method"], dims, d.get("acceptance_rate"), d.get("step_size"), d.get("warnings", []))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class HMCConfig:
    step_size: float = 1e-3
    n_steps: int = 50
    n_burnin: int = 1000
    n_samples: int = 200
    thin: int = 5
    adapt: bool = False
    target_accept: float = 0.65
    seed: int = 0


def hmc_sample(init, U, grad_U=None, step_size=1e-3, n_steps=50, n_samples=200, n_burnin=1000, thin=5,
               seed=0, adapt=False, target_accept=0.65, layer_dims=None) -> PosteriorSamples:
    """Metropolis-adjusted leapfrog sampling with identity mass matrix.

    ``U(theta)`` returns the potential; if ``grad_U`` is None it must return
    ``(potential, gradient)``. With ``adapt`` the step size is tuned during
    burn-in toward ``target_accept`` and then frozen. ``n_samples`` draws are
    kept, one every ``thin`` iterations after burn-in.
    """
    if step_size <= 0 or n_steps < 1 or n_samples < 2 or thin < 1 or n_burnin < 0:
        raise ConfigError("invalid HMC settings")
    if grad_U is None:
        both = U
    else:
        def both(th):
            return U(th), grad_U(th)

    rng = np.random.default_rng(seed)
    theta = np.array(init, dtype=np.float64).ravel()
    u_cur, g_cur = both(theta)
    cache = {}

    def grad_only(th):
        u, g = both(th)
        cache["u"], cache["g"] = u, g
        return g

    eps = float(step_size)
    log_eps = math.log(eps)
    n_total = int(n_burnin) + int(n_samples) * int(thin)
    kept = []
    accepted = 0
    for it in range(n_total):
        r0 = rng.standard_normal(theta.size)
        try:
            th_new, r_new = leapfrog(theta, r0, eps, n_steps, grad_only, grad0=g_cur)
            u_new, g_new = cache["u"], cache["g"]
            h_old = u_cur + 0.5 * r0 @ r0
            h_new = u_new + 0.5 * r_new @ r_new
            log_acc = min(0.0, h_old - h_new) if np.isfinite(h_new) else -np.inf
        except NonFiniteError:
            log_acc = -np.inf
        accept = np.log(rng.random()) < log_acc
        if accept:
            theta, u_cur, g_cur = th_new, u_new, g_new
        if it < n_burnin:
            if adapt:
                # Robbins-Monro on log step size, frozen after burn-in
                log_eps += (math.exp(log_acc) - target_accept) / (it + 10) ** 0.6
                eps = math.exp(log_eps)
        else:
            accepted += bool(accept)
            if (it - n_burnin + 1) % thin == 0:
                kept.append(theta.copy())
    rate = accepted / max(1, n_total - n_burnin)
    notes = []
    if rate < 0.01:
        msg = f"HMC acceptance rate {rate:.4f} is below 1% after burn-in"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
        notes.append(msg)
    return PosteriorSamples(np.array(kept), "HMC", layer_dims, rate, eps, notes)


def pinn_potential(like: Likelihood, prior_std=DEFAULT_PRIOR_STD):
    """``theta -> (U, grad U)`` for the PINN posterior."""

    def both(theta):
        def f(v):
            return like.nll(v) + (v * v).sum() * (0.5 / prior_std**2)

        return de.value_and_grad(f, theta)

    return both


def sample_hmc(params: MlpParameters, ctx: LossContext, cfg: TrainConfig, hmc: HMCConfig,
               noise_std=DEFAULT_NOISE_STD, prior_std=DEFAULT_PRIOR_STD) -> PosteriorSamples:
    """HMC over PINN weights started from ``params`` (typically a MAP fit)."""
    like = Likelihood(ctx, cfg, params.layer_dims, noise_std)
    return hmc_sample(
        params.flatten(), pinn_potential(like, prior_std), None, hmc.step_size, hmc.n_steps, hmc.n_samples,
        hmc.n_burnin, hmc.thin, hmc.seed, hmc.adapt, hmc.target_accept, params.layer_dims,
    )


# predictive moments ------------------------------------------------------------------


def posterior_draws(source, M=200, seed=0):
    """Parameter vectors used for prediction.

    VI: ``M`` fresh draws from ``q``. Samples: the stored draws, evenly
    subsampled to ``M`` when more are available.
    """
    if isinstance(source, VariationalParams):
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal((int(M), source.mu.size))
        return source.layer_dims, source.mu + source.sigma * eps
    S = source.samples
    if len(S) > M:
        S = S[np.linspace(0, len(S) - 1, int(M)).round().astype(int)]
    return source.layer_dims, S


def predict_draws(layer_dims, thetas, X):
    """Network outputs ``(M, N)`` for each parameter row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty((len(thetas), len(X)))
    for m, th in enumerate(thetas):
        out[m] = forward(MlpParameters.from_flat(layer_dims, th), X)
    return out


def posterior_predict(source, x, M=200, seed=0, floor=SIGMA_FLOOR):
    """Predictive mean and standard deviation (population variance over draws)."""
    if M < 2:
        raise ConfigError("posterior_predict needs M >= 2")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    dims, thetas = posterior_draws(source, M, seed)
    f = predict_draws(dims, thetas, x.reshape(1, -1) if single else x)
    mu = f.mean(axis=0)
    sd = np.maximum(np.sqrt(((f - mu) ** 2).mean(axis=0)), floor)
    if single:
        return float(mu[0]), float(sd[0])
    return mu, sd


def bayes_model(source, kind, M=200, seed=0, provenance=None) -> UncertaintyModel:
    """Wrap posterior moments as an ``UncertaintyModel`` centred on the predictive mean."""
    dims, thetas = posterior_draws(source, M, seed)
    memo = {}

    def moments(X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        key = X.tobytes()
        if key not in memo:
            f = predict_draws(dims, thetas, X)
            mu = f.mean(axis=0)
            sd = np.maximum(np.sqrt(((f - mu) ** 2).mean(axis=0)), SIGMA_FLOOR)
            memo.clear()
            memo[key] = (mu, sd)
        return memo[key]

    return UncertaintyModel(lambda X: moments(X)[0], lambda X: moments(X)[1], kind, dict(provenance or {}))
