"""Composite PINN loss and full-batch Adam training."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diff_engine as de
from .errors import ConfigError, NonFiniteError
from .network import DropoutMask, MlpParameters
from .problems import CollocationSet, PdeProblem, apply_operator, boundary_values, exact_derivs, forcing

log = logging.getLogger(__name__)

TERMS = ("data", "pde", "ic", "bc")


@dataclass
class TrainConfig:
    lambda_data: float = 1.0
    lambda_pde: float = 1.0
    lambda_ic: float = 0.0
    lambda_bc: float = 1.0
    epochs: int = 1000
    lr: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_decay_every: int | None = None  # None -> max(1, epochs // 3)
    seed: int = 0
    keep_prob: float | None = None  # train with dropout when set
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in TERMS:
            if getattr(self, f"lambda_{name}") < 0:
                raise ConfigError(f"lambda_{name} must be non-negative")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.keep_prob is not None and not 0 < self.keep_prob <= 1:
            raise ConfigError("keep_prob must lie in (0, 1]")
        self.epochs = int(self.epochs)

    @property
    def decay_every(self) -> int:
        return int(self.lr_decay_every) if self.lr_decay_every else max(1, self.epochs // 3)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.decay_every)

    def weight(self, term: str) -> float:
        return getattr(self, f"lambda_{term}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    losses: np.ndarray
    terms: dict
    params: object
    wall_time: float = 0.0

    def trace_rows(self):
        names = sorted(self.terms)
        yield ["epoch", "total"] + names
        for i, total in enumerate(self.losses):
            yield [i, repr(float(total))] + [repr(float(self.terms[n][i])) for n in names]


@dataclass
class LossContext:
    problem: PdeProblem
    data_x: np.ndarray
    data_u: np.ndarray
    colloc: CollocationSet


def network_model(params, masks_rng=None, keep_prob=None):
    """Wrap MLP parameters (arrays or ``VarParams``) as ``model(X, order) -> (value, grads, hess)``.

    With ``masks_rng`` every call draws fresh per-point dropout masks.
    """

    def model(X, order):
        masks = None
        if masks_rng is not None and keep_prob is not None and keep_prob < 1.0:
            masks = DropoutMask.sample(params.layer_dims, keep_prob, masks_rng, n_points=len(X)).layers
        ch = de.mlp_channels(params.weights, params.biases, X, order, masks)
        return de.split_channels(ch, X.shape[1], order)

    return model


def exact_model(problem: PdeProblem):
    """Closed-form u* in the ``model(X, order)`` interface."""

    def model(X, order):
        u, g, h = exact_derivs(problem, X)
        return u, (g if order >= 1 else None), (h if order >= 2 else None)

    return model


def _mse(r):
    return (r * r).mean()


def composite_loss(model, ctx: LossContext, cfg: TrainConfig):
    """Weighted sum of data, PDE-residual, initial and boundary MSE terms.

    Returns ``(total, terms)``; both are ``Var`` when the model is built on
    ``VarParams``, plain floats/arrays otherwise. Zero-weight terms are skipped.
    """
    p = ctx.problem
    terms = {}
    use = {t: cfg.weight(t) > 0 for t in TERMS}
    use["bc"] = use["bc"] and len(ctx.colloc.boundary) > 0
    use["ic"] = use["ic"] and len(ctx.colloc.initial) > 0

    # data and boundary only need values: one pass over both point sets
    blocks = []
    if use["data"]:
        blocks.append(("data", ctx.data_x, ctx.data_u))
    if use["bc"]:
        blocks.append(("bc", ctx.colloc.boundary, boundary_values(p, ctx.colloc.boundary)))
    if blocks:
        X = np.concatenate([b[1] for b in blocks])
        target = np.concatenate([b[2] for b in blocks])
        value = model(X, 0)[0]
        diff = value - target
        start = 0
        for name, Xb, _ in blocks:
            terms[name] = _mse(diff[start : start + len(Xb)])
            start += len(Xb)
    if use["pde"]:
        X = ctx.colloc.interior
        v, g, h = model(X, 2)
        terms["pde"] = _mse(apply_operator(p, v, g, h) - forcing(p, X))
    if use["ic"]:
        X = ctx.colloc.initial
        v, g, _ = model(X, 1)
        bs = p.boundary_spec
        terms["ic"] = _mse(v - bs["u0"]) + _mse(g[0] - bs["v0"])

    total = 0.0
    for name in TERMS:
        if name in terms:
            val = terms[name].value if isinstance(terms[name], de.Var) else terms[name]
            if not np.isfinite(val):
                raise NonFiniteError(f"loss term {name!r} is not finite", where=name)
            total = total + terms[name] * cfg.weight(name)
    return total, terms


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, x, grad, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        return x - lr * mhat / (np.sqrt(vhat) + self.eps)


def _float(v):
    return float(v.value) if isinstance(v, de.Var) else float(v)


def minimize_adam(objective, x0, cfg: TrainConfig, what="training"):
    """Run Adam with the step schedule of ``cfg``.

    ``objective(x_var, epoch)`` returns ``(total Var, terms dict)``. Returns the
    final vector, the total-loss trace and the per-term traces.
    """
    x = np.array(x0, dtype=np.float64)
    opt = Adam(x.size, cfg.beta1, cfg.beta2, cfg.eps)
    losses = np.empty(cfg.epochs)
    traces = {}
    for epoch in range(cfg.epochs):
        box = {}

        def f(v):
            total, terms = objective(v, epoch)
            box["terms"] = terms
            return total

        val, grad = de.value_and_grad(f, x)
        if not (np.isfinite(val) and np.isfinite(grad).all()):
            raise NonFiniteError(f"{what} diverged at epoch {epoch}", where=what, epoch=epoch)
        losses[epoch] = val
        for name, t in box["terms"].items():
            traces.setdefault(name, np.empty(cfg.epochs))[epoch] = _float(t)
        x = opt.step(x, grad, cfg.lr_at(epoch))
    return x, losses, traces


def train_adam(init: MlpParameters, ctx: LossContext, cfg: TrainConfig):
    """Full-batch Adam on the composite loss; returns ``(params, TrainReport)``."""
    t0 = time.perf_counter()
    dims = init.layer_dims
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    def objective(v, epoch):
        vp = de.unflatten(v, dims)
        model = network_model(vp, rng if cfg.keep_prob else None, cfg.keep_prob)
        return composite_loss(model, ctx, cfg)

    flat, losses, traces = minimize_adam(objective, init.flatten(), cfg)
    params = MlpParameters.from_flat(dims, flat, init.seed)
    log.info("trained %d epochs, final loss %.3e", cfg.epochs, losses[-1])
    return params, TrainReport(losses, traces, params, time.perf_counter() - t0)
