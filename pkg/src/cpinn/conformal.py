"""Split conformal calibration: vanilla, scaled and locally adaptive intervals.

All intervals are symmetric, ``center(x) +/- multiplier(alpha) * scale(x)``.
The calibrators differ only in how ``scale`` and the calibration scores are
built:

* vanilla: scale 1, scores ``|u - u_theta|``;
* scaled: scale ``sigma(x)``, scores ``|u - u_theta| / sigma``;
* local: scale ``g(x) sigma(x)`` with ``g`` a quantile network fitted on
  training-set scores, calibration scores ``|u - u_theta| / (g sigma)``.

The uncalibrated ("raw") interval uses the Gaussian multiplier
``z_{1 - alpha/2}`` on the model's own sigma.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Callable

import numpy as np

from . import diff_engine as de
from .errors import ConfigError, EmptyInputError, NonFiniteError
from .network import MlpParameters, init_xavier
from .uq_baselines import SIGMA_FLOOR

log = logging.getLogger(__name__)

SOURCES = ("vanilla", "scaled", "localized")


def _alpha_fraction(alpha) -> Fraction:
    # alpha is taken at its shortest decimal spelling so 1 - 0.7 is exactly 3/10
    a = float(alpha)
    if not 0.0 < a < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return Fraction(repr(a))


def quantile_rank(n_cal: int, alpha) -> int:
    """``ceil((1 - alpha)(n_cal + 1))`` computed in exact arithmetic."""
    return math.ceil((1 - _alpha_fraction(alpha)) * (int(n_cal) + 1))


@dataclass(frozen=True)
class ScoreSet:
    """Sorted non-negative nonconformity scores with a provenance tag.

    ``source`` names the score formula; ``split`` records which data split
    produced the scores ("cal" for calibration, "train" for quantile fitting).
    """

    scores: np.ndarray
    source: str
    split: str = "cal"

    def __post_init__(self):
        s = np.sort(np.asarray(self.scores, dtype=np.float64).ravel())
        if self.source not in SOURCES:
            raise ConfigError(f"unknown score source {self.source!r}")
        if not np.isfinite(s).all():
            raise NonFiniteError("non-finite calibration score", where=self.source)
        if (s < 0).any():
            raise ConfigError("scores must be non-negative")
        s.flags.writeable = False
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)


def conformal_quantile(scores, alpha) -> float:
    """The ``ceil((1-alpha)(N+1))``-th smallest score, or ``inf`` past the end."""
    s = scores.scores if isinstance(scores, ScoreSet) else np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if len(s) == 0:
        raise EmptyInputError("cannot take a conformal quantile of an empty score set")
    k = quantile_rank(len(s), alpha)
    return math.inf if k > len(s) else float(s[k - 1])


def gaussian_multiplier(alpha) -> float:
    return NormalDist().inv_cdf(1.0 - float(alpha) / 2.0)


def _floored(sigma, what):
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.isfinite(sigma).all():
        raise NonFiniteError(f"non-finite scale from {what}", where=what)
    low = sigma < SIGMA_FLOOR
    if low.any():
        log.warning("%s: %d scale values below floor %.0e, using the floor", what, int(low.sum()), SIGMA_FLOOR)
        sigma = np.where(low, SIGMA_FLOOR, sigma)
    return sigma


@dataclass
class IntervalPredictor:
    """Symmetric intervals ``center(x) +/- multiplier(alpha) * scale(x)``.

    ``scores`` is None for the uncalibrated Gaussian interval.
    """

    center: Callable
    scale: Callable
    mode: str
    scores: ScoreSet | None = None
    alpha: float | None = None
    meta: dict = field(default_factory=dict)

    def multiplier(self, alpha) -> float:
        if self.scores is None:
            return gaussian_multiplier(alpha)
        return conformal_quantile(self.scores, alpha)

    def evaluate(self, X):
        """Centre and scale at ``X``; reused across many alpha levels."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.asarray(self.center(X), dtype=np.float64), _floored(self.scale(X), self.mode)

    def half_width(self, X, alpha):
        _, s = self.evaluate(X)
        return self.multiplier(alpha) * s

    def interval(self, X, alpha):
        c, s = self.evaluate(X)
        h = self.multiplier(alpha) * s
        return c - h, c + h

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "alpha": self.alpha, "meta": self.meta}
        if self.scores is not None:
            d["score_source"] = self.scores.source
            d["n_cal"] = len(self.scores)
            d["scores"] = [float(v) for v in self.scores.scores]
            if self.alpha is not None:
                q = self.multiplier(self.alpha)
                d["quantile"] = q if math.isfinite(q) else "inf"
        return d

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _cal_arrays(cal):
    X, u = (cal.cal_x, cal.cal_u) if hasattr(cal, "cal_x") else cal
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    u = np.asarray(u, dtype=np.float64).ravel()
    if len(u) == 0:
        raise EmptyInputError("calibration set is empty")
    return X, u


def raw_predictor(model) -> IntervalPredictor:
    """Uncalibrated interval ``mean +/- z_{1-alpha/2} sigma``."""
    return IntervalPredictor(model.mean, model.sigma, "raw", meta={"kind": model.kind})


def calibrate_vanilla(mean, cal, alpha=0.05) -> IntervalPredictor:
    """Constant-width interval from absolute calibration residuals.

    ``mean`` is a callable ``X -> (N,)`` or an object with a ``mean`` attribute.
    """
    f = getattr(mean, "mean", mean)
    X, u = _cal_arrays(cal)
    scores = ScoreSet(np.abs(u - f(X)), "vanilla")
    return IntervalPredictor(f, lambda Z: np.ones(len(np.atleast_2d(Z))), "vanilla", scores, alpha)


def calibrate_scaled(model, cal, alpha=0.05) -> IntervalPredictor:
    X, u = _cal_arrays(cal)
    sig = _floored(model.sigma(X), "scaled calibration")
    scores = ScoreSet(np.abs(u - model.mean(X)) / sig, "scaled")
    return IntervalPredictor(model.mean, model.sigma, "scaled", scores, alpha, meta={"kind": model.kind})


def calibrate_local(model, g, cal, alpha=0.05) -> IntervalPredictor:
    """Local CP: rescale ``g * sigma`` by the conformal quantile of localized scores."""
    X, u = _cal_arrays(cal)

    def scale(Z):
        return _floored(g(Z), "quantile net") * _floored(model.sigma(Z), "local calibration")

    if getattr(g, "fit_split", "train") != "train":
        raise ConfigError("the quantile network must be fitted on training-split scores")
    scores = ScoreSet(np.abs(u - model.mean(X)) / scale(X), "localized")
    meta = {"kind": model.kind, "g_level": getattr(g, "level", None)}
    return IntervalPredictor(model.mean, scale, "local", scores, alpha, meta=meta)


def training_scores(model, X, u):
    """Scaled residuals ``|u - u_theta| / sigma`` on the training split (unsorted, aligned with ``X``)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    sig = _floored(model.sigma(X), "training scores")
    return np.abs(np.asarray(u, dtype=np.float64) - model.mean(X)) / sig


# quantile network -------------------------------------------------------------


def pinball(t, level):
    """Pinball loss at quantile ``level``: ``level * t_+ + (1 - level) * (-t)_+``."""
    t = np.asarray(t, dtype=np.float64)
    return level * np.maximum(t, 0.0) + (1.0 - level) * np.maximum(-t, 0.0)


@dataclass
class QuantileNet:
    """Positive conditional-quantile model ``g(x) = softplus(net(x_scaled)) * score_scale + floor``.

    Inputs are mapped affinely from ``[lower, upper]`` to ``[-1, 1]``.
    """

    params: MlpParameters
    level: float
    lower: np.ndarray
    upper: np.ndarray
    score_scale: float = 1.0
    floor: float = SIGMA_FLOOR
    losses: np.ndarray | None = None
    fit_split: str = "train"

    def _normalize(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        span = np.where(self.upper > self.lower, self.upper - self.lower, 1.0)
        return 2.0 * (X - self.lower) / span - 1.0

    def __call__(self, X):
        Xn = self._normalize(X)
        out = de.mlp_channels(self.params.weights, self.params.biases, Xn, order=0)[0]
        return np.logaddexp(0.0, out) * self.score_scale + self.floor

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "level": self.level,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "score_scale": self.score_scale,
            "floor": self.floor,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            MlpParameters.from_dict(d["params"]),
            d["level"],
            np.asarray(d["lower"], dtype=np.float64),
            np.asarray(d["upper"], dtype=np.float64),
            d["score_scale"],
            d["floor"],
        )


def fit_quantile_net(
    train_x,
    scores,
    alpha,
    hidden=(32, 32),
    steps=5000,
    lr=1e-3,
    seed=0,
    bounds=None,
    split="train",
    lr_decay_factor=0.5,
    batch_size=None,
) -> QuantileNet:
    """Fit ``g`` to the ``(1 - alpha)`` conditional quantile of ``scores`` by pinball loss.

    ``scores`` must be aligned with ``train_x`` and come from the training split.
    They are divided by their mean before fitting (the pinball minimizer is
    scale-equivariant) and the output bias starts at the marginal quantile, so
    a fixed step budget behaves the same for any score magnitude. The Adam
    step size is multiplied by ``lr_decay_factor`` after each third of the run.
    With ``batch_size`` each step uses a fresh random subset of that size
    instead of all scores.
    """
    from .training import TrainConfig, minimize_adam

    if split != "train":
        raise ConfigError(f"the quantile network must be fitted on training-split scores, got {split!r}")
    X = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    s = np.asarray(scores, dtype=np.float64).ravel()
    if len(s) != len(X):
        raise ConfigError(f"{len(s)} scores for {len(X)} inputs")
    if len(s) == 0:
        raise EmptyInputError("no training scores to fit")
    if not np.isfinite(s).all() or (s < 0).any():
        raise NonFiniteError("training scores must be finite and non-negative", where="quantile net")
    level = 1.0 - float(alpha)
    if bounds is None:
        lower, upper = X.min(axis=0), X.max(axis=0)
    else:
        lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    scale = float(s.mean()) if s.mean() > 0 else 1.0
    target = s / scale

    dims = (X.shape[1], *[int(h) for h in hidden], 1)
    init = init_xavier(dims, seed)
    q0 = max(float(np.quantile(target, level)), 1e-3)
    biases = [b.copy() for b in init.biases]
    biases[-1] = np.array([q0 + math.log(-math.expm1(-q0))])  # softplus^-1(q0)
    init = MlpParameters(dims, init.weights, biases, seed)

    shell = QuantileNet(init, level, lower, upper, scale, SIGMA_FLOOR)
    Xn = shell._normalize(X)
    if batch_size is not None and not 0 < int(batch_size) <= len(s):
        raise ConfigError(f"batch_size must lie in [1, {len(s)}], got {batch_size}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))

    def objective(v, epoch):
        vp = de.unflatten(v, dims)
        xb, sb = Xn, target
        if batch_size is not None and int(batch_size) < len(s):
            idx = rng.choice(len(s), int(batch_size), replace=False)
            xb, sb = Xn[idx], target[idx]
        out = de.mlp_channels(vp.weights, vp.biases, xb, order=0)[0]
        t = sb - de.softplus(out)
        loss = (de.relu(t) * level + de.relu(-t) * (1.0 - level)).mean()
        return loss, {"pinball": loss}

    cfg = TrainConfig(epochs=int(steps), lr=lr, lr_decay_factor=lr_decay_factor, seed=seed)
    flat, losses, _ = minimize_adam(objective, init.flatten(), cfg, what="quantile net")
    params = MlpParameters.from_flat(dims, flat, seed)
    return QuantileNet(params, level, lower, upper, scale, SIGMA_FLOOR, losses)
