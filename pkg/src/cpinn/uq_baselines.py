"""Heuristic scale estimators: geometric distance, latent distance and MC dropout.

Each estimator wraps a trained network into an :class:`UncertaintyModel`, the
``(mean, sigma)`` pair consumed by the conformal calibrators.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, EmptyInputError, ShapeError
from .network import DropoutMask, MlpParameters, forward, latent

SIGMA_FLOOR = 1e-6
KINDS = ("GD", "LD", "Dropout", "VI", "HMC")

# Query rows processed per block in the brute-force neighbour search.
_BLOCK = 2048


def config_hash(obj) -> str:
    """Short stable hash of a JSON-serializable object (for provenance tags)."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class UncertaintyModel:
    """A point predictor together with a strictly positive scale function.

    ``mean`` and ``sigma`` map an ``(N, d)`` batch to ``(N,)`` arrays.
    ``extras`` may hold a secondary predictive mean (e.g. the dropout average)
    that is reported but not used as the interval centre.
    """

    mean: Callable
    sigma: Callable
    kind: str
    provenance: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown baseline kind {self.kind!r}; valid options: {', '.join(KINDS)}")

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.asarray(self.mean(X), dtype=np.float64), np.asarray(self.sigma(X), dtype=np.float64)


def _as_2d(x, dim=None):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if dim is not None and X.shape[1] != dim:
        raise ShapeError(f"query points have dimension {X.shape[1]}, training inputs have {dim}")
    return X, single


def _check_knn(train, K):
    train = np.asarray(train, dtype=np.float64)
    if train.ndim == 1:
        train = train[:, None]
    if len(train) == 0:
        raise EmptyInputError("training inputs are empty; distance-based sigma is undefined")
    K = int(K)
    if not 1 <= K <= len(train):
        raise ConfigError(f"K must lie in [1, {len(train)}], got {K}")
    return train, K


def _sq_dists(A, B):
    # exact pairwise squared distances (no |a|^2 - 2ab + |b|^2 cancellation)
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(train, X, K):
    """Indices of the K nearest training inputs per query row (stable tie order)."""
    out = np.empty((len(X), K), dtype=np.int64)
    for s in range(0, len(X), _BLOCK):
        d2 = _sq_dists(X[s : s + _BLOCK], train)
        out[s : s + _BLOCK] = np.argsort(d2, axis=1, kind="stable")[:, :K]
    return out


def gd_sigma(train_inputs, x_new, K=5, floor=SIGMA_FLOOR):
    """Root-mean-square distance from ``x_new`` to its K nearest training inputs."""
    train, K = _check_knn(train_inputs, K)
    X, single = _as_2d(x_new, train.shape[1])
    s = np.empty(len(X))
    for st in range(0, len(X), _BLOCK):
        d2 = _sq_dists(X[st : st + _BLOCK], train)
        nearest = np.sort(d2, axis=1)[:, :K]
        s[st : st + _BLOCK] = np.sqrt(nearest.mean(axis=1))
    s = np.maximum(s, floor)
    return float(s[0]) if single else s


def ld_sigma(params: MlpParameters, train_inputs, x_new, K=5, neighbors="input", floor=SIGMA_FLOOR):
    """Latent-space RMS distance to the K nearest training inputs.

    With ``neighbors="input"`` the neighbour set is chosen by input-space
    distance and distances are then measured between last-hidden-layer
    activations; ``neighbors="latent"`` chooses neighbours in latent space.
    """
    if neighbors not in ("input", "latent"):
        raise ConfigError(f"neighbors must be 'input' or 'latent', got {neighbors!r}")
    train, K = _check_knn(train_inputs, K)
    X, single = _as_2d(x_new, train.shape[1])
    h_train = latent(params, train)
    h_new = latent(params, X)
    s = np.empty(len(X))
    for st in range(0, len(X), _BLOCK):
        hq = h_new[st : st + _BLOCK]
        d2_lat = _sq_dists(hq, h_train)
        if neighbors == "input":
            idx = knn_indices(train, X[st : st + _BLOCK], K)
            chosen = np.take_along_axis(d2_lat, idx, axis=1)
        else:
            chosen = np.sort(d2_lat, axis=1)[:, :K]
        s[st : st + _BLOCK] = np.sqrt(chosen.mean(axis=1))
    s = np.maximum(s, floor)
    return float(s[0]) if single else s


def dropout_predict(params: MlpParameters, x, n_mc=100, keep_prob=0.9, seed=0, floor=SIGMA_FLOOR):
    """Monte Carlo dropout mean and standard deviation.

    Each of the ``n_mc`` passes samples one mask per hidden layer, shared by all
    query points, from a stream seeded by ``seed``; the variance uses divisor
    ``n_mc``. Returns ``(mean, sigma)``.
    """
    n_mc = int(n_mc)
    if n_mc < 1:
        raise ConfigError(f"n_mc must be >= 1, got {n_mc}")
    X, single = _as_2d(x, params.input_dim)
    rng = np.random.default_rng(seed)
    draws = np.empty((n_mc, len(X)))
    for m in range(n_mc):
        mask = DropoutMask.sample(params.layer_dims, keep_prob, rng)
        draws[m] = forward(params, X, mask)
    mu = draws.mean(axis=0)
    sd = np.maximum(np.sqrt(((draws - mu) ** 2).mean(axis=0)), floor)
    if single:
        return float(mu[0]), float(sd[0])
    return mu, sd


# model factories ----------------------------------------------------------------


def _mean_fn(params):
    return lambda X: forward(params, np.atleast_2d(X))


def gd_model(params, train_inputs, K=5, provenance=None) -> UncertaintyModel:
    train = np.array(train_inputs, dtype=np.float64)
    return UncertaintyModel(_mean_fn(params), lambda X: gd_sigma(train, np.atleast_2d(X), K), "GD", dict(provenance or {}))


def ld_model(params, train_inputs, K=5, neighbors="input", provenance=None) -> UncertaintyModel:
    train = np.array(train_inputs, dtype=np.float64)
    return UncertaintyModel(
        _mean_fn(params),
        lambda X: ld_sigma(params, train, np.atleast_2d(X), K, neighbors),
        "LD",
        dict(provenance or {}),
    )


def dropout_model(params, n_mc=100, keep_prob=0.9, seed=0, provenance=None) -> UncertaintyModel:
    """Centre is the unmasked forward pass; sigma is the MC-dropout spread."""
    return UncertaintyModel(
        _mean_fn(params),
        lambda X: dropout_predict(params, np.atleast_2d(X), n_mc, keep_prob, seed)[1],
        "Dropout",
        dict(provenance or {}),
        extras={"mc_mean": lambda X: dropout_predict(params, np.atleast_2d(X), n_mc, keep_prob, seed)[0]},
    )
