"""Fixed-architecture tanh MLPs.

Hidden layers use tanh, the output layer is affine. Parameters are laid out
canonically as ``W_0 (row-major), b_0, W_1, b_1, ...`` with ``W_l`` of shape
``(d_{l+1}, d_l)``; every flat vector in the package follows this order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError


def param_count(layer_dims) -> int:
    return int(sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:])))


def param_slices(layer_dims):
    """Yield ``(w_slice, w_shape, b_slice)`` for each layer of the flat layout."""
    offset = 0
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = slice(offset, offset + d_in * d_out)
        offset += d_in * d_out
        b = slice(offset, offset + d_out)
        offset += d_out
        yield w, (d_out, d_in), b


def _check_dims(layer_dims):
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {layer_dims!r}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer dims must be positive, got {layer_dims!r}")
    return tuple(dims)


@dataclass(frozen=True)
class MlpParameters:
    layer_dims: tuple
    weights: list
    biases: list
    seed: int | None = None

    def __post_init__(self):
        dims = _check_dims(self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("weights/biases count does not match layer_dims")
        ws, bs = [], []
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.array(W, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if W.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ShapeError(
                    f"layer {l}: got W{W.shape}, b{b.shape}; expected "
                    f"W{(dims[l + 1], dims[l])}, b{(dims[l + 1],)}"
                )
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise NonFiniteError(f"non-finite parameters in layer {l}", where=f"layer {l}")
            W.flags.writeable = False
            b.flags.writeable = False
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, layer_dims, flat, seed=None) -> "MlpParameters":
        dims = _check_dims(layer_dims)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (param_count(dims),):
            raise ShapeError(f"flat vector has shape {flat.shape}, expected ({param_count(dims)},)")
        ws, bs = [], []
        for w, shape, b in param_slices(dims):
            ws.append(flat[w].reshape(shape))
            bs.append(flat[b])
        return cls(dims, ws, bs, seed)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpParameters":
        return cls(tuple(d["layer_dims"]), d["weights"], d["biases"], d.get("seed"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpParameters":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DropoutMask:
    """Inverted-dropout mask: one vector per hidden layer, entries in {0, 1/keep_prob}.

    A vector may also be a ``(n_points, width)`` matrix when every point gets
    its own mask (used during training).
    """

    layers: list
    keep_prob: float
    seed: int | None = None

    @classmethod
    def sample(cls, layer_dims, keep_prob, rng, n_points=None, seed=None) -> "DropoutMask":
        if not 0.0 < keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        layers = []
        for width in layer_dims[1:-1]:
            shape = (width,) if n_points is None else (n_points, width)
            keep = rng.random(shape) < keep_prob
            layers.append(keep / keep_prob)
        return cls(layers, keep_prob, seed)

    @classmethod
    def all_keep(cls, layer_dims) -> "DropoutMask":
        return cls([np.ones(w) for w in layer_dims[1:-1]], 1.0)


def init_xavier(layer_dims, seed) -> MlpParameters:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    dims = _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        ws.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        bs.append(np.zeros(d_out))
    return MlpParameters(dims, ws, bs, seed)


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"input has shape {x.shape}; network expects dimension {params.input_dim}")
    return X, single


def _check_mask(params, mask):
    hidden = params.layer_dims[1:-1]
    if len(mask.layers) != len(hidden):
        raise ShapeError(f"mask has {len(mask.layers)} layers, network has {len(hidden)} hidden layers")
    for l, (m, w) in enumerate(zip(mask.layers, hidden)):
        if np.shape(m)[-1] != w:
            raise ShapeError(f"mask layer {l} has width {np.shape(m)[-1]}, expected {w}")


def _hidden(params, X, mask=None):
    h = X
    for l, (W, b) in enumerate(zip(params.weights[:-1], params.biases[:-1])):
        h = np.tanh(h @ W.T + b)
        if mask is not None:
            h = h * mask.layers[l]
    return h


def forward(params: MlpParameters, x, mask: DropoutMask | None = None):
    """Network output at one point (returns float) or a batch ``(N, d)`` (returns ``(N,)``)."""
    X, single = _as_batch(params, x)
    if mask is not None:
        _check_mask(params, mask)
    h = _hidden(params, X, mask)
    out = (h @ params.weights[-1].T + params.biases[-1])[:, 0]
    return float(out[0]) if single else out


def latent(params: MlpParameters, x):
    """Activations of the last hidden layer (after tanh, no dropout)."""
    if len(params.layer_dims) < 3:
        raise ShapeError("network has no hidden layer")
    X, single = _as_batch(params, x)
    h = _hidden(params, X)
    return h[0] if single else h
