"""Exact derivatives for small tanh MLPs.

Two mechanisms live here:

* ``Var``: a reverse-mode node over float64 numpy arrays. Building an
  expression records a graph; ``Var.backward`` accumulates adjoints in
  reverse topological order. Only a fixed set of primitives is supported
  (affine, tanh, square, sum/mean, constant multiply, softplus, log, exp,
  relu, add/sub/mul, indexing and reshape). Anything else raises
  ``UnsupportedPrimitiveError``.
* Derivative triples. A point is pushed through the network together with
  its input gradient and the diagonal of its input Hessian, stacked as
  channels ``[value, d/dx_1.., d2/dx_1^2..]``. The affine and tanh layers
  are fused primitives with closed-form second-order chain rules, so the
  same code runs on plain arrays (evaluation) or on ``Var`` (training,
  where the PDE residual must be differentiated w.r.t. parameters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NonFiniteError, ShapeError, UnsupportedPrimitiveError
from .network import MlpParameters, param_slices


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class Var:
    """Node of a recorded computation.

    ``needs`` marks whether the node depends on a differentiable leaf; adjoints
    are never computed for constants.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "needs", "op")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", needs=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.needs = needs
        self.op = op

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def backward(self):
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for p, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None or not p.needs:
                    continue
                p.grad = g if p.grad is None else p.grad + g

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise UnsupportedPrimitiveError("divide")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise UnsupportedPrimitiveError(f"power {exponent}")

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return vmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        fn = _UFUNCS.get(ufunc)
        if fn is None or method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(getattr(ufunc, "__name__", str(ufunc)))
        return fn(*inputs)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.needs:
                stack.append((p, False))
    return order


def const(x) -> Var:
    return x if isinstance(x, Var) else Var(x, needs=False, op="const")


def _node(value, parents, backward_fn, op):
    needs = any(p.needs for p in parents)
    return Var(value, parents, backward_fn if needs else None, op, needs)


# elementary primitives ------------------------------------------------------


def add(a, b):
    a, b = const(a), const(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), back, "add")


def sub(a, b):
    a, b = const(a), const(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), back, "sub")


def mul(a, b):
    a, b = const(a), const(b)

    def back(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.needs else None
        gb = _unbroadcast(g * a.value, b.shape) if b.needs else None
        return ga, gb

    return _node(a.value * b.value, (a, b), back, "mul")


def neg(a):
    a = const(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def square(a):
    a = const(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


def tanh(a):
    a = const(a)
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a):
    a = const(a)
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    a = const(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def softplus(a):
    a = const(a)
    return _node(np.logaddexp(0.0, a.value), (a,), lambda g: (g * _sigmoid(a.value),), "softplus")


def relu(a):
    a = const(a)
    return _node(np.maximum(a.value, 0.0), (a,), lambda g: (g * (a.value > 0.0),), "relu")


def vsum(a, axis=None):
    a = const(a)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(a.value.sum(axis=axis), (a,), back, "sum")


def vmean(a, axis=None):
    a = const(a)
    n = a.value.size if axis is None else a.shape[axis]
    return vsum(a, axis) * (1.0 / n)


def getitem(a, idx):
    a = const(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        out = np.zeros(a.shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), back, "getitem")


def reshape(a, shape):
    a = const(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


_UFUNCS = {
    np.add: add,
    np.subtract: sub,
    np.multiply: mul,
    np.negative: neg,
    np.square: square,
    np.tanh: tanh,
    np.exp: exp,
    np.log: log,
}


# fused triple primitives ------------------------------------------------------


def affine_triple(T, W, b):
    """``Z = T @ W.T`` on every channel, bias added to the value channel only.

    ``T`` has shape ``(C, N, d_in)``. Accepts arrays (returns an array) or
    ``Var`` (records a node).
    """
    if not any(isinstance(v, Var) for v in (T, W, b)):
        C, N, d_in = T.shape
        Z = (T.reshape(C * N, d_in) @ W.T).reshape(C, N, -1)
        Z[0] += b
        return Z
    T, W, b = const(T), const(W), const(b)
    C, N, d_in = T.shape
    d_out = W.shape[0]
    Z = (T.value.reshape(C * N, d_in) @ W.value.T).reshape(C, N, d_out)
    Z[0] += b.value

    def back(g):
        gT = g @ W.value if T.needs else None
        gW = g.reshape(C * N, d_out).T @ T.value.reshape(C * N, d_in) if W.needs else None
        gb = g[0].sum(axis=0) if b.needs else None
        return gT, gW, gb

    return _node(Z, (T, W, b), back, "affine_triple")


def tanh_triple(Z, n_grad, has_hess):
    """Apply tanh to the value channel and propagate grad / hess-diag channels.

    For ``a = tanh(z)``: ``a_i = s z_i`` and ``a_ii = s z_ii - 2 a s z_i^2``
    with ``s = 1 - a^2``.
    """
    z = Z.value if isinstance(Z, Var) else Z
    shape = z.shape
    z2 = z.reshape(shape[0], -1)
    out, a = _kernels.tanh_triple_fwd(z2, n_grad, has_hess)
    out = out.reshape(shape)
    if not isinstance(Z, Var):
        return out

    def back(g):
        return (_kernels.tanh_triple_bwd(z2, a, g.reshape(shape[0], -1), n_grad, has_hess).reshape(shape),)

    return _node(out, (Z,), back, "tanh_triple")


# MLP evaluation ----------------------------------------------------------------


@dataclass
class DualTriple:
    """Value, input gradient and diagonal input Hessian at one point.

    ``hess_diag`` is ``None`` when second derivatives were not requested.
    """

    value: float
    grad: np.ndarray
    hess_diag: np.ndarray | None


def seed_channels(X, order):
    """Initial channels for inputs ``X`` (N, d): order 0 value only, 1 adds grads, 2 adds hess."""
    N, d = X.shape
    C = 1 + (d if order >= 1 else 0) + (d if order >= 2 else 0)
    T = np.zeros((C, N, d))
    T[0] = X
    if order >= 1:
        for i in range(d):
            T[1 + i, :, i] = 1.0
    return T


def mlp_channels(weights, biases, X, order=2, masks=None, check_finite=False):
    """Propagate derivative channels through the MLP.

    ``weights``/``biases`` may be arrays or ``Var``. ``masks`` is an optional
    list of per-hidden-layer multipliers broadcastable to ``(N, width)``.
    Returns channels of shape ``(C, N)`` for the scalar output.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    n_grad = d if order >= 1 else 0
    T = seed_channels(X, order)
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        Z = affine_triple(T, W, b)
        if check_finite and not isinstance(Z, Var) and not np.isfinite(Z).all():
            raise NonFiniteError(f"non-finite pre-activation in layer {l}", where=f"layer {l}")
        if l == last:
            T = Z
            break
        T = tanh_triple(Z, n_grad, order >= 2)
        if masks is not None:
            T = T * masks[l]
    return T[:, :, 0]


def split_channels(ch, d, order=2):
    """Split ``(C, N)`` channels into (value, grads (d, N), hess (d, N) or None)."""
    value = ch[0]
    grads = ch[1 : 1 + d] if order >= 1 else None
    hess = ch[1 + d : 1 + 2 * d] if order >= 2 else None
    return value, grads, hess


def input_derivs(params: MlpParameters, X, want_second=True):
    """Batched value ``(N,)``, gradient ``(N, d)`` and hess diag ``(N, d)`` (or None)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise ShapeError(f"input dimension {X.shape[1]} does not match network input {params.input_dim}")
    order = 2 if want_second else 1
    ch = mlp_channels(params.weights, params.biases, X, order, check_finite=True)
    v, g, h = split_channels(ch, X.shape[1], order)
    return v.copy(), g.T.copy(), (h.T.copy() if h is not None else None)


def eval_with_input_derivs(params: MlpParameters, x, want_second=True) -> DualTriple:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"point has dimension {x.shape[0]}, network expects {params.input_dim}")
    v, g, h = input_derivs(params, x[None, :], want_second)
    return DualTriple(float(v[0]), g[0], None if h is None else h[0])


# parameter gradients -------------------------------------------------------------


@dataclass
class VarParams:
    """Differentiable views of a flat parameter vector, layer by layer."""

    layer_dims: tuple
    weights: list
    biases: list
    flat: Var


def unflatten(flat: Var, layer_dims) -> VarParams:
    ws, bs = [], []
    for w, shape, b in param_slices(layer_dims):
        ws.append(flat[w].reshape(shape))
        bs.append(flat[b])
    return VarParams(tuple(layer_dims), ws, bs, flat)


def value_and_grad(loss, params):
    """Evaluate ``loss`` and its gradient w.r.t. ``params``.

    ``params`` is either an ``MlpParameters`` (``loss`` then receives a
    ``VarParams``; the gradient is in canonical flat order) or an array
    (``loss`` receives a ``Var`` of the same shape).
    """
    if isinstance(params, MlpParameters):
        leaf = Var(params.flatten())
        out = loss(unflatten(leaf, params.layer_dims))
    else:
        leaf = Var(np.array(params, dtype=np.float64))
        out = loss(leaf)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(leaf.value)
    if out.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {out.shape}")
    out.backward()
    grad = np.zeros_like(leaf.value) if leaf.grad is None else np.array(leaf.grad, dtype=np.float64)
    return float(out.value), grad


def loss_grad_params(loss, params) -> np.ndarray:
    return value_and_grad(loss, params)[1]
