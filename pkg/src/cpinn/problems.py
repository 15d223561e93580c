"""Benchmark PDEs: operators, forcings, exact solutions and collocation sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NonFiniteError, ShapeError

PROBLEM_NAMES = ("Poisson1D", "Oscillator1D", "AllenCahn2D", "Helmholtz3D")

_DEFAULTS = {
    "Poisson1D": dict(dim=1, domain=[(0.0, 1.0)], params={}),
    "Oscillator1D": dict(
        dim=1, domain=[(0.0, 5.0)], params={"omega": 2 * math.pi, "zeta": 0.05, "u0": 1.0, "v0": 0.0}
    ),
    "AllenCahn2D": dict(dim=2, domain=[(-1.0, 1.0)] * 2, params={"lam": 0.05}),
    "Helmholtz3D": dict(dim=3, domain=[(0.0, 1.0)] * 3, params={"k": math.pi}),
}

# Default collocation counts. Oscillator count is our choice; the rest follow the benchmarks.
DEFAULT_COLLOCATION = {
    "Poisson1D": {"n_interior": 200, "n_boundary": 2},
    "Oscillator1D": {"n_interior": 500},
    "AllenCahn2D": {"n_interior": 1024, "n_boundary": 800},
    "Helmholtz3D": {"n_interior": 8000, "n_boundary": 6144},
}


@dataclass(frozen=True)
class PdeProblem:
    name: str
    dim: int
    domain: tuple
    params: dict = field(default_factory=dict)

    @property
    def lower(self):
        return np.array([lo for lo, _ in self.domain])

    @property
    def upper(self):
        return np.array([hi for _, hi in self.domain])

    @property
    def boundary_spec(self) -> dict:
        if self.name == "Oscillator1D":
            return {"kind": "initial", "u0": self.params["u0"], "v0": self.params["v0"]}
        if self.name == "AllenCahn2D":
            return {"kind": "dirichlet", "value": "exact"}
        return {"kind": "dirichlet", "value": 0.0}


def get_problem(name: str, overrides: dict | None = None) -> PdeProblem:
    """Look up a benchmark by name; ``overrides`` replaces problem constants."""
    if name not in _DEFAULTS:
        raise ConfigError(f"unknown problem {name!r}; valid options: {', '.join(PROBLEM_NAMES)}")
    d = _DEFAULTS[name]
    params = dict(d["params"])
    for k, v in (overrides or {}).items():
        if k not in params:
            raise ConfigError(f"problem {name} has no constant {k!r}; known: {sorted(params)}")
        params[k] = float(v)
    return PdeProblem(name, d["dim"], tuple(d["domain"]), params)


def _sinpi(x):
    # exact zeros at integers so homogeneous Dirichlet data is exactly 0
    x = np.asarray(x, dtype=np.float64)
    return np.where(x == np.round(x), 0.0, np.sin(np.pi * x))


def _cospi(x):
    return np.cos(np.pi * np.asarray(x, dtype=np.float64))


def _as_points(problem, x, check=True):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != problem.dim:
        raise ShapeError(f"{problem.name} expects points of dimension {problem.dim}, got shape {x.shape}")
    if check:
        tol = 1e-12
        bad = (X < problem.lower - tol) | (X > problem.upper + tol)
        if bad.any():
            i = int(np.argwhere(bad.any(axis=1))[0, 0])
            raise DomainError(f"point {X[i].tolist()} lies outside the {problem.name} domain {list(problem.domain)}")
    return X, single


def _oscillator_terms(p):
    omega, zeta, u0, v0 = p["omega"], p["zeta"], p["u0"], p["v0"]
    a = zeta * omega
    wt = omega * math.sqrt(1.0 - zeta * zeta)
    return a, wt, u0, (v0 + a * u0) / wt


def exact_derivs(problem: PdeProblem, X):
    """Closed-form value ``(N,)``, gradient ``(d, N)`` and hess diag ``(d, N)`` of u*."""
    X, _ = _as_points(problem, X)
    n = problem.name
    if n == "Oscillator1D":
        a, wt, A, B = _oscillator_terms(problem.params)
        t = X[:, 0]
        e = np.exp(-a * t)
        c = A * np.cos(wt * t) + B * np.sin(wt * t)
        c1 = wt * (-A * np.sin(wt * t) + B * np.cos(wt * t))
        c2 = -wt * wt * c
        u = e * c
        return u, (e * (c1 - a * c))[None], (e * (c2 - 2 * a * c1 + a * a * c))[None]
    s = _sinpi(X)
    c = _cospi(X)
    u = np.prod(s, axis=1)
    d = problem.dim
    grads = np.empty((d, len(X)))
    for i in range(d):
        others = np.prod(np.delete(s, i, axis=1), axis=1) if d > 1 else 1.0
        grads[i] = np.pi * c[:, i] * others
    hess = np.tile(-np.pi**2 * u, (d, 1))
    return u, grads, hess


def exact_solution(problem: PdeProblem, x):
    X, single = _as_points(problem, x)
    u = exact_derivs(problem, X)[0]
    return float(u[0]) if single else u


def forcing(problem: PdeProblem, x):
    X, single = _as_points(problem, x)
    n = problem.name
    if n == "Oscillator1D":
        f = np.zeros(len(X))
    elif n == "Poisson1D":
        f = -np.pi**2 * _sinpi(X[:, 0])
    elif n == "AllenCahn2D":
        u = np.prod(_sinpi(X), axis=1)
        f = -2.0 * problem.params["lam"] * np.pi**2 * u + u * (u * u - 1.0)
    elif n == "Helmholtz3D":
        u = np.prod(_sinpi(X), axis=1)
        f = (problem.params["k"] ** 2 - 3.0 * np.pi**2) * u
    else:
        raise ConfigError(f"unknown problem {n!r}")
    return float(f[0]) if single else f


def apply_operator(problem: PdeProblem, value, grads, hess):
    """L[u] from value ``(N,)`` and channel-major ``grads``/``hess`` ``(d, N)``.

    Works on arrays and on ``diff_engine.Var`` alike.
    """
    n = problem.name
    p = problem.params
    if n == "Poisson1D":
        return hess[0]
    if n == "Oscillator1D":
        return hess[0] + (2.0 * p["zeta"] * p["omega"]) * grads[0] + (p["omega"] ** 2) * value
    if n == "AllenCahn2D":
        return (hess[0] + hess[1]) * p["lam"] + value * value * value - value
    if n == "Helmholtz3D":
        return hess.sum(axis=0) + (p["k"] ** 2) * value
    raise ConfigError(f"unknown problem {n!r}")


def residual(problem: PdeProblem, evaluator, x) -> float:
    """Pointwise residual L[u](x) - f(x) with derivatives supplied by ``evaluator(x) -> DualTriple``."""
    X, _ = _as_points(problem, x)
    t = evaluator(X[0])
    g = np.asarray(t.grad, dtype=np.float64).reshape(-1, 1)
    h = np.asarray(t.hess_diag, dtype=np.float64).reshape(-1, 1)
    v = np.array([t.value], dtype=np.float64)
    if not (np.isfinite(v).all() and np.isfinite(g).all() and np.isfinite(h).all()):
        raise NonFiniteError("evaluator returned non-finite derivatives", where="evaluator")
    return float(apply_operator(problem, v, g, h)[0] - forcing(problem, X)[0])


def exact_evaluator(problem: PdeProblem):
    """Evaluator backed by the closed-form solution (for residual checks)."""
    from .diff_engine import DualTriple

    def ev(x):
        u, g, h = exact_derivs(problem, np.asarray(x).reshape(1, -1))
        return DualTriple(float(u[0]), g[:, 0], h[:, 0])

    return ev


def boundary_values(problem: PdeProblem, X):
    """Dirichlet data g on boundary points."""
    if problem.boundary_spec.get("value") == 0.0:
        return np.zeros(len(X))
    return exact_solution(problem, X)


@dataclass(frozen=True)
class CollocationSet:
    interior: np.ndarray
    boundary: np.ndarray
    initial: np.ndarray


def _interior_axis(lo, hi, n):
    return np.linspace(lo, hi, n + 2)[1:-1]


def _cell_centers(lo, hi, n):
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def _int_root(n, power):
    r = int(round(n ** (1.0 / power)))
    for c in (r - 1, r, r + 1):
        if c >= 1 and c**power == n:
            return c
    return None


def _nearest_powers(n, power):
    r = max(1, int(n ** (1.0 / power)))
    return [r**power, (r + 1) ** power]


def make_collocation(problem: PdeProblem, spec: dict | None = None) -> CollocationSet:
    """Build interior/boundary/initial point sets on regular grids."""
    spec = {**DEFAULT_COLLOCATION[problem.name], **(spec or {})}
    for k, v in spec.items():
        if int(v) < 1:
            raise ConfigError(f"collocation count {k} must be positive, got {v}")
    lo, hi = problem.lower, problem.upper
    d = problem.dim
    empty = np.empty((0, d))
    n_int = int(spec["n_interior"])

    if problem.name == "Oscillator1D":
        t = lo[0] + (hi[0] - lo[0]) * np.arange(1, n_int + 1) / n_int
        return CollocationSet(t[:, None], empty, np.array([[lo[0]]]))

    side = _int_root(n_int, d)
    if side is None:
        raise ConfigError(
            f"{problem.name}: n_interior={n_int} is not a {d}-dimensional grid; "
            f"nearest valid counts: {_nearest_powers(n_int, d)}"
        )
    axes = [_interior_axis(lo[i], hi[i], side) for i in range(d)]
    interior = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)

    n_b = int(spec["n_boundary"])
    if d == 1:
        if n_b != 2:
            raise ConfigError(f"{problem.name}: a 1D interval has exactly 2 boundary points; nearest valid counts: [2]")
        boundary = np.array([[lo[0]], [hi[0]]])
    else:
        n_faces = 2 * d
        per_face = n_b // n_faces
        face_side = _int_root(per_face, d - 1) if n_b % n_faces == 0 else None
        if face_side is None:
            near = [n_faces * c for c in _nearest_powers(max(1, n_b // n_faces), d - 1)]
            raise ConfigError(f"{problem.name}: n_boundary={n_b} does not split into {n_faces} equal face grids; nearest valid counts: {near}")
        faces = []
        for axis in range(d):
            others = [i for i in range(d) if i != axis]
            grids = np.meshgrid(*[_cell_centers(lo[i], hi[i], face_side) for i in others], indexing="ij")
            for val in (lo[axis], hi[axis]):
                F = np.empty((face_side ** (d - 1), d))
                F[:, axis] = val
                for j, i in enumerate(others):
                    F[:, i] = grids[j].ravel()
                faces.append(F)
        boundary = np.concatenate(faces)
    return CollocationSet(interior, boundary, empty)


def sample_uniform(problem: PdeProblem, n, rng):
    return problem.lower + (problem.upper - problem.lower) * rng.random((n, problem.dim))
