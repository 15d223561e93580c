"""Noisy observation datasets: noise models, train/cal/test splits, CSV persistence."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .problems import PdeProblem, exact_solution, get_problem, sample_uniform

NOISE_KINDS = ("none", "homoskedastic", "hetero_bumps_1d", "hetero_regions_2d")

# 2D heteroskedastic scenarios on [-1, 1]^2: unions of ellipses (cx, cy, ax, ay)
# and half-planes (nx, ny, offset) meaning nx*x + ny*y > offset.
SCENARIOS = {
    "A": {"ellipses": [(-0.5, 0.4, 0.35, 0.2), (0.45, -0.45, 0.25, 0.3)], "halfplanes": []},
    "B": {"ellipses": [(-0.5, -0.5, 0.3, 0.2)], "halfplanes": [(1.0, 1.0, 1.0)]},
    "C": {"ellipses": [(-0.6, 0.6, 0.2, 0.2), (0.0, 0.0, 0.3, 0.15), (0.6, -0.5, 0.2, 0.3)], "halfplanes": []},
}


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise.

    ``sigma`` is a homoskedastic level applied to every kind except ``none``.
    The heteroskedastic kinds add an independent second draw with standard
    deviation ``noise_std(model, x)``.
    """

    kind: str = "none"
    sigma: float = 0.0
    b: float = 0.3
    centers: tuple = (1.0, 2.0, 3.0)
    widths: tuple = (0.2, 0.2, 0.2)
    scenario: str = "A"
    sharpness: float = 20.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; valid options: {', '.join(NOISE_KINDS)}")
        if self.sigma < 0 or self.b < 0:
            raise ConfigError("noise levels must be non-negative")
        if len(self.centers) != len(self.widths):
            raise ConfigError("centers and widths must have equal length")
        if self.kind == "hetero_regions_2d" and self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; valid options: {', '.join(SCENARIOS)}")
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))

    def to_dict(self):
        d = asdict(self)
        d["centers"] = list(self.centers)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def region_signed_distance(scenario, X):
    """Approximate signed distance to the union of scenario regions (positive inside)."""
    X = np.atleast_2d(X)
    geo = SCENARIOS[scenario]
    d = np.full(len(X), -np.inf)
    for cx, cy, ax, ay in geo["ellipses"]:
        r = np.sqrt(((X[:, 0] - cx) / ax) ** 2 + ((X[:, 1] - cy) / ay) ** 2)
        d = np.maximum(d, (1.0 - r) * min(ax, ay))
    for nx, ny, off in geo["halfplanes"]:
        d = np.maximum(d, (nx * X[:, 0] + ny * X[:, 1] - off) / np.hypot(nx, ny))
    return d


def noise_std(model: NoiseModel, x):
    """Point-wise standard deviation of the heteroskedastic component.

    For ``homoskedastic`` this is the constant ``sigma``; for ``none`` it is 0.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if model.kind == "none":
        s = np.zeros(len(X))
    elif model.kind == "homoskedastic":
        s = np.full(len(X), model.sigma)
    elif model.kind == "hetero_bumps_1d":
        t = X[:, 0]
        s = np.zeros(len(X))
        for c, w in zip(model.centers, model.widths):
            z = (t - c) / w
            s += model.b * np.exp(-0.5 * z * z) * (np.abs(t - c) <= w)
    else:
        d = region_signed_distance(model.scenario, X)
        s = model.b * 0.5 * (1.0 + np.tanh(0.5 * model.sharpness * d))
    return float(s[0]) if single else s


def total_noise_std(model: NoiseModel, X):
    """Standard deviation of the full additive noise at ``X``."""
    het = noise_std(model, X)
    if model.kind in ("none", "homoskedastic"):
        return het
    return np.sqrt(model.sigma**2 + np.asarray(het) ** 2)


def in_hetero_region(model: NoiseModel, X):
    """Membership in the elevated-noise regions (the 'partial' evaluation set)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.kind == "hetero_bumps_1d":
        t = X[:, 0]
        m = np.zeros(len(X), dtype=bool)
        for c, w in zip(model.centers, model.widths):
            m |= np.abs(t - c) <= w
        return m
    if model.kind == "hetero_regions_2d":
        return region_signed_distance(model.scenario, X) >= 0.0
    return noise_std(model, X) > 0.0


@dataclass
class LabeledSplit:
    problem: str
    noise: NoiseModel
    seed: int | None
    train_x: np.ndarray
    train_u: np.ndarray
    cal_x: np.ndarray
    cal_u: np.ndarray
    test_x: np.ndarray
    test_u: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return len(self.train_u), len(self.cal_u), len(self.test_u)

    def part(self, name):
        return getattr(self, f"{name}_x"), getattr(self, f"{name}_u")


def _draw(problem, noise, n, rng):
    X = sample_uniform(problem, n, rng)
    u = exact_solution(problem, X) if n else np.zeros(0)
    if noise.kind != "none" and n:
        u = u + noise.sigma * rng.standard_normal(n)
        if noise.kind != "homoskedastic":
            u = u + noise_std(noise, X) * rng.standard_normal(n)
    return X, np.asarray(u, dtype=np.float64)


def sample_dataset(problem: PdeProblem, n_train, n_cal, n_test, noise: NoiseModel, seed) -> LabeledSplit:
    """Draw train/cal/test sets i.i.d. uniform over the domain.

    Each part uses its own RNG stream spawned from ``seed``, so sizes of one
    part never perturb the draws of another.
    """
    counts = (int(n_train), int(n_cal), int(n_test))
    if min(counts) < 0:
        raise ConfigError(f"sample counts must be non-negative, got {counts}")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    parts = [_draw(problem, noise, n, rng) for n, rng in zip(counts, streams)]
    (trx, tru), (cx, cu), (tx, tu) = parts
    return LabeledSplit(problem.name, noise, seed, trx, tru, cx, cu, tx, tu)


def grid_test_set(problem: PdeProblem, n, noise: NoiseModel, seed):
    """Evenly spaced 1D test grid with noise drawn like the random splits."""
    if problem.dim != 1:
        raise ConfigError("grid test sets are only defined for 1D problems")
    lo, hi = problem.domain[0]
    X = np.linspace(lo, hi, n + 2)[1:-1, None]
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])
    u = exact_solution(problem, X)
    if noise.kind != "none":
        u = u + noise.sigma * rng.standard_normal(n)
        if noise.kind != "homoskedastic":
            u = u + noise_std(noise, X) * rng.standard_normal(n)
    return X, u


# persistence ------------------------------------------------------------------


def _sidecar(path):
    return Path(path).with_suffix(".json")


def save_split(split: LabeledSplit, path):
    """Write ``path`` (CSV: split,x1..xd,u) and a JSON metadata sidecar next to it."""
    path = Path(path)
    d = split.train_x.shape[1] if split.train_x.ndim == 2 else 1
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split"] + [f"x{i + 1}" for i in range(d)] + ["u"])
        for name in ("train", "cal", "test"):
            X, u = split.part(name)
            for xi, ui in zip(X, u):
                w.writerow([name] + [repr(float(v)) for v in xi] + [repr(float(ui))])
    meta = {
        "problem": split.problem,
        "dim": d,
        "seed": split.seed,
        "noise": split.noise.to_dict(),
        "sizes": dict(zip(("train", "cal", "test"), split.sizes)),
        "meta": split.meta,
    }
    with open(_sidecar(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_split(path) -> LabeledSplit:
    path = Path(path)
    try:
        with open(_sidecar(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"missing metadata sidecar {_sidecar(path)}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed metadata sidecar: {e.msg}", line=e.lineno) from None
    for key in ("problem", "dim", "noise", "sizes"):
        if key not in meta:
            raise ParseError("metadata sidecar incomplete", field=key)
    d = int(meta["dim"])
    cols = ["split"] + [f"x{i + 1}" for i in range(d)] + ["u"]
    rows = {"train": ([], []), "cal": ([], []), "test": ([], [])}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty data file", line=1)
        for c in cols:
            if c not in header:
                raise ParseError("missing column", line=1, field=c)
        idx = [header.index(c) for c in cols]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            name = row[idx[0]]
            if name not in rows:
                raise ParseError(f"unknown split label {name!r}", line=lineno, field="split")
            vals = []
            for c, j in zip(cols[1:], idx[1:]):
                try:
                    vals.append(float(row[j]))
                except ValueError:
                    raise ParseError(f"not a number: {row[j]!r}", line=lineno, field=c) from None
            rows[name][0].append(vals[:-1])
            rows[name][1].append(vals[-1])
    arrays = {}
    for name, (xs, us) in rows.items():
        if len(us) != int(meta["sizes"][name]):
            raise ParseError(f"{name} has {len(us)} rows, sidecar says {meta['sizes'][name]}", field=name)
        arrays[f"{name}_x"] = np.array(xs, dtype=np.float64).reshape(-1, d)
        arrays[f"{name}_u"] = np.array(us, dtype=np.float64)
    get_problem(meta["problem"])
    return LabeledSplit(
        meta["problem"], NoiseModel.from_dict(meta["noise"]), meta.get("seed"), meta=meta.get("meta", {}), **arrays
    )
