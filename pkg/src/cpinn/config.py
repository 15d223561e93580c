"""Experiment configuration: JSON schema, validation and round trip.

A config file is a JSON object with these keys (all but ``problem`` optional)::

    name          run label used in reports
    problem       Poisson1D | Oscillator1D | AllenCahn2D | Helmholtz3D
    problem_params  overrides of problem constants, e.g. {"lam": 0.05}
    seed          master seed (data, initialization, training, MC draws)
    data          {n_train, n_cal, n_test, test_grid, noise: {kind, sigma, b, centers, widths, scenario, sharpness}}
    collocation   {n_interior, n_boundary}
    architecture  {hidden: [widths]}
    train         TrainConfig fields (lambda_*, epochs, lr, lr_decay_factor, lr_decay_every, keep_prob)
    baseline      {kind: GD|LD|Dropout|VI|HMC, K, neighbors, n_mc, keep_prob,
                   prior_std, noise_std, sigma_init, n_predict, vi_epochs, hmc: {...}}
    cp            {mode: none|vanilla|scaled|local, alpha, quantile_net: {hidden, steps, lr, alpha}}
    eval          {regions: [global, partial], grid_points}
    output_dir    default output directory
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .problems import DEFAULT_COLLOCATION, PROBLEM_NAMES

BASELINES = ("GD", "LD", "Dropout", "VI", "HMC")
CP_MODES = ("none", "vanilla", "scaled", "local")
NO_BAYES = ("Helmholtz3D",)

_DEFAULT_HIDDEN = {
    "Poisson1D": [25, 35, 35, 25],
    "Oscillator1D": [64, 64, 64, 64],
    "AllenCahn2D": [16, 32, 64, 64, 64, 32, 16],
    "Helmholtz3D": [32, 64, 128, 128, 128, 64, 32],
}

_DEFAULT_DATA = {
    "Poisson1D": dict(n_train=60, n_cal=30, n_test=200, test_grid=True, noise={"kind": "homoskedastic", "sigma": 0.15}),
    "Oscillator1D": dict(
        n_train=300, n_cal=150, n_test=1000, test_grid=False, noise={"kind": "hetero_bumps_1d", "sigma": 0.05}
    ),
    "AllenCahn2D": dict(n_train=300, n_cal=100, n_test=100, test_grid=False, noise={"kind": "homoskedastic", "sigma": 0.05}),
    "Helmholtz3D": dict(n_train=600, n_cal=200, n_test=200, test_grid=False, noise={"kind": "homoskedastic", "sigma": 0.05}),
}

_BASELINE_DEFAULTS = {
    "kind": "GD",
    "K": 5,
    "neighbors": "input",
    "n_mc": 100,
    "keep_prob": 0.9,
    "prior_std": 1.0,
    "noise_std": None,  # None -> data noise sigma, else 0.1
    "sigma_init": 1e-3,
    "n_predict": 200,
    "vi_epochs": None,  # None -> train.epochs
    "hmc": {
        "step_size": 1e-3,
        "n_steps": 50,
        "n_burnin": 1000,
        "n_samples": 200,
        "thin": 5,
        "adapt": False,
        "target_accept": 0.65,
    },
}

_CP_DEFAULTS = {
    "mode": "scaled",
    "alpha": 0.05,
    "quantile_net": {"hidden": [32, 32], "steps": 5000, "lr": 1e-3, "alpha": None},
}

_EVAL_DEFAULTS = {"regions": ["global"], "grid_points": None}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}; known: {sorted(base)}")
        if isinstance(base[k], dict) and isinstance(v, dict) and base[k]:
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    problem: str
    name: str = ""
    problem_params: dict = field(default_factory=dict)
    seed: int = 0
    data: dict = field(default_factory=dict)
    collocation: dict = field(default_factory=dict)
    architecture: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    cp: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    output_dir: str = ""

    def __post_init__(self):
        if self.problem not in PROBLEM_NAMES:
            raise ConfigError(f"unknown problem {self.problem!r}; valid options: {', '.join(PROBLEM_NAMES)}")
        p = self.problem
        data_base = copy.deepcopy(_DEFAULT_DATA[p])
        noise_over = (self.data or {}).get("noise")
        self.data = _merge(data_base, {k: v for k, v in (self.data or {}).items() if k != "noise"}, "data.")
        if noise_over is not None:
            self.data["noise"] = dict(noise_over)
        self.collocation = _merge(dict(DEFAULT_COLLOCATION[p]), self.collocation, "collocation.")
        self.architecture = _merge({"hidden": list(_DEFAULT_HIDDEN[p])}, self.architecture, "architecture.")
        from .training import TrainConfig

        train_keys = {f.name for f in fields(TrainConfig)} - {"seed"}
        unknown = set(self.train or {}) - train_keys
        if unknown:
            raise ConfigError(f"unknown config key(s) {sorted('train.' + k for k in unknown)}; known: {sorted(train_keys)}")
        self.train = dict(self.train or {})
        self.baseline = _merge(_BASELINE_DEFAULTS, self.baseline, "baseline.")
        self.cp = _merge(_CP_DEFAULTS, self.cp, "cp.")
        self.eval = _merge(_EVAL_DEFAULTS, self.eval, "eval.")
        self.seed = int(self.seed)
        if not self.name:
            self.name = f"{p}_{self.baseline['kind']}"
        self.validate()

    def validate(self):
        kind = self.baseline["kind"]
        if kind not in BASELINES:
            raise ConfigError(f"unknown baseline kind {kind!r}; valid options: {', '.join(BASELINES)}")
        if kind in ("VI", "HMC") and self.problem in NO_BAYES:
            raise ConfigError(f"baseline {kind} is not available for {self.problem}; use GD, LD or Dropout")
        if self.cp["mode"] not in CP_MODES:
            raise ConfigError(f"unknown cp mode {self.cp['mode']!r}; valid options: {', '.join(CP_MODES)}")
        if not 0 < float(self.cp["alpha"]) < 1:
            raise ConfigError("cp.alpha must lie in (0, 1)")
        for r in self.eval["regions"]:
            if r not in ("global", "partial"):
                raise ConfigError(f"unknown evaluation region {r!r}; valid options: global, partial")
        for k in ("n_train", "n_cal", "n_test"):
            if int(self.data[k]) < 1:
                raise ConfigError(f"data.{k} must be positive")
        self.train_config()  # validates TrainConfig fields
        self.noise_model()

    # typed views ------------------------------------------------------------
    def train_config(self, fast=False):
        from .training import TrainConfig

        d = dict(self.train)
        d["seed"] = self.seed
        if fast:
            d["epochs"] = max(1, int(d.get("epochs", 1000)) // 10)
        return TrainConfig(**d)

    def vi_epochs(self, fast=False):
        n = self.baseline["vi_epochs"] or self.train.get("epochs", 1000)
        return max(1, int(n) // 10) if fast else int(n)

    def noise_model(self):
        from .datagen import NoiseModel

        return NoiseModel(**{"seed": self.seed, **self.data["noise"]})

    def layer_dims(self):
        from .problems import get_problem

        return (get_problem(self.problem).dim, *[int(h) for h in self.architecture["hidden"]], 1)

    def likelihood_noise(self):
        if self.baseline["noise_std"] is not None:
            return float(self.baseline["noise_std"])
        s = float(self.data["noise"].get("sigma", 0.0))
        return s if s > 0 else 0.1

    # serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s) {sorted(unknown)}; known: {sorted(known)}")
        if "problem" not in d:
            raise ConfigError("config is missing the 'problem' key")
        return cls(**copy.deepcopy(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")


def shipped_configs_dir() -> Path:
    return Path(__file__).resolve().parent / "configs"


def shipped_config(name: str) -> ExperimentConfig:
    path = shipped_configs_dir() / (name if name.endswith(".json") else name + ".json")
    if not path.exists():
        avail = sorted(p.stem for p in shipped_configs_dir().glob("*.json"))
        raise ConfigError(f"no shipped config {name!r}; available: {', '.join(avail)}")
    return ExperimentConfig.load(path)
