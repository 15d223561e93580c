"""Conformal calibration of uncertainty estimates for physics-informed neural networks.

Modules:

    diff_engine   reverse-mode graph plus forward derivative channels through MLPs
    network       tanh MLP parameters, initialization, dropout masks
    problems      benchmark PDEs, exact solutions, collocation grids
    datagen       noise models and train/cal/test splits
    training      composite PINN loss and Adam
    uq_baselines  geometric/latent distance and MC-dropout scale estimators
    bayesian      mean-field VI and HMC baselines
    conformal     vanilla, scaled and local conformal calibration
    metrics       coverage, ACD and sharpness
    pipeline/cli  experiment runner
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    CpinnError,
    DomainError,
    EmptyInputError,
    NonFiniteError,
    ParseError,
    ShapeError,
    UnsupportedPrimitiveError,
)
