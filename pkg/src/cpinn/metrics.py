"""Empirical coverage, average coverage deviation (ACD) and sharpness."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyInputError

log = logging.getLogger(__name__)

# 19 equally spaced significance levels 0.05, 0.10, ..., 0.95
ALPHA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))

CSV_COLUMNS = ("Type", "Model", "Expected", "Empirical", "ACD", "Sharpness")


def _test_arrays(test):
    X, u = (test.test_x, test.test_u) if hasattr(test, "test_x") else test
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    u = np.asarray(u, dtype=np.float64).ravel()
    if len(u) == 0:
        raise EmptyInputError("test set is empty")
    return X, u


def _bounds_fn(predictor, X):
    """Return ``alpha -> (lower, upper)`` reusing one centre/scale evaluation."""
    if hasattr(predictor, "evaluate") and hasattr(predictor, "multiplier"):
        c, s = predictor.evaluate(X)
        return lambda a: (c - predictor.multiplier(a) * s, c + predictor.multiplier(a) * s)
    return lambda a: predictor.interval(X, a)


def covered(lower, upper, u):
    """Closed-interval membership ``lower <= u <= upper``."""
    return (lower <= u) & (u <= upper)


def coverage(predictor, test, alpha) -> float:
    X, u = _test_arrays(test)
    lo, hi = _bounds_fn(predictor, X)(alpha)
    return float(covered(lo, hi, u).mean())


def coverage_curve(predictor, test, grid=ALPHA_GRID):
    """Empirical coverage at each level of ``grid``."""
    X, u = _test_arrays(test)
    bounds = _bounds_fn(predictor, X)
    return np.array([covered(*bounds(a), u).mean() for a in grid])


def acd(predictor, test, grid=ALPHA_GRID) -> float:
    """Mean of ``|coverage(alpha_k) - (1 - alpha_k)|`` over the grid."""
    cov = coverage_curve(predictor, test, grid)
    return float(np.mean(np.abs(cov - (1.0 - np.asarray(grid)))))


def sharpness(predictor, test, alpha) -> float:
    """Mean interval width; ``inf`` when any interval is unbounded."""
    X, _ = _test_arrays(test)
    lo, hi = _bounds_fn(predictor, X)(alpha)
    w = hi - lo
    if not np.isfinite(w).all():
        return math.inf
    return float(w.mean())


def region_filter(test, predicate):
    """Subset of a test set where ``predicate(X)`` holds, or None when empty."""
    X, u = _test_arrays(test)
    keep = np.asarray(predicate(X), dtype=bool)
    if not keep.any():
        log.warning("region filter selected no test points; metrics for this region are absent")
        return None
    return X[keep], u[keep]


@dataclass
class MetricsReport:
    """Metrics of one predictor on one evaluation region."""

    model: str
    stage: str
    region: str
    alpha: float
    expected: float
    empirical: float
    acd: float
    sharpness: float
    n_test: int
    curve: list = field(default_factory=list)
    grid: list = field(default_factory=lambda: list(ALPHA_GRID))

    @property
    def sharpness_infinite(self) -> bool:
        return not math.isfinite(self.sharpness)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sharpness"] = self.sharpness if math.isfinite(self.sharpness) else "inf"
        d["sharpness_infinite"] = self.sharpness_infinite
        return d

    def csv_row(self) -> list:
        sharp = f"{self.sharpness:.4f}" if math.isfinite(self.sharpness) else "inf"
        return [self.model, self.stage, f"{self.expected:.2f}", f"{self.empirical:.2f}", f"{self.acd:.4f}", sharp]


def evaluate(predictor, test, alpha, model="", stage="", region="global", grid=ALPHA_GRID) -> MetricsReport:
    """Coverage at ``alpha``, the coverage curve, ACD and sharpness in one pass."""
    X, u = _test_arrays(test)
    bounds = _bounds_fn(predictor, X)
    curve = [float(covered(*bounds(a), u).mean()) for a in grid]
    lo, hi = bounds(alpha)
    width = hi - lo
    sharp = float(width.mean()) if np.isfinite(width).all() else math.inf
    return MetricsReport(
        model=model,
        stage=stage,
        region=region,
        alpha=float(alpha),
        expected=round(1.0 - float(alpha), 10),
        empirical=float(covered(lo, hi, u).mean()),
        acd=float(np.mean(np.abs(np.asarray(curve) - (1.0 - np.asarray(grid))))),
        sharpness=sharp,
        n_test=int(len(u)),
        curve=curve,
        grid=[float(a) for a in grid],
    )


def write_reports_json(reports, path, extra=None):
    payload = {"reports": [r.to_dict() for r in reports]}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports_csv(reports, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow(r.csv_row())
