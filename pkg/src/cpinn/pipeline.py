"""Experiment pipeline: generate data, train, attach a baseline, calibrate, evaluate.

Each stage reads the artifacts of the previous ones from the run directory,
so the CLI can run stages one at a time or all together with identical
results. Artifacts:

    config.json            resolved experiment config
    data.csv / data.json   train/cal/test split and metadata
    params.json            trained network (MAP fit for HMC, unused for VI)
    variational.json       VI posterior (VI only)
    hmc_samples.json       retained HMC draws (HMC only)
    loss_trace.csv         per-epoch losses
    quantile_net.json      local CP quantile network (cp.mode = local)
    calibration.json       calibration scores and quantiles per predictor
    metrics.json / .csv    MetricsReports
    coverage_curve.csv     per-alpha coverage of every predictor/region
    widths.csv             interval widths on a dense grid
    intervals.svg / widths.svg, coverage.svg
"""

from __future__ import annotations

import csv
import json
import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bayesian as bayes
from . import conformal as cp
from . import metrics as mt
from . import svg
from .config import ExperimentConfig, shipped_config
from .datagen import LabeledSplit, grid_test_set, in_hetero_region, load_split, sample_dataset, save_split
from .errors import ConfigError, CpinnError
from .network import MlpParameters, init_xavier
from .problems import exact_solution, get_problem, make_collocation
from .training import LossContext, train_adam
from .uq_baselines import config_hash, dropout_model, gd_model, ld_model

log = logging.getLogger(__name__)

STAGES = ("gen-data", "train", "calibrate", "eval")
STAGE_NAMES = {"raw": "Before CP", "vanilla": "After CP", "scaled": "After CP", "local": "After Local CP"}


class StageError(CpinnError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def _seed(cfg, stream):
    return np.random.SeedSequence([cfg.seed, stream])


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path, stage):
    path = Path(path)
    if not path.exists():
        raise StageError(stage, f"missing artifact {path.name} in {path.parent}; run the earlier stages first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Run:
    cfg: ExperimentConfig
    out: Path
    fast: bool = False
    cache_dir: Path | None = None

    def __post_init__(self):
        self.out = Path(self.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.problem = get_problem(self.cfg.problem, self.cfg.problem_params)

    # -- stage 1 ---------------------------------------------------------------
    def generate_data(self) -> LabeledSplit:
        c = self.cfg
        d = c.data
        noise = c.noise_model()
        n_test = 0 if d["test_grid"] else int(d["n_test"])
        split = sample_dataset(self.problem, d["n_train"], d["n_cal"], n_test, noise, c.seed)
        if d["test_grid"]:
            split.test_x, split.test_u = grid_test_set(self.problem, int(d["n_test"]), noise, c.seed)
            split.meta["test_design"] = "grid"
        else:
            split.meta["test_design"] = "uniform"
        save_split(split, self.out / "data.csv")
        self.cfg.save(self.out / "config.json")
        return split

    def split(self) -> LabeledSplit:
        if not (self.out / "data.csv").exists():
            raise StageError("train", f"missing artifact data.csv in {self.out}; run gen-data first")
        return load_split(self.out / "data.csv")

    # -- stage 2 ---------------------------------------------------------------
    def _train_key(self, train_cfg, extra):
        c = self.cfg
        return config_hash(
            {
                "problem": c.problem,
                "params": c.problem_params,
                "data": c.data,
                "colloc": c.collocation,
                "dims": c.layer_dims(),
                "train": train_cfg.to_dict(),
                "extra": extra,
            }
        )

    def _cached(self, key, name):
        if self.cache_dir is None:
            return None
        p = Path(self.cache_dir) / f"{key}_{name}"
        return p if p.exists() else None

    def _store(self, key, name, src):
        if self.cache_dir is not None:
            Path(self.cache_dir).mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, Path(self.cache_dir) / f"{key}_{name}")

    def train(self):
        c = self.cfg
        split = self.split()
        ctx = LossContext(self.problem, split.train_x, split.train_u, make_collocation(self.problem, c.collocation))
        dims = c.layer_dims()
        init = init_xavier(dims, c.seed)
        kind = c.baseline["kind"]
        tcfg = c.train_config(self.fast)
        if kind == "Dropout" and tcfg.keep_prob is None:
            tcfg.keep_prob = float(c.baseline["keep_prob"])

        if kind == "VI":
            tcfg.epochs = c.vi_epochs(self.fast)
            vi = bayes.VIConfig(c.baseline["prior_std"], c.likelihood_noise(), c.baseline["sigma_init"])
            key = self._train_key(tcfg, {"vi": vi.__dict__})
            hit = self._cached(key, "variational.json")
            if hit:
                shutil.copyfile(hit, self.out / "variational.json")
                shutil.copyfile(self._cached(key, "loss_trace.csv"), self.out / "loss_trace.csv")
                return
            vp, report = bayes.train_vi(init, ctx, tcfg, vi)
            _write_json(self.out / "variational.json", vp.to_dict())
            self._write_trace(report)
            self._store(key, "variational.json", self.out / "variational.json")
            self._store(key, "loss_trace.csv", self.out / "loss_trace.csv")
            return

        key = self._train_key(tcfg, {})
        hit = self._cached(key, "params.json")
        if hit:
            shutil.copyfile(hit, self.out / "params.json")
            shutil.copyfile(self._cached(key, "loss_trace.csv"), self.out / "loss_trace.csv")
            params = MlpParameters.load(self.out / "params.json")
        else:
            params, report = train_adam(init, ctx, tcfg)
            params.save(self.out / "params.json")
            self._write_trace(report)
            self._store(key, "params.json", self.out / "params.json")
            self._store(key, "loss_trace.csv", self.out / "loss_trace.csv")

        if kind == "HMC":
            h = c.baseline["hmc"]
            hcfg = bayes.HMCConfig(**h, seed=int(_seed(c, 4).generate_state(1)[0]))
            samples = bayes.sample_hmc(params, ctx, tcfg, hcfg, c.likelihood_noise(), c.baseline["prior_std"])
            samples.save(self.out / "hmc_samples.json")

    def _write_trace(self, report):
        with open(self.out / "loss_trace.csv", "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerows(report.trace_rows())

    # -- baseline ----------------------------------------------------------------
    def uncertainty_model(self, split=None):
        c = self.cfg
        split = split or self.split()
        kind = c.baseline["kind"]
        b = c.baseline
        prov = {"seed": c.seed, "config": config_hash(c.to_dict())}
        if kind == "VI":
            vp = bayes.VariationalParams.from_dict(_read_json(self.out / "variational.json", "calibrate"))
            return bayes.bayes_model(vp, "VI", int(b["n_predict"]), _seed(c, 5), prov)
        if kind == "HMC":
            samples = bayes.PosteriorSamples.from_dict(_read_json(self.out / "hmc_samples.json", "calibrate"))
            return bayes.bayes_model(samples, "HMC", int(b["n_predict"]), _seed(c, 5), prov)
        params = MlpParameters.from_dict(_read_json(self.out / "params.json", "calibrate"))
        if kind == "GD":
            return gd_model(params, split.train_x, int(b["K"]), prov)
        if kind == "LD":
            return ld_model(params, split.train_x, int(b["K"]), b["neighbors"], prov)
        return dropout_model(params, int(b["n_mc"]), float(b["keep_prob"]), _seed(c, 3), prov)

    # -- stage 3 ---------------------------------------------------------------
    def predictors(self, split=None, refit=True):
        """``{name: IntervalPredictor}`` for the raw interval and the configured CP mode."""
        c = self.cfg
        split = split or self.split()
        model = self.uncertainty_model(split)
        alpha = float(c.cp["alpha"])
        cal = (split.cal_x, split.cal_u)
        preds = {"raw": cp.raw_predictor(model)}
        mode = c.cp["mode"]
        if mode == "vanilla":
            preds["vanilla"] = cp.calibrate_vanilla(model, cal, alpha)
        elif mode in ("scaled", "local"):
            preds["scaled"] = cp.calibrate_scaled(model, cal, alpha)
        if mode == "local":
            qpath = self.out / "quantile_net.json"
            if refit or not qpath.exists():
                q = c.cp["quantile_net"]
                q_alpha = float(q["alpha"] if q["alpha"] is not None else alpha)
                scores = cp.training_scores(model, split.train_x, split.train_u)
                g = cp.fit_quantile_net(
                    split.train_x, scores, q_alpha, q["hidden"], int(q["steps"]), float(q["lr"]),
                    seed=int(_seed(c, 6).generate_state(1)[0]),
                    bounds=(self.problem.lower, self.problem.upper),
                )
                _write_json(qpath, g.to_dict())
            g = cp.QuantileNet.from_dict(_read_json(qpath, "calibrate"))
            preds["local"] = cp.calibrate_local(model, g, cal, alpha)
        return model, preds

    def calibrate(self):
        _, preds = self.predictors(refit=True)
        _write_json(self.out / "calibration.json", {k: p.to_dict() for k, p in preds.items()})
        return preds

    # -- stage 4 ---------------------------------------------------------------
    def regions(self, split):
        out = {}
        X, u = split.test_x, split.test_u
        for r in self.cfg.eval["regions"]:
            if r == "global":
                out[r] = (X, u)
            else:
                sub = mt.region_filter((X, u), lambda Z: in_hetero_region(split.noise, Z))
                if sub is not None:
                    out[r] = sub
        return out

    def evaluate(self):
        c = self.cfg
        split = self.split()
        if not (self.out / "calibration.json").exists():
            raise StageError("eval", f"missing artifact calibration.json in {self.out}; run calibrate first")
        model, preds = self.predictors(split, refit=False)
        alpha = float(c.cp["alpha"])
        reports = []
        for region, test in self.regions(split).items():
            for name, p in preds.items():
                reports.append(mt.evaluate(p, test, alpha, model=model.kind, stage=STAGE_NAMES[name], region=region))
        extra = {
            "name": c.name,
            "problem": c.problem,
            "baseline": model.kind,
            "cp_mode": c.cp["mode"],
            "alpha": alpha,
            "fast": self.fast,
            "sizes": dict(zip(("train", "cal", "test"), split.sizes)),
        }
        mt.write_reports_json(reports, self.out / "metrics.json", extra)
        mt.write_reports_csv(reports, self.out / "metrics.csv")
        self._write_curves(reports)
        self._write_widths(model, preds, split, alpha)
        return reports

    def _write_curves(self, reports):
        write_curve_csv(reports, self.out / "coverage_curve.csv")
        curves = {f"{r.stage} ({r.region})": r.curve for r in reports}
        (self.out / "coverage.svg").write_text(svg.coverage_plot(mt.ALPHA_GRID, curves, self.cfg.name), encoding="utf-8")

    def dense_grid(self):
        p = self.problem
        n = self.cfg.eval["grid_points"]
        if p.dim == 1:
            n = int(n or 400)
            lo, hi = p.domain[0]
            return np.linspace(lo, hi, n)[:, None], None
        n = int(n or 41)
        axes = [np.linspace(lo, hi, n) for lo, hi in p.domain[:2]]
        A, B = np.meshgrid(*axes, indexing="ij")
        cols = [A.ravel(), B.ravel()]
        if p.dim == 3:
            # mid-plane slice of the cube
            cols.append(np.full(A.size, 0.5 * (p.domain[2][0] + p.domain[2][1])))
        return np.stack(cols, axis=1), axes

    def _write_widths(self, model, preds, split, alpha):
        X, axes = self.dense_grid()
        names = list(preds)
        widths = {}
        centers = {}
        for name, p in preds.items():
            cen, scale = p.evaluate(X)
            widths[name] = 2.0 * p.multiplier(alpha) * scale
            centers[name] = cen
        with open(self.out / "widths.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(X.shape[1])] + ["center"] + [f"width_{n}" for n in names])
            cen = centers[names[0]]
            for i in range(len(X)):
                w.writerow([repr(float(v)) for v in X[i]] + [repr(float(cen[i]))] + [repr(float(widths[n][i])) for n in names])
        if axes is None:
            truth = exact_solution(self.problem, X)
            bands = {}
            for n in names:
                h = widths[n] / 2.0
                bands[STAGE_NAMES[n]] = (centers[n], centers[n] - h, centers[n] + h)
            text = svg.interval_plot(X[:, 0], truth, bands, (split.test_x[:, 0], split.test_u), self.cfg.name)
            (self.out / "intervals.svg").write_text(text, encoding="utf-8")
        else:
            last = names[-1]
            V = widths[last].reshape(len(axes[0]), len(axes[1]))
            title = f"{STAGE_NAMES[last]} width"
            (self.out / "widths.svg").write_text(svg.heatmap(axes[0], axes[1], V, title), encoding="utf-8")


def write_curve_csv(reports, path):
    """Rows: one per alpha level; columns: expected coverage then each predictor/region."""
    grid = reports[0].grid
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "expected"] + [f"{r.stage}|{r.region}" for r in reports])
        for i, a in enumerate(grid):
            w.writerow([f"{a:.2f}", f"{1 - a:.2f}"] + [f"{r.curve[i]:.6f}" for r in reports])


def run_experiment(cfg: ExperimentConfig, out=None, fast=False, cache_dir=None, stages=STAGES):
    """Run the requested stages in order; raises ``StageError`` naming the failing stage."""
    out = Path(out or cfg.output_dir or f"runs/{cfg.name}")
    run = Run(cfg, out, fast, cache_dir)
    actions = {
        "gen-data": run.generate_data,
        "train": run.train,
        "calibrate": run.calibrate,
        "eval": run.evaluate,
    }
    result = None
    for st in stages:
        try:
            result = actions[st]()
        except StageError:
            raise
        except CpinnError as e:
            raise StageError(st, f"{type(e).__name__}: {e}") from e
    return run, result


# table reproduction ---------------------------------------------------------------

TABLES = {
    "allen2d": ["allen2d_gd", "allen2d_ld", "allen2d_dropout", "allen2d_vi", "allen2d_hmc"],
    "helm3d": ["helm3d_gd", "helm3d_ld", "helm3d_dropout"],
    "local1d": ["osc1d_local"],
}


def reproduce_table(table, out, fast=False):
    """Run every row of a results table; returns the list of CSV rows written to ``out/<table>.csv``."""
    if table not in TABLES:
        raise ConfigError(f"unknown table {table!r}; valid options: {', '.join(TABLES)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "_cache"
    local = table == "local1d"
    header = ["Region"] if local else []
    header += list(mt.CSV_COLUMNS)
    rows = []
    for name in TABLES[table]:
        cfg = shipped_config(name)
        try:
            _, reports = run_experiment(cfg, out / name, fast, cache)
        except CpinnError as e:
            log.error("row %s failed: %s", name, e)
            rows.append(([""] if local else []) + [cfg.baseline["kind"], "error", "", "", "", str(e)])
            continue
        for r in reports:
            if local and r.stage == "Before CP":
                continue
            row = r.csv_row()
            if local:
                row[1] = {"After CP": "CP", "After Local CP": "Local CP"}[r.stage]
                if r.region == "partial":
                    row[5] = ""  # not comparable where CP is uncalibrated
                row = [r.region] + row
            rows.append(row)
    with open(out / f"{table}.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return header, rows


def export_curves(run_dir):
    """Rebuild ``coverage_curve.csv`` and ``coverage.svg`` from a run's ``metrics.json``."""
    run_dir = Path(run_dir)
    path = run_dir / "metrics.json"
    if not path.exists():
        raise StageError("export-curves", f"no metrics.json in {run_dir}; run eval first")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    reports = []
    for d in data.get("reports", []):
        d = dict(d)
        d.pop("sharpness_infinite", None)
        if d.get("sharpness") == "inf":
            d["sharpness"] = math.inf
        reports.append(mt.MetricsReport(**d))
    if not reports:
        raise StageError("export-curves", f"metrics.json in {run_dir} holds no reports")
    write_curve_csv(reports, run_dir / "coverage_curve.csv")
    curves = {f"{r.stage} ({r.region})": r.curve for r in reports}
    (run_dir / "coverage.svg").write_text(svg.coverage_plot(mt.ALPHA_GRID, curves, data.get("name", "")), encoding="utf-8")
    return run_dir / "coverage_curve.csv", run_dir / "coverage.svg"
