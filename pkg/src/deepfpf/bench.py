"""Experiment drivers, the gain m.s.e metric and report serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import density, nn
from .density import Coordinate, Mixture1D, ProductBimodalGauss
from .jobs import map_jobs
from .solvers import DiffusionMapSolver, NeuralSolver, make_solver
from .train import TrainConfig, train_gain

EVAL_SEED_OFFSET = 1_000_003
TEST_SEED_OFFSET = 2_000_003
PAPER_DM_EPS = {1: 0.1, 2: 0.1, 5: 0.2, 10: 1.0}
# (hidden layers, width) for the three equal-size architectures
PAPER_ARCHITECTURES = ((2, 64), (5, 32), (17, 16))


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    def add_table(self, name, rows):
        self.tables[name] = [dict(r) for r in rows]

    def check_finite(self):
        """Names of cells holding NaN/Inf; empty when the report is clean."""
        bad = []
        for name, rows in self.tables.items():
            for k, row in enumerate(rows):
                for col, val in row.items():
                    if isinstance(val, float) and not math.isfinite(val):
                        bad.append(f"{name}[{k}].{col}")
        return bad

    def to_json(self):
        return json.dumps({
            "experiment": self.experiment,
            "config": self.config,
            "summary": self.summary,
            "environment": self.environment,
            "tables": sorted(self.tables),
        }, indent=2, sort_keys=True)

    def table_csv(self, name):
        rows = self.tables[name]
        buf = io.StringIO()
        if not rows:
            return ""
        cols = list(rows[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in cols)])
        return buf.getvalue()

    def write(self, outdir):
        """report.json plus ``<table>.csv`` for every table; returns written paths."""
        os.makedirs(outdir, exist_ok=True)
        paths = [os.path.join(outdir, "report.json")]
        with open(paths[0], "w") as fh:
            fh.write(self.to_json())
        for name in self.tables:
            path = os.path.join(outdir, f"{name}.csv")
            with open(path, "w") as fh:
                fh.write(f"# experiment={self.experiment} config={json.dumps(self.config, sort_keys=True)}\n")
                fh.write(self.table_csv(name))
            paths.append(path)
        return paths

    @classmethod
    def read(cls, outdir):
        with open(os.path.join(outdir, "report.json")) as fh:
            meta = json.load(fh)
        report = cls(meta["experiment"], meta["config"], summary=meta["summary"], environment=meta["environment"])
        for name in meta["tables"]:
            with open(os.path.join(outdir, f"{name}.csv")) as fh:
                lines = [ln for ln in fh if not ln.startswith("#")]
            report.tables[name] = [
                {k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(lines)
            ]
        return report


def _parse_cell(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def environment_stamp(seed, deterministic):
    return {
        "seed": seed,
        "deterministic": deterministic,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


# ---------------------------------------------------------------------------
# gain m.s.e


def gain_mse(K_alg, K_exact):
    """mean_i |K_alg(Y_i) - K_exact(Y_i)|^2."""
    diff = np.asarray(K_alg) - np.asarray(K_exact)
    return float(np.mean(np.sum(diff.reshape(len(diff), -1) ** 2, axis=1)))


def _mse_one(args):
    solver, model, h, n_eval, seed = args
    ens = density.sample(model, n_eval, seed)
    Y = density.sample(model, n_eval, seed + EVAL_SEED_OFFSET).positions
    if isinstance(solver, NeuralSolver):
        solver = NeuralSolver(solver.cfg.replace_with(seed=seed), solver.warm_start, solver.warm_T)
    solver.fit(ens, h, density_model=model)
    return gain_mse(solver.evaluate(Y), density.exact_gain(model, h, Y))


def mse_gain(solver, model, h, n_eval=1000, seeds=(0,), workers=1):
    """Gain m.s.e on fresh samples, averaged over ``seeds``.

    For each seed the solver is fitted on ``n_eval`` particles and scored on
    an independent draw of ``n_eval`` points.
    """
    vals = map_jobs(_mse_one, [(solver, model, h, n_eval, s) for s in seeds], workers)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# dimension sweep


def _neural_curve(args):
    model, h, cfg, n_eval, seed, every = args
    ens = density.sample(model, n_eval, seed)
    Y = density.sample(model, n_eval, seed + EVAL_SEED_OFFSET).positions
    K_exact = density.exact_gain(model, h, Y)
    curve = []

    def record(it, params):
        if it % every == 0:
            curve.append((it, gain_mse(nn.gain(params, Y), K_exact)))
        return False

    train_gain(ens, h, cfg.replace_with(N=n_eval, seed=seed), callback=record)
    return curve


def dimension_sweep(dims=(1, 2, 5, 10), cfg=None, seeds=range(20), n_eval=1000,
                    dm_eps=None, curve_every=500, workers=1):
    """Neural and diffusion-map gain m.s.e on the product density for each d."""
    cfg = cfg or TrainConfig()
    dm_eps = dict(dm_eps or PAPER_DM_EPS)
    seeds = list(seeds)
    h = Coordinate(0)
    report = ExperimentReport("dimension", {
        "dims": list(dims), "seeds": seeds, "n_eval": n_eval, "dm_eps": {str(k): v for k, v in dm_eps.items()},
        "train": _cfg_dict(cfg), "curve_every": curve_every,
    })
    nmse, dmse, curve_rows = {}, {}, []
    for d in dims:
        model = ProductBimodalGauss(d)
        curves = map_jobs(_neural_curve, [(model, h, cfg, n_eval, s, curve_every) for s in seeds], workers)
        its = [it for it, _ in curves[0]]
        mean_curve = np.mean([[v for _, v in c] for c in curves], axis=0)
        for it, v in zip(its, mean_curve):
            curve_rows.append({"d": d, "iteration": it, "mse": float(v)})
        nmse[d] = float(mean_curve[-1])
        dmse[d] = mse_gain(DiffusionMapSolver(dm_eps[d]), model, h, n_eval, seeds, workers)
    report.add_table("neural_mse_by_dim", [{"d": d, "mse": v} for d, v in nmse.items()])
    report.add_table("dm_mse_by_dim", [{"d": d, "eps": dm_eps[d], "mse": v} for d, v in dmse.items()])
    report.add_table("neural_mse_vs_iteration", curve_rows)
    lo, hi = min(dims), max(dims)
    report.summary = {
        "neural_spread": max(nmse.values()) / min(nmse.values()),
        "neural_growth": nmse[hi] / nmse[lo],
        "dm_growth": dmse[hi] / dmse[lo],
    }
    return report


# ---------------------------------------------------------------------------
# over-fitting


def overfit_experiment(cfg=None, seed=0, n_test=1000, mini_batch=10):
    """Full-batch (M = N) versus mini-batch training on the same particles."""
    cfg = (cfg or TrainConfig()).replace_with(seed=seed)
    model = Mixture1D.bimodal(0.2)
    h = Coordinate(0)
    ens = density.sample(model, cfg.N, seed)
    test = density.sample(model, n_test, seed + TEST_SEED_OFFSET)
    report = ExperimentReport("overfit", {"train": _cfg_dict(cfg), "seed": seed, "n_test": n_test,
                                          "mini_batch": mini_batch})
    for name, M in (("full_batch", cfg.N), ("mini_batch", mini_batch)):
        _, trace = train_gain(ens, h, cfg.replace_with(M=M), test_ensemble=test)
        report.add_table(f"loss_{name}", [
            {"iteration": i, "train_loss": a, "test_loss": b}
            for i, a, b in zip(trace.iteration, trace.train_loss, trace.test_loss)
        ])
        test_loss = np.array(trace.test_loss)
        k = int(np.argmin(test_loss))
        report.summary[name] = {
            "M": M,
            "min_test_loss": float(test_loss[k]),
            "min_test_iteration": trace.iteration[k],
            "final_test_loss": float(test_loss[-1]),
            "final_train_loss": trace.train_loss[-1],
            "initial_train_loss": trace.train_loss[0],
            "final_gap": float(test_loss[-1] - trace.train_loss[-1]),
        }
    return report


# ---------------------------------------------------------------------------
# runtime scaling


def _timed(fn, reps):
    fn()  # warm-up, excluded
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def loglog_slope(ns, times):
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def runtime_scaling(ns=(100, 200, 500, 1000, 2000, 5000), solvers=("neural", "diffusion-map"),
                    reps=5, cfg=None, dm_eps=0.1, seed=0):
    """Median-of-``reps`` fit time per (solver, N) and log-log slopes."""
    cfg = (cfg or TrainConfig()).replace_with(log_every=0, seed=seed)
    model = Mixture1D.bimodal(0.2)
    h = Coordinate(0)
    rows, slopes = [], []
    for name in solvers:
        medians = []
        for n in ns:
            ens = density.sample(model, n, seed)
            if name == "neural":
                run_cfg = cfg.replace_with(N=n)

                def fn():
                    train_gain(ens, h, run_cfg)
            else:
                solver = make_solver(name, eps=dm_eps)

                def fn():
                    solver.fit(ens, h)
            times = _timed(fn, reps)
            med = statistics.median(times)
            medians.append(med)
            rows.append({"solver": name, "N": n, "median_seconds": med,
                         "min_seconds": min(times), "max_seconds": max(times)})
        slopes.append({"solver": name, "slope": loglog_slope(ns, medians)})
    report = ExperimentReport("scaling", {"ns": list(ns), "solvers": list(solvers), "reps": reps,
                                          "train": _cfg_dict(cfg), "dm_eps": dm_eps, "seed": seed})
    report.add_table("timings", rows)
    report.add_table("slopes", slopes)
    report.summary = {r["solver"]: r["slope"] for r in slopes}
    return report


# ---------------------------------------------------------------------------
# bimodal gain reproduction and baseline comparison


def architecture_variants(hidden_layers, width, d=1):
    """Depth and parameter count under both readings of "k layers of width m".

    ``hidden`` treats k as hidden layers (depth k + 1); ``total`` as the depth.
    """
    return {
        "hidden": {"L": hidden_layers + 1, "params": nn.param_count(hidden_layers + 1, width, d)},
        "total": {"L": hidden_layers, "params": nn.param_count(hidden_layers, width, d) if hidden_layers >= 2 else None},
    }


def relative_l2_error(K, K_exact):
    """||K - K_exact|| / ||K_exact|| in L2 of the sampling density (Monte Carlo)."""
    return math.sqrt(gain_mse(K, K_exact) / gain_mse(np.zeros_like(K_exact), K_exact))


def architecture_disagreement(gains):
    """Largest pairwise mean-square gain difference over the mean square gain magnitude."""
    mag = float(np.mean([np.mean(np.sum(K**2, axis=1)) for K in gains]))
    pairs = [gain_mse(a, b) for i, a in enumerate(gains) for b in gains[i + 1:]]
    return max(pairs) / mag


def bimodal_experiment(cfg=None, seed=0, n_eval=20_000, grid=None):
    """Gain curves and errors of the default network, the equal-width architectures and baselines."""
    cfg = (cfg or TrainConfig()).replace_with(seed=seed)
    model = Mixture1D.bimodal(0.2)
    h = Coordinate(0)
    ens = density.sample(model, cfg.N, seed)
    Y = density.sample(model, n_eval, seed + EVAL_SEED_OFFSET).positions
    K_exact = density.exact_gain(model, h, Y)
    grid = np.linspace(-2.0, 2.0, 201) if grid is None else grid
    curves = {"x": grid, "exact": density.exact_gain_1d(model, h, grid)}
    errors = []
    fits = {"default": cfg}
    for k, w in PAPER_ARCHITECTURES:
        fits[f"{k}x{w}"] = cfg.replace_with(L=k + 1, m=w)
    arch_gains, seconds = [], {}
    for name, c in fits.items():
        t0 = time.perf_counter()
        solver = NeuralSolver(c).fit(ens, h)
        seconds[name] = time.perf_counter() - t0
        K = solver.evaluate(Y)
        if name != "default":
            arch_gains.append(K)
        curves[name] = solver.evaluate(grid)[:, 0]
        errors.append({"solver": name, "L": c.L, "m": c.m, "params": nn.param_count(c.L, c.m, 1),
                       "mse": gain_mse(K, K_exact), "rel_l2": relative_l2_error(K, K_exact)})
    for name, solver in (("galerkin", make_solver("galerkin", degree=5)), ("diffusion-map", make_solver("dm", eps=0.1))):
        solver.fit(ens, h)
        K = solver.evaluate(Y)
        curves[name] = solver.evaluate(grid)[:, 0]
        errors.append({"solver": name, "L": 0, "m": 0, "params": 0,
                       "mse": gain_mse(K, K_exact), "rel_l2": relative_l2_error(K, K_exact)})
    report = ExperimentReport("bimodal", {"train": _cfg_dict(cfg), "seed": seed, "n_eval": n_eval})
    report.summary = {
        "default_rel_l2": errors[0]["rel_l2"],
        "default_seconds": seconds["default"],
        "architecture_disagreement": architecture_disagreement(arch_gains),
    }
    report.add_table("errors", errors)
    report.add_table("gain_curves", [{k: float(v[i]) for k, v in curves.items()} for i in range(len(grid))])
    report.add_table("architectures", [
        {"arch": f"{k}x{w}", "L_hidden_reading": v["hidden"]["L"], "params_hidden_reading": v["hidden"]["params"],
         "L_total_reading": v["total"]["L"], "params_total_reading": v["total"]["params"]}
        for (k, w), v in ((kw, architecture_variants(*kw)) for kw in PAPER_ARCHITECTURES)
    ])
    return report


def _baseline_one(args):
    cfg, seed, n_eval = args
    model = Mixture1D.bimodal(0.2)
    h = Coordinate(0)
    ens = density.sample(model, cfg.N, seed)
    Y = density.sample(model, n_eval, seed + EVAL_SEED_OFFSET).positions
    K_exact = density.exact_gain(model, h, Y)
    out = {"seed": seed}
    solvers = {
        "neural": NeuralSolver(cfg.replace_with(seed=seed)),
        "galerkin": make_solver("galerkin", degree=5),
        "diffusion-map": make_solver("dm", eps=0.1),
    }
    for name, solver in solvers.items():
        solver.fit(ens, h)
        out[name] = gain_mse(solver.evaluate(Y), K_exact)
    return out


def baseline_comparison(cfg=None, seeds=range(20), n_eval=1000, workers=1):
    """Per-seed gain m.s.e of neural, Galerkin (degree 5) and DM (eps 0.1) on the bimodal example."""
    cfg = cfg or TrainConfig()
    seeds = list(seeds)
    rows = map_jobs(_baseline_one, [(cfg, s, n_eval) for s in seeds], workers)
    report = ExperimentReport("baselines", {"train": _cfg_dict(cfg), "seeds": seeds, "n_eval": n_eval})
    report.add_table("mse_per_seed", rows)
    report.summary = {name: float(np.mean([r[name] for r in rows])) for name in ("neural", "galerkin", "diffusion-map")}
    return report


def _cfg_dict(cfg):
    return asdict(cfg)
