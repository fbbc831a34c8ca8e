"""Command-line front end: ``deepfpf {train-gain,experiment,validate}``.

Configuration files are plain ``key = value`` lines with ``#`` comments.
Every key must appear in ``SCHEMA``; anything else is rejected before any
work starts. Artifacts are computed in memory and written only once the
run has succeeded, so a failed run leaves the output directory untouched.

Exit status: 0 success, 2 configuration error, 3 numeric failure,
validate: number of failed properties (capped at 125).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench, density, flow, nn, validate
from .errors import ConfigError, DomainError, NumericError
from .jobs import default_workers
from .solvers import make_solver
from .train import TrainConfig, train_gain

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
MAX_EXIT = 125


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text):
        return [conv(t.strip()) for t in text.split(",") if t.strip()]
    return parse


def _eps_map(text):
    out = {}
    for item in text.split(","):
        k, _, v = item.partition(":")
        out[int(k)] = float(v)
    return out


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    # density / observation (train-gain, bimodal, baselines) and flow prior
    "density": (str, "bimodal"),
    "density.mean": (float, 0.0),
    "density.variance": (float, None),
    "density.d": (int, 1),
    "density.bimodal_variance": (float, 0.2),
    "density.gauss_variance": (float, 0.2),
    "density.weights": (_list(float), None),
    "density.means": (_list(float), None),
    "density.variances": (_list(float), None),
    "observation": (str, "coordinate"),
    "observation.index": (int, 0),
    "observation.c": (float, 0.0),
    "observation.radius": (float, 2.0),
    # TrainConfig overrides
    "train.L": (int, 4),
    "train.m": (int, 32),
    "train.alpha": (float, 0.3),
    "train.M": (int, 10),
    "train.N": (int, 100),
    "train.T": (int, 10_000),
    "train.lr": (float, 1e-4),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.replace": (_bool, False),
    "train.log_every": (int, 100),
    # gain curve written by train-gain (1D only)
    "grid.lo": (float, -2.0),
    "grid.hi": (float, 2.0),
    "grid.n": (int, 201),
    # experiments
    "experiment": (str, None),
    "seeds": (int, 20),
    "n_eval": (int, 1000),
    "n_test": (int, 1000),
    "mini_batch": (int, 10),
    "dims": (_list(int), [1, 2, 5, 10]),
    "dm.eps": (float, 0.1),
    "dm.eps_by_dim": (_eps_map, dict(bench.PAPER_DM_EPS)),
    "galerkin.degree": (int, 5),
    "curve_every": (int, 500),
    "scaling.ns": (_list(int), [100, 200, 500, 1000, 2000, 5000]),
    "scaling.reps": (int, 5),
    "scaling.solvers": (_list(str), ["neural", "diffusion-map"]),
    # flow
    "flow.steps": (int, 50),
    "flow.N": (int, 500),
    "flow.K": (int, 100),
    "flow.solvers": (_list(str), ["oracle", "neural", "galerkin", "diffusion-map"]),
    "flow.warm_start": (_bool, True),
    "flow.warm_T": (int, 1000),
    "flow.psi": (str, "x_pos"),
    "flow.snapshot_times": (_list(float), [0.0, 0.5, 1.0]),
    "flow.likelihood": (str, "quadratic_well"),
    "prior": (str, "gaussian"),
    "prior.mean": (float, 0.0),
    "prior.variance": (float, 1.0),
}

EXPERIMENTS = ("overfit", "dimension", "scaling", "flow", "bimodal", "baselines")


def parse_config_text(text):
    """``key = value`` lines to a dict of raw strings; rejects unknown or repeated keys."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        raw[key] = value
    return raw


def resolve_config(raw, seed=None):
    """Apply parsers and defaults. ``seed`` (from --seed) overrides the file."""
    cfg = {}
    for key, (conv, default) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        else:
            cfg[key] = default
    if seed is not None:
        cfg["seed"] = seed
    if cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def load_config(path, seed=None):
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(parse_config_text(text), seed)


def train_config(cfg):
    data = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("train.")}
    return TrainConfig(seed=cfg["seed"], **data)


def build_density(cfg, prefix="density"):
    name = cfg[prefix]
    params = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith(prefix + ".") and v is not None}
    try:
        return density.model_from_config(name, **params)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad density parameters for {name!r}: {exc}") from exc


def build_observation(cfg, name=None):
    name = name or cfg["observation"]
    params = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("observation.")}
    return density.observation_from_config(name, **params)


def jsonable(cfg):
    return {k: (v if not isinstance(v, dict) else {str(a): b for a, b in v.items()}) for k, v in cfg.items()}


def config_header(cfg):
    return f"# config={json.dumps(jsonable(cfg), sort_keys=True)}\n"


# ---------------------------------------------------------------------------
# subcommands. Each returns {filename: text}; main() writes them.


def cmd_train_gain(cfg, workers=1):
    tcfg = train_config(cfg)
    model = build_density(cfg)
    h = build_observation(cfg)
    ens = density.sample(model, tcfg.N, cfg["seed"])
    params, trace = train_gain(ens, h, tcfg)
    net = params.to_dict()
    net["config"] = jsonable(cfg)
    files = {
        "network.json": json.dumps(net, sort_keys=True) + "\n",
        "loss.csv": config_header(cfg) + trace.to_csv(),
    }
    if model.dim == 1:
        x = np.linspace(cfg["grid.lo"], cfg["grid.hi"], cfg["grid.n"])
        K = nn.gain(params, x.reshape(-1, 1))[:, 0]
        lines = ["x,gain"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, K)]
    else:
        # in higher dimension the curve runs along the first axis
        pts = np.zeros((cfg["grid.n"], model.dim))
        pts[:, 0] = np.linspace(cfg["grid.lo"], cfg["grid.hi"], cfg["grid.n"])
        K = nn.gain(params, pts)
        lines = ["x0," + ",".join(f"gain{k}" for k in range(model.dim))]
        lines += [repr(float(p[0])) + "," + ",".join(repr(float(v)) for v in row) for p, row in zip(pts, K)]
    files["gain_curve.csv"] = config_header(cfg) + "\n".join(lines) + "\n"
    return files


def _flow_solver(name, cfg):
    if name == "neural":
        return make_solver("neural", cfg=train_config(cfg), warm_start=cfg["flow.warm_start"], warm_T=cfg["flow.warm_T"])
    if name in ("dm", "diffusion-map"):
        return make_solver("dm", eps=cfg["dm.eps"])
    if name == "galerkin":
        return make_solver("galerkin", degree=cfg["galerkin.degree"])
    return make_solver(name)


def run_flow_experiment(cfg, workers=1):
    prior = build_density(cfg, "prior")
    likelihood = build_observation(cfg, cfg["flow.likelihood"])
    problem = flow.HomotopyProblem(prior, likelihood, cfg["flow.steps"], cfg["flow.N"], cfg["seed"],
                                   tuple(cfg["flow.snapshot_times"]))
    psi = {"x_pos": density.psi_positive_part, "indicator": density.psi_indicator}.get(cfg["flow.psi"])
    if psi is None:
        raise ConfigError(f"unknown test function {cfg['flow.psi']!r}")
    report = bench.ExperimentReport("flow", jsonable(cfg), environment=bench.environment_stamp(cfg["seed"], True))
    files, ks_rows, series = {}, [], {}
    times = None
    for name in cfg["flow.solvers"]:
        traj = flow.run_flow(problem, _flow_solver(name, cfg))
        files[f"snapshots_{name}.csv"] = config_header(cfg) + traj.snapshots_csv()
        for t in problem.snapshot_times:
            ks_rows.append({"solver": name, "time": float(t),
                            "ks": flow.ks_distance(traj.at(t)[:, 0], problem.density_at(t))})
        if cfg["flow.K"] > 0:
            times, series[name] = flow.flow_mse(problem, _flow_solver(name, cfg), cfg["flow.K"], psi, workers)
    report.add_table("ks", ks_rows)
    report.summary = {f"ks_t1_{r['solver']}": r["ks"] for r in ks_rows if r["time"] == 1.0}
    if series:
        files["mse.csv"] = config_header(cfg) + flow.mse_csv(times, series)
    return report, files


def cmd_experiment(cfg, workers=1):
    name = cfg["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {name!r}")
    tcfg = train_config(cfg)
    seeds = range(cfg["seed"], cfg["seed"] + cfg["seeds"])
    extra = {}
    if name == "overfit":
        report = bench.overfit_experiment(tcfg, cfg["seed"], cfg["n_test"], cfg["mini_batch"])
    elif name == "dimension":
        missing = [d for d in cfg["dims"] if d not in cfg["dm.eps_by_dim"]]
        if missing:
            raise ConfigError(f"dm.eps_by_dim has no bandwidth for d={missing}")
        report = bench.dimension_sweep(cfg["dims"], tcfg, seeds, cfg["n_eval"], cfg["dm.eps_by_dim"],
                                       cfg["curve_every"], workers)
    elif name == "scaling":
        report = bench.runtime_scaling(cfg["scaling.ns"], cfg["scaling.solvers"], cfg["scaling.reps"], tcfg,
                                       cfg["dm.eps"], cfg["seed"])
    elif name == "bimodal":
        report = bench.bimodal_experiment(tcfg, cfg["seed"], cfg["n_eval"])
    elif name == "baselines":
        report = bench.baseline_comparison(tcfg, seeds, cfg["n_eval"], workers)
    else:
        report, extra = run_flow_experiment(cfg, workers)
    report.config = {"resolved": jsonable(cfg), "run": report.config}
    report.environment = report.environment or bench.environment_stamp(cfg["seed"], True)
    bad = report.check_finite()
    if bad:
        raise NumericError("non-finite values in report", where=", ".join(bad[:5]))
    files = {"report.json": report.to_json() + "\n"}
    header = f"# experiment={report.experiment} " + config_header(cfg)[2:]
    for table in report.tables:
        files[f"{table}.csv"] = header + report.table_csv(table)
    files.update(extra)
    return files


def cmd_validate(cfg, workers=1):
    lines = []

    def echo(line):
        print(line)
        lines.append(line)

    failures = validate.run_all(echo)
    summary = f"{failures} failed of {len(validate.CHECKS)}"
    print(summary)
    return failures, {"validate.txt": config_header(cfg) + "\n".join(lines + [summary]) + "\n"}


# ---------------------------------------------------------------------------


def write_artifacts(outdir, files):
    os.makedirs(outdir, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(outdir, name), "w") as fh:
            fh.write(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="deepfpf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_out in (("train-gain", True), ("experiment", True), ("validate", False)):
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR", required=needs_out)
        p.add_argument("--seed", type=int, metavar="UINT")
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--workers", type=int, metavar="N")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    workers = 1 if args.deterministic else (args.workers or default_workers())
    try:
        cfg = load_config(args.config, args.seed)
        # overflow is detected and reported explicitly as a numeric error
        np.seterr(over="ignore", invalid="ignore")
        if args.command == "train-gain":
            files = cmd_train_gain(cfg, workers)
        elif args.command == "experiment":
            if cfg["experiment"] is None:
                raise ConfigError("config must set experiment")
            files = cmd_experiment(cfg, workers)
        else:
            failures, files = cmd_validate(cfg, workers)
            if args.out:
                write_artifacts(args.out, files)
            return min(failures, MAX_EXIT)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_artifacts(args.out, files)
    return 0


if __name__ == "__main__":
    sys.exit(main())
