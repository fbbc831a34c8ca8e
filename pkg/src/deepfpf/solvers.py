"""Common fit/evaluate wrapper around every gain approximator."""

from __future__ import annotations

import numpy as np

from . import baselines, density, nn
from .errors import ConfigError
from .train import TrainConfig, train_gain


class GainSolver:
    """fit(ensemble, h) then evaluate(x) -> (n, d) gains.

    ``evaluate_particles()`` returns the gain at the fitted particles, which
    is the only evaluation the diffusion map supports natively.
    """

    kind = "abstract"

    def fit(self, ensemble, h, density_model=None):
        raise NotImplementedError

    def evaluate(self, x):
        raise NotImplementedError

    def evaluate_particles(self):
        return self.evaluate(self.ensemble.positions)

    def diagnostics(self):
        return {}

    def describe(self):
        return {"kind": self.kind}


class ZeroSolver(GainSolver):
    kind = "zero"

    def fit(self, ensemble, h, density_model=None):
        self.ensemble = ensemble
        return self

    def evaluate(self, x):
        return np.zeros_like(np.asarray(x, dtype=float).reshape(-1, self.ensemble.d))


class OracleSolver(GainSolver):
    """Quadrature gain of the true density; needs ``density_model`` or ``model``."""

    kind = "oracle-1d"

    def __init__(self, model=None):
        self.model = model

    def fit(self, ensemble, h, density_model=None):
        self.ensemble = ensemble
        self.h = h
        if density_model is not None:
            self.model = density_model
        if self.model is None:
            raise ConfigError("oracle solver needs the true density")
        return self

    def evaluate(self, x):
        return density.exact_gain(self.model, self.h, np.asarray(x, dtype=float).reshape(-1, self.model.dim))


class NeuralSolver(GainSolver):
    """Algorithm 1 network; optionally warm-starts from its previous fit."""

    kind = "neural"

    def __init__(self, cfg=None, warm_start=False, warm_T=1000):
        self.cfg = cfg or TrainConfig()
        self.warm_start = warm_start
        self.warm_T = warm_T
        self.params = None
        self.trace = None
        self.fits = 0

    def fit(self, ensemble, h, density_model=None):
        cfg = self.cfg.replace_with(N=ensemble.n, M=min(self.cfg.M, ensemble.n), seed=self.cfg.seed + self.fits)
        init = None
        if self.warm_start and self.params is not None:
            init = self.params
            cfg = cfg.replace_with(T=self.warm_T)
        self.ensemble = ensemble
        self.params, self.trace = train_gain(ensemble, h, cfg, init=init)
        self.fits += 1
        return self

    def evaluate(self, x):
        return nn.gain(self.params, np.asarray(x, dtype=float).reshape(-1, self.params.d))

    def diagnostics(self):
        return {"train_loss": self.trace.train_loss[-1] if self.trace else float("nan")}

    def describe(self):
        return {"kind": self.kind, "L": self.cfg.L, "m": self.cfg.m, "M": self.cfg.M, "T": self.cfg.T,
                "lr": self.cfg.lr, "warm_start": self.warm_start, "warm_T": self.warm_T}


class GalerkinSolver(GainSolver):
    kind = "galerkin"

    def __init__(self, degree=5):
        self.degree = degree

    def fit(self, ensemble, h, density_model=None):
        self.ensemble = ensemble
        self.model = baselines.galerkin_fit(ensemble, h, self.degree)
        return self

    def evaluate(self, x):
        return baselines.galerkin_gain(self.model, np.asarray(x, dtype=float).reshape(-1, self.ensemble.d))

    def diagnostics(self):
        return {"residual": self.model.residual(), "ridge_used": self.model.ridge_used}

    def describe(self):
        return {"kind": self.kind, "degree": self.degree}


class DiffusionMapSolver(GainSolver):
    kind = "diffusion-map"

    def __init__(self, eps=0.1, max_iter=10_000, tol=1e-9):
        self.eps, self.max_iter, self.tol = eps, max_iter, tol

    def fit(self, ensemble, h, density_model=None):
        self.ensemble = ensemble
        self.model = baselines.dm_fit(ensemble, h, self.eps, self.max_iter, self.tol)
        return self

    def evaluate(self, x):
        return baselines.dm_gain_at(self.model, x)

    def evaluate_particles(self):
        return baselines.dm_gain(self.model)

    def diagnostics(self):
        return {"iterations": self.model.iterations, "residual": self.model.residual}

    def describe(self):
        return {"kind": self.kind, "eps": self.eps, "max_iter": self.max_iter, "tol": self.tol}


def make_solver(kind, **options):
    kind = kind.lower()
    if kind == "neural":
        return NeuralSolver(options.get("cfg"), options.get("warm_start", False), options.get("warm_T", 1000))
    if kind == "galerkin":
        return GalerkinSolver(options.get("degree", 5))
    if kind in ("dm", "diffusion-map", "diffusion_map"):
        return DiffusionMapSolver(options.get("eps", 0.1), options.get("max_iter", 10_000), options.get("tol", 1e-9))
    if kind in ("oracle", "oracle-1d"):
        return OracleSolver(options.get("model"))
    if kind == "zero":
        return ZeroSolver()
    raise ConfigError(f"unknown solver {kind!r}")
