"""Homotopy particle flow from prior to posterior driven by a gain solver.

Particles follow dX/dt = -grad phi(t, X) on t in [0, 1], where phi solves
the weighted Poisson equation for the current particle law with h = l,
the negative log-likelihood. Time stepping is explicit Euler.
"""

from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import density
from .errors import ConfigError, NumericError
from .jobs import map_jobs


@dataclass
class HomotopyProblem:
    prior: object
    likelihood: density.ObservationFn
    steps: int = 50
    N: int = 500
    seed: int = 0
    snapshot_times: tuple = (0.0, 0.5, 1.0)

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"need at least one time step, got {self.steps}")
        for t in self.snapshot_times:
            if abs(t * self.steps - round(t * self.steps)) > 1e-9 or not 0 <= t <= 1:
                raise ConfigError(f"snapshot time {t} is not on the grid of {self.steps} steps")

    @property
    def dt(self):
        return 1.0 / self.steps

    def time(self, step):
        return step / self.steps

    def density_at(self, t):
        return density.HomotopyDensity(self.prior, self.likelihood, t)


@dataclass
class FlowTrajectory:
    times: np.ndarray
    positions: np.ndarray  # (steps + 1, N, d)
    snapshot_times: tuple
    diagnostics: list = field(default_factory=list)

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return self.positions[k]

    @property
    def snapshots(self):
        return {t: self.at(t) for t in self.snapshot_times}

    def snapshots_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.positions.shape[2]
        w.writerow(["time", "particle"] + [f"x{k}" for k in range(d)])
        for t in self.snapshot_times:
            for i, row in enumerate(self.at(t)):
                w.writerow([repr(float(t)), i] + [repr(float(v)) for v in row])
        return buf.getvalue()


def flow_step(ensemble, solver, dt):
    """X <- X - dt * K(X) using a solver already fitted to ``ensemble``."""
    K = solver.evaluate_particles()
    if K.shape != ensemble.positions.shape:
        raise NumericError(f"solver returned gains of shape {K.shape} for {ensemble.positions.shape} particles")
    bad = ~np.all(np.isfinite(K), axis=1)
    if bad.any():
        raise NumericError("non-finite gain", where=f"particle {int(np.argmax(bad))}")
    return ensemble.moved(ensemble.positions - dt * K)


def run_flow(problem, solver):
    """Fit-then-step ``problem.steps`` times; returns every intermediate ensemble.

    The solver instance carries state between steps, so a neural solver
    built with ``warm_start=True`` starts each fit from the previous one.
    """
    ens = density.sample(problem.prior, problem.N, problem.seed)
    positions = [ens.positions]
    diags = []
    for s in range(problem.steps):
        t = problem.time(s)
        try:
            solver.fit(ens, problem.likelihood, density_model=problem.density_at(t))
            ens = flow_step(ens, solver, problem.dt)
        except NumericError as exc:
            raise NumericError(str(exc), where=f"flow step {s}") from exc
        diags.append(solver.diagnostics())
        positions.append(ens.positions)
    times = np.arange(problem.steps + 1) / problem.steps
    return FlowTrajectory(times, np.stack(positions), tuple(problem.snapshot_times), diags)


def ks_distance(samples, dens):
    """Kolmogorov-Smirnov sup distance between 1D samples and a density's CDF."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    return float(stats.kstest(x, dens.cdf).statistic)


def reference_expectations(problem, psi, times):
    return np.array([density.expectation(problem.density_at(float(t)), psi) for t in times])


def _replica(args):
    problem, solver, seed, psi = args
    prob = copy.copy(problem)
    prob.seed = seed
    traj = run_flow(prob, copy.deepcopy(solver))
    return np.array([np.mean(psi(x)) for x in traj.positions])


def flow_mse(problem, solver, K=100, psi=density.psi_positive_part, workers=1):
    """mse_t = mean over K seeded replicas of (particle mean of psi - exact expectation)^2.

    Replica k uses seed ``problem.seed + k`` and a fresh copy of ``solver``.
    Returns (times, mse_t).
    """
    if K < 1:
        raise ConfigError("need at least one replica")
    times = np.arange(problem.steps + 1) / problem.steps
    ref = reference_expectations(problem, psi, times)
    jobs = [(problem, solver, problem.seed + k, psi) for k in range(K)]
    means = np.array(map_jobs(_replica, jobs, workers))
    return times, np.mean((means - ref) ** 2, axis=0)


def mse_csv(times, series):
    """CSV with a time column and one m.s.e column per solver name."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(series)
    w.writerow(["time"] + names)
    for k, t in enumerate(times):
        w.writerow([repr(float(t))] + [repr(float(series[n][k])) for n in names])
    return buf.getvalue()
