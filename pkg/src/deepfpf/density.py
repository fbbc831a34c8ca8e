"""Analytic densities, particle sampling and quadrature ground truth.

Everything that needs the true density (exact 1D gain, homotopy posterior,
reference expectations) lives here. Solvers only ever see an ``Ensemble``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError, NumericError

WINDOW_SIGMAS = 8.0
# Quadrature extends past the evaluation window so tail mass beyond the
# window edge is negligible relative to rho at the edge.
PAD_SIGMAS = 8.0
PDF_FLOOR = 1e-300
ADAPT_RTOL = 1e-8
ADAPT_START = 2**10 + 1
ADAPT_MAX = 2**22 + 1

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / (_SQRT_2PI * math.sqrt(var))


def _as_points(x, dim):
    """Coerce ``x`` to an (n, dim) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def _scalar_or_array(values, x):
    if np.ndim(x) == 0:
        return float(values[0])
    return values


# ---------------------------------------------------------------------------
# density models


@dataclass(frozen=True)
class Gaussian1D:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0 or not math.isfinite(self.variance):
            raise ConfigError(f"Gaussian1D variance must be positive, got {self.variance}")

    dim = 1

    def pdf(self, x):
        pts = _as_points(x, 1)[:, 0]
        return _scalar_or_array(_normal_pdf(pts, self.mean, self.variance), x)

    def sample(self, n, rng):
        return rng.normal(self.mean, math.sqrt(self.variance), size=(n, 1))

    def support_window(self):
        s = WINDOW_SIGMAS * math.sqrt(self.variance)
        return (self.mean - s, self.mean + s)

    def scale(self):
        return math.sqrt(self.variance)

    def describe(self):
        return {"name": "gaussian1d", "mean": self.mean, "variance": self.variance}


@dataclass(frozen=True)
class Mixture1D:
    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (len(self.weights) == len(self.means) == len(self.variances) >= 1):
            raise ConfigError("mixture weights, means and variances must have equal nonzero length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must be nonnegative and sum to 1, got {self.weights}")
        if any(not v > 0 for v in self.variances):
            raise ConfigError(f"mixture variances must be positive, got {self.variances}")
        # normalize to tuples so instances stay hashable
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        object.__setattr__(self, "means", tuple(float(v) for v in self.means))
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))

    dim = 1

    @classmethod
    def bimodal(cls, variance=0.2):
        """Equal-weight mixture of N(-1, variance) and N(+1, variance)."""
        return cls((0.5, 0.5), (-1.0, 1.0), (variance, variance))

    def pdf(self, x):
        pts = _as_points(x, 1)[:, 0]
        out = np.zeros_like(pts)
        for w, m, v in zip(self.weights, self.means, self.variances):
            out += w * _normal_pdf(pts, m, v)
        return _scalar_or_array(out, x)

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal(n)
        means = np.asarray(self.means)[comp]
        sds = np.sqrt(np.asarray(self.variances))[comp]
        return (means + sds * z).reshape(n, 1)

    def support_window(self):
        s = WINDOW_SIGMAS * self.scale()
        return (min(self.means) - s, max(self.means) + s)

    def scale(self):
        return math.sqrt(max(self.variances))

    def describe(self):
        return {
            "name": "mixture1d",
            "weights": list(self.weights),
            "means": list(self.means),
            "variances": list(self.variances),
        }


@dataclass(frozen=True)
class ProductBimodalGauss:
    """Bimodal first coordinate times independent N(0, gauss_variance) factors."""

    d: int
    bimodal_variance: float = 0.2
    gauss_variance: float = 0.2

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.d}")
        if not (self.bimodal_variance > 0 and self.gauss_variance > 0):
            raise ConfigError("variances must be positive")

    @property
    def dim(self):
        return self.d

    def first_marginal(self):
        return Mixture1D.bimodal(self.bimodal_variance)

    def pdf(self, x):
        pts = _as_points(x, self.d)
        out = self.first_marginal().pdf(pts[:, 0])
        for k in range(1, self.d):
            out = out * _normal_pdf(pts[:, k], 0.0, self.gauss_variance)
        if np.ndim(x) == 1 and self.d > 1 or np.ndim(x) == 0:
            return float(out[0])
        return out

    def sample(self, n, rng):
        out = np.empty((n, self.d))
        out[:, :1] = self.first_marginal().sample(n, rng)
        if self.d > 1:
            out[:, 1:] = math.sqrt(self.gauss_variance) * rng.standard_normal((n, self.d - 1))
        return out

    def support_window(self):
        if self.d != 1:
            raise DomainError("support window is defined for 1D models only")
        return self.first_marginal().support_window()

    def scale(self):
        return math.sqrt(self.bimodal_variance)

    def describe(self):
        return {
            "name": "product_bimodal_gauss",
            "d": self.d,
            "bimodal_variance": self.bimodal_variance,
            "gauss_variance": self.gauss_variance,
        }


def model_from_config(name, **params):
    """Build a density model from a configuration name and parameters."""
    name = name.lower()
    if name in ("gaussian1d", "gaussian"):
        return Gaussian1D(float(params.get("mean", 0.0)), float(params.get("variance", 1.0)))
    if name == "bimodal":
        return Mixture1D.bimodal(float(params.get("variance", 0.2)))
    if name == "mixture1d":
        return Mixture1D(tuple(params["weights"]), tuple(params["means"]), tuple(params["variances"]))
    if name == "product_bimodal_gauss":
        return ProductBimodalGauss(
            int(params["d"]),
            float(params.get("bimodal_variance", 0.2)),
            float(params.get("gauss_variance", 0.2)),
        )
    raise ConfigError(f"unknown density model {name!r}")


# ---------------------------------------------------------------------------
# observation functions


@dataclass(frozen=True)
class ObservationFn:
    """Base for h: R^d -> R. Evaluates on (n, d) arrays, returns (n,)."""

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        if arr.ndim <= 1:
            # scalar or a 1D array of scalar positions
            out = self._eval(arr.reshape(-1, 1))
            return float(out[0]) if arr.ndim == 0 else out
        return self._eval(arr)

    def _eval(self, pts):
        raise NotImplementedError

    def __add__(self, c):
        return Shifted(self, float(c))


@dataclass(frozen=True)
class Coordinate(ObservationFn):
    index: int = 0

    def _eval(self, pts):
        return pts[:, self.index].copy()

    def describe(self):
        return {"name": "coordinate", "index": self.index}


@dataclass(frozen=True)
class Constant(ObservationFn):
    c: float = 0.0

    def _eval(self, pts):
        return np.full(pts.shape[0], float(self.c))

    def describe(self):
        return {"name": "constant", "c": self.c}


@dataclass(frozen=True)
class QuadraticWell(ObservationFn):
    """l(x) = (|x| - radius)^2 with |x| the Euclidean norm."""

    radius: float = 2.0

    def _eval(self, pts):
        return (np.linalg.norm(pts, axis=1) - self.radius) ** 2

    def describe(self):
        return {"name": "quadratic_well", "radius": self.radius}


@dataclass(frozen=True)
class Shifted(ObservationFn):
    base: ObservationFn = field(default_factory=Constant)
    c: float = 0.0

    def _eval(self, pts):
        return self.base._eval(pts) + self.c

    def describe(self):
        return {"name": "shifted", "base": self.base.describe(), "c": self.c}


def observation_from_config(name, **params):
    name = name.lower()
    if name == "coordinate":
        return Coordinate(int(params.get("index", 0)))
    if name == "constant":
        return Constant(float(params.get("c", 0.0)))
    if name == "quadratic_well":
        return QuadraticWell(float(params.get("radius", 2.0)))
    raise ConfigError(f"unknown observation function {name!r}")


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Ensemble:
    positions: np.ndarray
    seed: int | None = None
    source: dict | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] < 1:
            raise ValueError(f"positions must be a non-empty (N, d) array, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise NumericError("ensemble contains non-finite positions")
        self.positions = pos

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def d(self):
        return self.positions.shape[1]

    def moved(self, positions):
        return Ensemble(positions, self.seed, self.source)


def sample(model, n, seed):
    """Draw ``n`` i.i.d. particles from ``model``; deterministic per seed."""
    if n < 1:
        raise ConfigError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return Ensemble(model.sample(int(n), rng), seed=seed, source=model.describe())


def pdf(model, x):
    return model.pdf(x)


# ---------------------------------------------------------------------------
# quadrature


def trapezoid(f: Callable, lo: float, hi: float, n: int) -> float:
    z = np.linspace(lo, hi, n)
    return float(np.trapezoid(f(z), z))


def adaptive_trapezoid(f, lo, hi, rtol=ADAPT_RTOL, atol=1e-15):
    """Composite trapezoid, doubling resolution until the value settles."""
    n = ADAPT_START
    prev = trapezoid(f, lo, hi, n)
    while n < ADAPT_MAX:
        n = 2 * n - 1
        cur = trapezoid(f, lo, hi, n)
        if abs(cur - prev) <= rtol * abs(cur) + atol:
            return cur
        prev = cur
    raise NumericError(f"quadrature did not settle on [{lo}, {hi}]", where=f"n={n}")


def _padded_window(model):
    lo, hi = model.support_window()
    pad = PAD_SIGMAS * model.scale()
    return lo - pad, hi + pad


def _check_window(model, x):
    lo, hi = model.support_window()
    xs = np.asarray(x, dtype=float)
    if np.any(xs < lo) or np.any(xs > hi) or not np.all(np.isfinite(xs)):
        raise DomainError(f"points outside support window [{lo:.4g}, {hi:.4g}]")


# ---------------------------------------------------------------------------
# exact 1D gain


class _GainTable:
    """Cumulative integral of rho*(h - hbar) on a uniform grid.

    Each cell is integrated with Simpson's rule (trapezoid refined by the
    cell midpoint), so the table converges at O(h^4). Queries add a partial
    Simpson cell to the tabulated sum, taking the integral from whichever
    side has less accumulated mass so tails do not suffer cancellation.
    """

    def __init__(self, model, h, n):
        lo, hi = _padded_window(model)
        self.model, self.h = model, h
        self.lo = lo
        self.dz = (hi - lo) / (n - 1)
        self.n = n
        z = np.linspace(lo, hi, n)
        mid = z[:-1] + 0.5 * self.dz
        rho, rho_mid = model.pdf(z), model.pdf(mid)
        hz, hmid = h(z), h(mid)
        w = self.dz / 6.0
        mass = w * np.sum(rho[:-1] + 4.0 * rho_mid + rho[1:])
        # hbar under the same rule makes the full-grid integral vanish
        self.hbar = float(w * np.sum(rho[:-1] * hz[:-1] + 4.0 * rho_mid * hmid + rho[1:] * hz[1:]) / mass)
        g = rho * (hz - self.hbar)
        g_mid = rho_mid * (hmid - self.hbar)
        cells = w * (g[:-1] + 4.0 * g_mid + g[1:])
        self.g = g
        self.left = np.concatenate([[0.0], np.cumsum(cells)])
        self.right = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
        abs_cells = w * (np.abs(g[:-1]) + 4.0 * np.abs(g_mid) + np.abs(g[1:]))
        mass_left = np.concatenate([[0.0], np.cumsum(abs_cells)])
        mass_right = np.concatenate([np.cumsum(abs_cells[::-1])[::-1], [0.0]])
        self.use_left = mass_left <= mass_right

    def _g(self, x):
        return self.model.pdf(x) * (self.h(x) - self.hbar)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(((x - self.lo) / self.dz).astype(int), 0, self.n - 2)
        zk = self.lo + k * self.dz
        part = (x - zk) / 6.0 * (self.g[k] + 4.0 * self._g(0.5 * (zk + x)) + self._g(x))
        from_left = self.left[k] + part
        from_right = -(self.right[k] - part)
        integral = np.where(self.use_left[k], from_left, from_right)
        return -integral / np.maximum(self.model.pdf(x), PDF_FLOOR)


@lru_cache(maxsize=256)
def _gain_table(model, h):
    lo, hi = model.support_window()
    probe = np.linspace(lo, hi, 257)
    n = ADAPT_START
    table = _GainTable(model, h, n)
    prev = table(probe)
    while n < ADAPT_MAX:
        n = 2 * n - 1
        table = _GainTable(model, h, n)
        cur = table(probe)
        scale = max(np.max(np.abs(cur)), 1e-300)
        if np.max(np.abs(cur - prev)) <= ADAPT_RTOL * scale:
            return table
        prev = cur
    return table


def exact_gain_1d(model, h, x):
    """K(x) = -(1/rho(x)) * int_{-inf}^x rho(z)(h(z) - hbar) dz for 1D models.

    ``hbar`` is the quadrature mean of h under ``model``. Points must lie in
    ``model.support_window()``.
    """
    if model.dim != 1:
        raise DomainError("exact_gain_1d needs a one-dimensional model")
    _check_window(model, x)
    out = _gain_table(model, h)(np.atleast_1d(x))
    return float(out[0]) if np.ndim(x) == 0 else out


def exact_gain(model, h, x):
    """Exact gain as an (n, d) array, including the product-density case.

    For ``ProductBimodalGauss`` with h = x_1 (possibly shifted), the gain is
    (K_1(x_1), 0, ..., 0) with K_1 the 1D gain of the bimodal marginal.
    """
    pts = _as_points(x, model.dim)
    if model.dim == 1:
        return exact_gain_1d(model, h, pts[:, 0]).reshape(-1, 1)
    base = h.base if isinstance(h, Shifted) else h
    if not (isinstance(model, ProductBimodalGauss) and isinstance(base, Coordinate) and base.index == 0):
        raise DomainError("exact gain in d > 1 is available only for the product density with h = x_1")
    out = np.zeros_like(pts)
    out[:, 0] = exact_gain_1d(model.first_marginal(), Coordinate(0), pts[:, 0])
    return out


# ---------------------------------------------------------------------------
# homotopy between prior and posterior


@lru_cache(maxsize=256)
def _homotopy_normalizer(prior, h, t):
    lo, hi = _padded_window(prior)

    def integrand(z):
        return prior.pdf(z) * np.exp(-t * h(z))

    with np.errstate(over="raise", invalid="raise"):
        try:
            z_t = adaptive_trapezoid(integrand, lo, hi)
        except FloatingPointError as exc:
            raise NumericError(f"homotopy normalizer overflowed at t={t}") from exc
    if not (math.isfinite(z_t) and z_t > 0):
        raise NumericError(f"homotopy normalizer is not a positive finite number: {z_t}", where=f"t={t}")
    return z_t


@dataclass(frozen=True)
class HomotopyDensity:
    """rho(t, x) proportional to prior(x) * exp(-t * h(x)), 1D priors only."""

    prior: object
    h: ObservationFn
    t: float

    dim = 1

    def __post_init__(self):
        if self.prior.dim != 1:
            raise ConfigError("homotopy density is implemented for 1D priors")
        if not 0.0 <= self.t <= 1.0:
            raise ConfigError(f"homotopy time must lie in [0, 1], got {self.t}")
        object.__setattr__(self, "t", float(self.t))

    def normalizer(self):
        return _homotopy_normalizer(self.prior, self.h, self.t)

    def pdf(self, x):
        pts = np.asarray(x, dtype=float)
        val = self.prior.pdf(pts) * np.exp(-self.t * self.h(pts)) / self.normalizer()
        return float(val) if pts.ndim == 0 else val

    def support_window(self):
        return self.prior.support_window()

    def scale(self):
        return self.prior.scale()

    def cdf(self, x):
        return _cdf_table(self)(np.asarray(x, dtype=float))

    def describe(self):
        return {"name": "homotopy", "prior": self.prior.describe(), "h": self.h.describe(), "t": self.t}


@lru_cache(maxsize=128)
def _cdf_table(density):
    lo, hi = _padded_window(density)
    z = np.linspace(lo, hi, 2**15 + 1)
    mid = z[:-1] + 0.5 * (z[1] - z[0])
    rho, rho_mid = density.pdf(z), density.pdf(mid)
    cells = (z[1] - z[0]) / 6.0 * (rho[:-1] + 4.0 * rho_mid + rho[1:])
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, z, cum, left=0.0, right=1.0)

    return cdf


def homotopy_density(prior, h, t, x):
    return HomotopyDensity(prior, h, t).pdf(x)


# ---------------------------------------------------------------------------
# expectations


def expectation(density, psi, breaks=(0.0,)):
    """Quadrature value of int psi(x) rho(x) dx over the padded window.

    The window is split at ``breaks`` (where psi may jump or kink) and psi
    takes its one-sided limits at piece ends, so each piece is smooth.
    """
    lo, hi = _padded_window(density)
    edges = [lo] + sorted(b for b in breaks if lo < b < hi) + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        nudge = 1e-12 * (b - a)

        def f(z, a=a, b=b, nudge=nudge):
            return psi(np.clip(z, a + nudge, b - nudge)) * density.pdf(z)

        total += adaptive_trapezoid(f, a, b)
    return total


def psi_positive_part(x):
    """psi(x) = x * 1{x > 0}."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, 0.0)


def psi_indicator(x):
    """psi(x) = 1{x > 0}."""
    return (np.asarray(x, dtype=float) > 0).astype(float)


TEST_FUNCTIONS = {"x_pos": psi_positive_part, "indicator": psi_indicator}


# ---------------------------------------------------------------------------
# variational energy


def energy_grid(model, n=2**16 + 1):
    """Uniform grid over the padded window, for energy quadrature."""
    lo, hi = _padded_window(model)
    return np.linspace(lo, hi, n)


def exact_potential_1d(model, h, z):
    """phi_0 on the sorted grid ``z``: cumulative trapezoid of the exact gain, phi_0(z[0]) = 0.

    ``z`` must lie inside the support window.
    """
    K = exact_gain_1d(model, h, z)
    return np.concatenate([[0.0], np.cumsum(0.5 * (K[1:] + K[:-1]) * np.diff(z))])


def variational_energy(model, h, z, phi, dphi):
    """J(phi) = int (|phi'|^2 / 2 - (h - hbar) phi) rho dx by trapezoid on ``z``.

    ``phi`` and ``dphi`` are values on the grid; hbar uses the same rule.
    """
    rho = model.pdf(z)
    hz = h(z)
    hbar = np.trapezoid(rho * hz, z) / np.trapezoid(rho, z)
    return float(np.trapezoid((0.5 * dphi**2 - (hz - hbar) * phi) * rho, z))
