"""Galerkin (polynomial basis) and diffusion-map gain approximations."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .errors import ConfigError, FitError

RIDGE = 1e-10


# ---------------------------------------------------------------------------
# Galerkin


def monomial_exponents(d, degree):
    """Exponent vectors of all monomials in d variables with total degree 1..degree."""
    out = []
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), total):
            e = np.zeros(d, dtype=int)
            for k in combo:
                e[k] += 1
            out.append(e)
    return np.array(out)


def _power_table(X, degree):
    # P[i, k, j] = X[i, k] ** j
    return X[:, :, None] ** np.arange(degree + 1)


def basis_values(exponents, X):
    X = np.atleast_2d(X)
    P = _power_table(X, exponents.max())
    d = X.shape[1]
    # prod_k X[:, k] ** e[j, k]
    return np.prod(P[:, np.arange(d)[None, :], exponents], axis=2)


def basis_gradients(exponents, X):
    """Gradient of every basis function: array of shape (n, n_basis, d)."""
    X = np.atleast_2d(X)
    n, d = X.shape
    P = _power_table(X, exponents.max())
    cols = np.arange(d)[None, :]
    base = P[:, cols, exponents]  # (n, J, d)
    lowered = P[:, cols, np.maximum(exponents - 1, 0)] * exponents  # d/dx_k of x_k^e_k
    out = np.empty((n, exponents.shape[0], d))
    for k in range(d):
        factors = base.copy()
        factors[:, :, k] = lowered[:, :, k]
        out[:, :, k] = np.prod(factors, axis=2)
    return out


@dataclass
class GalerkinModel:
    exponents: np.ndarray
    coef: np.ndarray
    gram: np.ndarray
    rhs: np.ndarray
    ridge_used: bool = False

    @property
    def degree(self):
        return int(self.exponents.sum(axis=1).max())

    def residual(self):
        """Relative normal-equation residual ||A c - b|| / ||b||."""
        nb = np.linalg.norm(self.rhs)
        if nb == 0:
            return float(np.linalg.norm(self.gram @ self.coef))
        return float(np.linalg.norm(self.gram @ self.coef - self.rhs) / nb)


def galerkin_fit(ensemble, h, degree=5):
    X = ensemble.positions
    exps = monomial_exponents(X.shape[1], degree)
    if X.shape[0] < exps.shape[0]:
        raise ConfigError(f"{X.shape[0]} particles cannot fit {exps.shape[0]} basis functions")
    hv = h(X)
    c = hv - hv.mean()
    grads = basis_gradients(exps, X)
    n = X.shape[0]
    gram = np.einsum("ijk,ilk->jl", grads, grads) / n
    gram = 0.5 * (gram + gram.T)
    rhs = basis_values(exps, X).T @ c / n
    if not np.any(rhs):
        return GalerkinModel(exps, np.zeros(len(exps)), gram, rhs)
    ridge_used = False
    try:
        coef = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        ridge_used = True
        try:
            coef = scipy.linalg.solve(gram + RIDGE * np.eye(len(exps)), rhs, assume_a="pos")
        except np.linalg.LinAlgError as exc:
            raise FitError("Galerkin Gram matrix is singular even with ridge") from exc
    if not np.all(np.isfinite(coef)):
        raise FitError("Galerkin coefficients are not finite")
    return GalerkinModel(exps, coef, gram, rhs, ridge_used)


def galerkin_potential(model, x):
    return basis_values(model.exponents, x) @ model.coef


def galerkin_gain(model, x):
    """sum_j c_j grad psi_j(x); (n, d) for a batch."""
    arr = np.asarray(x, dtype=float)
    d = model.exponents.shape[1]
    single = arr.ndim == 0 or (arr.ndim == 1 and d > 1)
    pts = arr.reshape(-1, d)
    out = np.einsum("ijk,j->ik", basis_gradients(model.exponents, pts), model.coef)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# diffusion map


@dataclass
class DiffusionMapModel:
    eps: float
    X: np.ndarray
    T: np.ndarray
    phi: np.ndarray
    h_values: np.ndarray
    row_sums: np.ndarray
    iterations: int
    residual: float

    @property
    def n(self):
        return self.X.shape[0]


def markov_matrix(X, eps):
    """Gaussian kernel, symmetric normalization, then row normalization.

    Returns (T, g_row_sums) so out-of-sample rows can be normalized alike.
    """
    g = cdist(X, X, "sqeuclidean")
    g *= -1.0 / (4.0 * eps)
    np.exp(g, out=g)
    s = g.sum(axis=1)
    inv = 1.0 / np.sqrt(s)
    # in place: g becomes the symmetric kernel, then the row-stochastic T
    g *= inv[:, None]
    g *= inv[None, :]
    g /= g.sum(axis=1, keepdims=True)
    T = g
    return T, s


def dm_fit(ensemble, h, eps, max_iter=10_000, tol=1e-9):
    """Solve phi = T phi + eps (h - hbar) by mean-centered fixed-point sweeps."""
    if not eps > 0:
        raise ConfigError(f"kernel bandwidth must be positive, got {eps}")
    X = ensemble.positions
    hv = h(X)
    T, s = markov_matrix(X, eps)
    r = eps * (hv - hv.mean())
    phi = np.zeros(X.shape[0])
    change = 0.0
    for it in range(1, max_iter + 1):
        new = T @ phi + r
        new -= new.mean()
        change = float(np.max(np.abs(new - phi)))
        phi = new
        if change < tol:
            return DiffusionMapModel(eps, X, T, phi, hv, s, it, change)
    raise FitError(f"diffusion-map fixed point did not converge in {max_iter} sweeps (residual {change:.3e})")


def fixed_point_residual(model):
    r = model.eps * (model.h_values - model.h_values.mean())
    nxt = model.T @ model.phi + r
    nxt -= nxt.mean()
    return float(np.max(np.abs(nxt - model.phi)))


def _gain_rows(model, rows):
    # K_i = 1/(2 eps) sum_j T_ij (phi_j + eps h_j) (X_j - sum_l T_il X_l)
    u = model.phi + model.eps * model.h_values
    TX = rows @ model.X
    return (rows @ (u[:, None] * model.X) - (rows @ u)[:, None] * TX) / (2.0 * model.eps)


def dm_gain(model, i=None):
    """Gain at particle ``i``, or at every particle as an (N, d) array."""
    if i is None:
        return _gain_rows(model, model.T)
    if not 0 <= i < model.n:
        raise IndexError(f"particle index {i} out of range for {model.n} particles")
    return _gain_rows(model, model.T[i:i + 1])[0]


def dm_gain_at(model, x):
    """Out-of-sample gain: the Markov row of a new point, normalized like the fit.

    At a fitted particle position this reproduces ``dm_gain`` exactly.
    """
    pts = np.asarray(x, dtype=float).reshape(-1, model.X.shape[1])
    g = np.exp(-cdist(pts, model.X, "sqeuclidean") / (4.0 * model.eps))
    sx = g.sum(axis=1)
    k = g / np.sqrt(sx)[:, None] / np.sqrt(model.row_sums)[None, :]
    rows = k / k.sum(axis=1, keepdims=True)
    return _gain_rows(model, rows)
