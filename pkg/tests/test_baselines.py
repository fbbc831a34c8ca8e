import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepfpf import baselines as B
from deepfpf import density as D
from deepfpf.errors import ConfigError, FitError

BIMODAL = D.Mixture1D.bimodal(0.2)
X = D.Coordinate(0)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 6), p=st.integers(1, 6))
def test_monomial_count(d, p):
    exps = B.monomial_exponents(d, p)
    assert len(exps) == math.comb(d + p, p) - 1
    assert len({tuple(e) for e in exps}) == len(exps)
    assert exps.sum(axis=1).min() == 1 and exps.sum(axis=1).max() == p


def test_basis_gradients_match_finite_differences():
    exps = B.monomial_exponents(3, 4)
    pts = np.random.default_rng(0).uniform(-1.5, 1.5, (7, 3))
    G = B.basis_gradients(exps, pts)
    step = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        fd = (B.basis_values(exps, pts + e) - B.basis_values(exps, pts - e)) / (2 * step)
        np.testing.assert_allclose(G[:, :, k], fd, rtol=1e-6, atol=1e-8)


def test_galerkin_degree_one_gives_empirical_variance():
    # basis {x}: the normal equation is c * mean(1) = mean(x (x - xbar))
    ens = D.sample(D.Gaussian1D(0.3, 2.0), 500, 1)
    model = B.galerkin_fit(ens, X, degree=1)
    K = B.galerkin_gain(model, np.linspace(-2, 2, 9))
    np.testing.assert_allclose(K[:, 0], np.var(ens.positions), rtol=1e-12)


def test_galerkin_solves_normal_equations():
    ens = D.sample(BIMODAL, 100, 0)
    model = B.galerkin_fit(ens, X, degree=5)
    assert model.residual() < 1e-8
    assert model.coef.shape == (5,)
    np.testing.assert_allclose(model.gram, model.gram.T)
    # the potential's derivative is the gain
    x = np.linspace(-1.5, 1.5, 7)
    step = 1e-6
    fd = (B.galerkin_potential(model, (x + step)[:, None]) - B.galerkin_potential(model, (x - step)[:, None])) / (2 * step)
    np.testing.assert_allclose(B.galerkin_gain(model, x[:, None])[:, 0], fd, rtol=1e-6)


def test_galerkin_constant_h_is_zero_and_small_sample_rejected():
    ens = D.sample(BIMODAL, 100, 0)
    model = B.galerkin_fit(ens, D.Constant(4.0))
    assert not np.any(model.coef)
    with pytest.raises(ConfigError):
        B.galerkin_fit(D.sample(BIMODAL, 3, 0), X, degree=5)


def test_markov_matrix_properties():
    pts = D.sample(D.ProductBimodalGauss(2), 150, 2).positions
    T, s = B.markov_matrix(pts, 0.2)
    assert np.all(T >= 0)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-14)
    # reversible with respect to pi_i = sum_j k_ij / sqrt(s_i s_j)
    K = np.exp(-((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1) / 0.8)
    S = K / np.sqrt(np.outer(s, s))
    pi = S.sum(axis=1)
    flux = pi[:, None] * T
    np.testing.assert_allclose(flux, flux.T, atol=1e-15)


def test_dm_fixed_point_and_gain():
    ens = D.sample(BIMODAL, 400, 3)
    model = B.dm_fit(ens, X, 0.1)
    assert B.fixed_point_residual(model) < 1e-9
    assert abs(model.phi.mean()) < 1e-12
    K = B.dm_gain(model)
    assert K.shape == (400, 1)
    np.testing.assert_allclose(B.dm_gain(model, 5), K[5])
    np.testing.assert_allclose(B.dm_gain_at(model, ens.positions), K, rtol=1e-10, atol=1e-12)
    with pytest.raises(IndexError):
        B.dm_gain(model, 400)


def test_dm_gain_close_to_exact_with_many_particles():
    ens = D.sample(BIMODAL, 1000, 0)
    model = B.dm_fit(ens, X, 0.1)
    Y = D.sample(BIMODAL, 1000, 1).positions
    mse = np.mean((B.dm_gain_at(model, Y) - D.exact_gain(BIMODAL, X, Y)) ** 2)
    assert mse < 0.15


def test_dm_constant_h_and_errors():
    ens = D.sample(BIMODAL, 100, 0)
    model = B.dm_fit(ens, D.Constant(-1.0), 0.1)
    np.testing.assert_allclose(B.dm_gain(model), 0.0, atol=1e-15)
    with pytest.raises(ConfigError):
        B.dm_fit(ens, X, 0.0)
    with pytest.raises(FitError):
        B.dm_fit(ens, X, 0.1, max_iter=2)


def test_dm_gain_invariant_to_shifting_h():
    ens = D.sample(BIMODAL, 200, 0)
    a = B.dm_gain(B.dm_fit(ens, X, 0.1))
    b = B.dm_gain(B.dm_fit(ens, X + 10.0, 0.1))
    np.testing.assert_allclose(a, b, atol=1e-7)
