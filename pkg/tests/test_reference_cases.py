"""Worked cases with hand-computed or analytic answers, module by module."""

import math

import numpy as np
import pytest

from deepfpf import baselines as B
from deepfpf import bench, flow, nn
from deepfpf import density as D
from deepfpf.solvers import GalerkinSolver, NeuralSolver, OracleSolver, make_solver
from deepfpf.train import AdamState, TrainConfig, adam_step, evaluate_loss, train_gain

X = D.Coordinate(0)
BIMODAL = D.Mixture1D.bimodal(0.2)
PRIOR = D.Gaussian1D(0.0, 1.0)
WELL = D.QuadraticWell(2.0)


# density ----------------------------------------------------------------------


def test_standard_normal_sample_moments():
    x = D.sample(PRIOR, 100_000, 7).positions[:, 0]
    assert abs(x.mean()) < 3 / math.sqrt(100_000)
    assert abs(x.var() - 1.0) < 0.05


def test_bimodal_sample_is_balanced():
    x = D.sample(BIMODAL, 100_000, 0).positions[:, 0]
    assert 0.49 <= np.mean(x < 0) <= 0.51


def test_product_samples_repeat_per_seed():
    a = D.sample(D.ProductBimodalGauss(10), 1000, 11).positions
    np.testing.assert_array_equal(a, D.sample(D.ProductBimodalGauss(10), 1000, 11).positions)


def test_pdf_values():
    assert PRIOR.pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    assert BIMODAL.pdf(0.0) == pytest.approx(D.Gaussian1D(1.0, 0.2).pdf(0.0), rel=1e-15)


def test_standard_normal_expectations():
    assert abs(D.expectation(PRIOR, lambda x: np.asarray(x, dtype=float))) < 1e-12
    assert D.expectation(PRIOR, D.psi_positive_part) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-8)  # adaptive rule tolerance


# nn -----------------------------------------------------------------------------


def test_hand_count_small_network():
    # W0 3x0, A0 3x2, b0 3, W1 1x3, A1 1x2, b1 1
    assert nn.param_count(2, 3, 2) == 0 + 6 + 3 + 3 + 2 + 1
    assert int(nn.init_params(2, 3, 0.3, 2, 0).trainable_mask().sum()) == 15


def test_zero_network_is_zero():
    p = nn.init_params(4, 8, 0.3, 2, 0)
    p.flat[:] = 0.0
    x = np.random.default_rng(0).standard_normal((10, 2))
    assert np.all(nn.forward(p, x) == 0) and np.all(nn.gain(p, x) == 0)


def test_constructed_linear_network():
    c = -1.7
    p = nn.init_params(2, 4, 0.3, 1, 0)
    p.W[1][:] = 0.0
    p.A[1][0, 0] = c
    p.b[1][:] = 0.0
    x = np.linspace(0.1, 3, 9)
    np.testing.assert_allclose(nn.forward(p, x), c * x, rtol=1e-15)
    # a middle leaky layer with positive preactivations is the identity on them
    q = nn.init_params(3, 1, 0.3, 1, 0)
    q.A[0][0, 0], q.b[0][0] = 1.0, 0.0  # h1 = x^2 for x > 0
    q.W[1][0, 0], q.A[1][0, 0], q.b[1][0] = 1.0, 0.0, 1.0  # h2 = x^2 + 1 > 0
    q.W[2][0, 0], q.A[2][0, 0], q.b[2][0] = 2.0, c, 0.0
    np.testing.assert_allclose(nn.forward(q, x), 2 * (x**2 + 1) + c * x, rtol=1e-14)


def test_network_lipschitz_on_a_box():
    p = nn.init_params(4, 6, 0.3, 1, 3)
    R = 3.0
    # layer-wise bound: |z0| <= |A0| R + |b0|; sq_lrelu' <= 2|z0|; lrelu' <= 1
    z0 = np.abs(p.A[0][:, 0]) * R + np.abs(p.b[0])
    lip = np.abs(p.A[0][:, 0]) * 2 * z0  # per-unit Lipschitz constants of h1
    for l in range(1, p.L):
        lip = np.abs(p.W[l]) @ lip + np.abs(p.A[l][:, 0])
    x = np.random.default_rng(1).uniform(-R, R, 500)
    dx = np.random.default_rng(2).uniform(-0.1, 0.1, 500)
    y = np.clip(x + dx, -R, R)
    assert np.all(np.abs(nn.forward(p, x) - nn.forward(p, y)) <= lip[0] * np.abs(x - y) + 1e-12)


def test_gain_affine_between_kinks():
    p = nn.init_params(4, 8, 0.3, 2, 4)
    p.b[0][:] = np.random.default_rng(5).standard_normal(8)
    rng = np.random.default_rng(6)
    checked = 0
    for _ in range(200):
        a, b = rng.standard_normal(2), 0.05 * rng.standard_normal(2)
        s = np.linspace(0, 1, 11)[:, None]
        pts = a + s * b
        signs = [np.sign(z) for z in nn._forward(p, pts)[0][:-1]]
        if not all(np.all(sg == sg[0]) for sg in signs):
            continue  # segment crosses a kink
        G = nn.gain(p, pts)
        np.testing.assert_allclose(G, G[0] + s * (G[-1] - G[0]), rtol=1e-9, atol=1e-12)
        checked += 1
    assert checked > 50


def test_zero_network_loss_and_gradient():
    p = nn.init_params(3, 5, 0.3, 1, 0)
    p.flat[:] = 0.0
    x = np.array([-1.0, 0.5, 2.0])
    hv = np.array([1.0, -2.0, 4.0])
    loss, grad = nn.loss_and_grad(p, x, hv, 0.5)
    assert loss == 0.0
    W, A, b = p.views(grad)
    c = hv - 0.5
    # only the output layer's A and b touch f at zero weights
    assert b[-1][0] == pytest.approx(-c.mean())
    assert A[-1][0, 0] == pytest.approx(-np.mean(c * x))
    assert np.count_nonzero(grad) == 2


def test_loss_and_grad_invariant_to_shifting_h():
    p = nn.init_params(4, 6, 0.3, 2, 2)
    x = np.random.default_rng(3).standard_normal((16, 2))
    hv = np.sin(x[:, 0])
    l1, g1 = nn.loss_and_grad(p, x, hv, hv.mean())
    l2, g2 = nn.loss_and_grad(p, x, hv + 7.0, (hv + 7.0).mean())
    assert abs(l1 - l2) < 1e-12
    np.testing.assert_allclose(g1, g2, atol=1e-12)


# train -----------------------------------------------------------------------------


class Scalar:
    def __init__(self, v):
        self.flat = np.array([v])


def test_adam_zero_gradient_leaves_parameters():
    p = nn.init_params(3, 4, 0.3, 1, 0)
    start = p.flat.copy()
    adam_step(AdamState(p.size), p, np.zeros(p.size), TrainConfig())
    np.testing.assert_array_equal(p.flat, start)


def test_adam_first_step_by_hand():
    # m = 0.1, v = 0.001, m_hat = v_hat = 1, step = lr / (1 + eps)
    s = Scalar(2.0)
    cfg = TrainConfig(lr=1e-3)
    adam_step(AdamState(1), s, np.array([1.0]), cfg)
    assert s.flat[0] == pytest.approx(2.0 - 1e-3 / (1.0 + 1e-8), rel=1e-15)


def test_empirical_loss_zero_network_and_shift():
    p = nn.init_params(4, 8, 0.3, 1, 0)
    ens = D.sample(BIMODAL, 200, 0)
    q = p.copy()
    q.flat[:] = 0.0
    assert evaluate_loss(q, ens, X) == 0.0
    assert abs(evaluate_loss(p, ens, X) - evaluate_loss(p, ens, X + 3.0)) < 1e-12


def test_empirical_loss_of_exact_potential_approaches_energy():
    z = np.linspace(-3.2, 3.2, 2**14 + 1)
    phi = D.exact_potential_1d(BIMODAL, X, z)
    K = D.exact_gain_1d(BIMODAL, X, z)
    J0 = D.variational_energy(BIMODAL, X, z, phi, K)
    Y = np.clip(D.sample(BIMODAL, 100_000, 3).positions[:, 0], -3.2, 3.2)
    c = Y - Y.mean()
    loss = np.mean(0.5 * D.exact_gain_1d(BIMODAL, X, Y) ** 2 - np.interp(Y, z, phi) * c)
    assert abs(loss - J0) < 0.02 * abs(J0)


def test_warm_start_reaches_cold_level_in_tenth_of_iterations():
    prob = flow.HomotopyProblem(PRIOR, WELL, steps=50, N=500)
    cold, warm = [], []
    for seed in range(3):
        X0 = D.sample(PRIOR, 500, seed)
        cfg = TrainConfig(N=500, seed=seed)
        p0, _ = train_gain(X0, WELL, cfg)
        X1 = flow.flow_step(X0, OracleSolver().fit(X0, WELL, density_model=prob.density_at(0.0)), prob.dt)
        _, tr_cold = train_gain(X1, WELL, cfg.replace_with(seed=seed + 100))
        _, tr_warm = train_gain(X1, WELL, cfg.replace_with(seed=seed + 100, T=cfg.T // 10), init=p0)
        cold.append(tr_cold.train_loss[-1])
        warm.append(tr_warm.train_loss[-1])
    assert np.mean(warm) <= np.mean(cold)


# baselines -------------------------------------------------------------------------


def test_galerkin_gaussian_constant_gain():
    var = 0.5
    ens = D.sample(D.Gaussian1D(0.0, var), 100_000, 0)
    for p in (2, 4):
        K = B.galerkin_gain(B.galerkin_fit(ens, X, p), np.linspace(-3, 3, 31) * math.sqrt(var))
        np.testing.assert_allclose(K[:, 0], var, rtol=0.05)


def test_galerkin_degree_one_by_hand():
    pts = np.array([-1.0, 0.5, 2.0, 3.0, -0.5])
    hv = pts**2
    c = hv - hv.mean()
    model = B.galerkin_fit(D.Ensemble(pts), _Square(), degree=1)
    assert model.gram[0, 0] == 1.0
    assert model.coef[0] == pytest.approx(np.sum(c * pts) / 5, rel=1e-14)


class _Square(D.ObservationFn):
    def _eval(self, pts):
        return pts[:, 0] ** 2


def test_dm_two_particles_by_hand():
    eps, r = 0.1, 0.3
    ens = D.Ensemble(np.array([0.0, r]))
    a = math.exp(-r * r / (4 * eps))
    T, _ = B.markov_matrix(ens.positions, eps)
    np.testing.assert_allclose(T, np.array([[1, a], [a, 1]]) / (1 + a), rtol=1e-14)
    model = B.dm_fit(ens, X, eps, tol=1e-14)
    # phi = (u, -u) with u = T-row residual: u (1 - (1 - a)/(1 + a)) = eps * c_1
    u = eps * (-r / 2) * (1 + a) / (2 * a)
    np.testing.assert_allclose(model.phi, [u, -u], rtol=1e-9)


def test_dm_beats_neural_on_bimodal_with_many_particles():
    ens = D.sample(BIMODAL, 1000, 0)
    Y = D.sample(BIMODAL, 1000, 1).positions
    Ke = D.exact_gain(BIMODAL, X, Y)
    dm = bench.gain_mse(make_solver("dm", eps=0.1).fit(ens, X).evaluate(Y), Ke)
    net = bench.gain_mse(NeuralSolver(TrainConfig(N=1000)).fit(ens, X).evaluate(Y), Ke)
    assert dm < net


# flow ------------------------------------------------------------------------------


def test_constant_likelihood_leaves_particles():
    prob = flow.HomotopyProblem(PRIOR, D.Constant(1.0), steps=4, N=20)
    traj = flow.run_flow(prob, OracleSolver())
    np.testing.assert_allclose(traj.positions[-1], traj.positions[0], atol=1e-12)


def test_gaussian_linear_step_shifts_by_variance():
    var = 0.7
    prob = flow.HomotopyProblem(D.Gaussian1D(0.0, var), X, steps=2, N=50, snapshot_times=(0.0, 1.0))
    traj = flow.run_flow(prob, OracleSolver())
    np.testing.assert_allclose(traj.positions[1] - traj.positions[0], -0.5 * var, rtol=1e-7)


def _oracle_step(x, t, dt):
    dens = D.HomotopyDensity(PRIOR, WELL, t)
    return x - dt * D.exact_gain_1d(dens, WELL, x)


def test_half_steps_differ_at_second_order():
    x = np.linspace(-2.5, 2.5, 21)
    diffs = []
    for dt in (0.1, 0.05, 0.025):
        full = _oracle_step(x, 0.2, dt)
        half = _oracle_step(_oracle_step(x, 0.2, dt / 2), 0.2 + dt / 2, dt / 2)
        diffs.append(np.max(np.abs(full - half)))
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.all((ratios > 3.0) & (ratios < 5.0))


def test_symmetric_flow_keeps_balance():
    prob = flow.HomotopyProblem(PRIOR, WELL, steps=50, N=500)
    final = flow.run_flow(prob, OracleSolver()).at(1.0)[:, 0]
    assert 0.45 <= np.mean(final > 0) <= 0.55


def test_flow_mse_within_monte_carlo_bound():
    prob = flow.HomotopyProblem(PRIOR, X, steps=10, N=10_000)
    times, mse = flow.flow_mse(prob, OracleSolver(), K=1)
    for t in prob.snapshot_times:
        dens = prob.density_at(t)
        mean = D.expectation(dens, D.psi_positive_part)
        var = D.expectation(dens, lambda z: D.psi_positive_part(z) ** 2) - mean**2
        assert mse[int(round(t * prob.steps))] <= 4 * var / prob.N


def test_flow_mse_of_zero_function_is_zero():
    prob = flow.HomotopyProblem(PRIOR, WELL, steps=2, N=20)
    _, mse = flow.flow_mse(prob, GalerkinSolver(), K=2, psi=lambda x: np.zeros(np.shape(x)[0]))
    assert np.all(mse == 0.0)
