"""Fast invariant checks run by ``deepfpf validate``.

Each check returns ``(ok, detail)``. ``run_all`` prints one PASS/FAIL line
per property and returns the number of failures.
"""

from __future__ import annotations

import numpy as np

from . import baselines, density, nn
from .density import Constant, Coordinate, Gaussian1D, Mixture1D, QuadraticWell
from .solvers import make_solver
from .train import TrainConfig, train_gain

# Bound on the normalized weak-form residual |r_psi| / (||psi'|| ||K_0||) of a
# default network on the bimodal example (psi in {x, x^2, x^3}, 10^4 fresh
# samples). By Cauchy-Schwarz this is at most the relative L2 gain error.
# Over seeds 0-19 the largest value was 0.243; the exact gain stays below 0.03
# and the zero network scores 0.70.
WEAK_FORM_BOUND = 0.35
KINK_MARGIN = 1e-3


def random_network(L, m, d, seed, scale=0.3):
    """Initialized network with nonzero biases so kinks are spread out."""
    params = nn.init_params(L, m, 0.3, d, seed)
    rng = np.random.default_rng([seed, 7])
    mask = params.trainable_mask()
    params.flat[mask] += scale * rng.standard_normal(mask.sum())
    return params


def kink_free(params, X, margin=KINK_MARGIN):
    """Rows of X whose preactivations all stay ``margin`` away from zero."""
    keep = np.ones(len(X), dtype=bool)
    zs = nn._forward(params, X)[0]
    for z, act in zip(zs, params.activations):
        if act != nn.IDENTITY:
            keep &= np.all(np.abs(z) > margin, axis=1)
    return keep


def check_param_gradient(loss_and_grad=None, seed=0, d=2, batch=16, step=1e-6, rtol=1e-4):
    # looked up at call time so a patched nn.loss_and_grad is what gets checked
    loss_and_grad = loss_and_grad or nn.loss_and_grad
    params = random_network(4, 8, d, seed)
    rng = np.random.default_rng([seed, 11])
    X = rng.standard_normal((4 * batch, d))
    X = X[kink_free(params, X)][:batch]
    hv = np.sin(X[:, 0]) + X[:, -1] ** 2
    h_hat = float(hv.mean()) + 0.1
    _, grad = loss_and_grad(params, X, hv, h_hat)
    fd = np.empty_like(grad)
    for k in range(params.size):
        up, down = params.copy(), params.copy()
        up.flat[k] += step
        down.flat[k] -= step
        fd[k] = (nn.objective(up, X, hv, h_hat) - nn.objective(down, X, hv, h_hat)) / (2 * step)
    err = float(np.max(np.abs(grad - fd)) / np.max(np.abs(fd)))
    return err < rtol, f"max rel. error {err:.2e} over {params.size} parameters"


def check_input_gradient(seed=0, d=2, n=100, step=1e-5, rtol=1e-5):
    params = random_network(4, 8, d, seed)
    rng = np.random.default_rng([seed, 12])
    X = rng.standard_normal((3 * n, d))
    X = X[kink_free(params, X, margin=10 * step)][:n]
    G = nn.gain(params, X)
    fd = np.stack([
        (nn.forward(params, X + step * e) - nn.forward(params, X - step * e)) / (2 * step)
        for e in np.eye(d)
    ], axis=1)
    err = float(np.max(np.linalg.norm(G - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-12)))
    return err < rtol, f"max rel. error {err:.2e} at {len(X)} points"


def check_energy_identity(rtol=1e-6):
    """J(phi) - J(phi_0) equals half the squared L2(rho) gradient gap."""
    model, h = Mixture1D.bimodal(0.2), Coordinate(0)
    lo, hi = model.support_window()
    z = np.linspace(lo, hi, 2**16 + 1)
    phi0 = density.exact_potential_1d(model, h, z)
    K = density.exact_gain_1d(model, h, z)
    J0 = density.variational_energy(model, h, z, phi0, K)
    worst = 0.0
    for p, dp in ((0.3 * np.sin(2 * z) + 0.1 * z**2, 0.6 * np.cos(2 * z) + 0.2 * z),
                  (0.05 * z**3, 0.15 * z**2)):
        gap = 0.5 * np.trapezoid(dp**2 * model.pdf(z), z)
        J = density.variational_energy(model, h, z, phi0 + p, K + dp)
        worst = max(worst, abs((J - J0) - gap) / gap)
    return worst < rtol, f"max rel. deviation {worst:.2e}"


def weak_form_residuals(K_fn, model, h, n=10_000, seed=0, normalize=True):
    """mean[K(Y) psi'(Y) - (h(Y) - hbar) psi(Y)] for psi in {x, x^2, x^3}.

    With ``normalize`` each residual is divided by the empirical
    ||psi'|| * ||K_0|| (K_0 the quadrature gain), making it scale-free.
    """
    Y = density.sample(model, n, seed).positions
    x = Y[:, 0]
    K = K_fn(Y)[:, 0]
    c = h(Y) - h(Y).mean()
    k0 = np.sqrt(np.mean(density.exact_gain(model, h, Y)[:, 0] ** 2)) if normalize else 1.0
    out = []
    for psi, dpsi in ((x, np.ones_like(x)), (x**2, 2 * x), (x**3, 3 * x**2)):
        r = float(np.mean(K * dpsi - c * psi))
        out.append(r / (np.sqrt(np.mean(dpsi**2)) * k0) if normalize else r)
    return out


def check_weak_form(seed=0, bound=WEAK_FORM_BOUND):
    model, h = Mixture1D.bimodal(0.2), Coordinate(0)
    cfg = TrainConfig(seed=seed)
    params, _ = train_gain(density.sample(model, cfg.N, seed), h, cfg)
    res = weak_form_residuals(lambda Y: nn.gain(params, Y), model, h, seed=seed + 101)
    worst = max(abs(r) for r in res)
    return worst < bound, "residuals " + ", ".join(f"{r:+.3f}" for r in res) + f" (bound {bound})"


def check_constant_h(seed=0, tol=0.05):
    """Constant observation gives (near) zero gain for all three solvers."""
    ens = density.sample(Mixture1D.bimodal(0.2), 100, seed)
    h = Constant(1.5)
    out = []
    ok = True
    for name, opts in (("neural", {"cfg": TrainConfig(seed=seed)}), ("galerkin", {}), ("dm", {})):
        solver = make_solver(name, **opts).fit(ens, h)
        val = float(np.mean(np.abs(solver.evaluate_particles())))
        limit = tol if name == "neural" else 1e-12
        ok &= val < limit
        out.append(f"{name} {val:.1e}")
    return ok, ", ".join(out)


def check_homotopy(tol=1e-6):
    prior, l = Gaussian1D(0.0, 1.0), QuadraticWell(2.0)
    worst = 0.0
    for t in (0.0, 0.5, 1.0):
        worst = max(worst, abs(density.expectation(density.HomotopyDensity(prior, l, t), np.ones_like) - 1.0))
    z = np.linspace(-6, 6, 101)
    ratio = density.homotopy_density(prior, l, 1.0, z) / (prior.pdf(z) * np.exp(-l(z)))
    spread = float(np.max(np.abs(ratio / ratio[0] - 1.0)))
    return worst < tol and spread < 1e-8, f"normalization error {worst:.1e}, ratio spread {spread:.1e}"


def check_dm(seed=0, tol=1e-9):
    ens = density.sample(Mixture1D.bimodal(0.2), 200, seed)
    model = baselines.dm_fit(ens, Coordinate(0), 0.1, tol=tol)
    rows = float(np.max(np.abs(model.T.sum(axis=1) - 1.0)))
    res = baselines.fixed_point_residual(model)
    ok = rows < 1e-12 and res < tol and np.all(model.T >= 0)
    return ok, f"row-sum error {rows:.1e}, fixed-point residual {res:.1e}"


def check_determinism(seed=3):
    model, h = Mixture1D.bimodal(0.2), Coordinate(0)
    cfg = TrainConfig(seed=seed, T=500)
    ens = density.sample(model, cfg.N, seed)
    a, _ = train_gain(ens, h, cfg)
    b, _ = train_gain(density.sample(model, cfg.N, seed), h, cfg)
    return a == b, "bit-identical parameters" if a == b else "parameters differ"


CHECKS = {
    "param_gradient": check_param_gradient,
    "input_gradient": check_input_gradient,
    "energy_identity": check_energy_identity,
    "weak_form_residual": check_weak_form,
    "constant_h_zero_gain": check_constant_h,
    "homotopy": check_homotopy,
    "diffusion_map": check_dm,
    "determinism": check_determinism,
}


def run_all(echo=print, checks=None):
    failures = 0
    for name, fn in (checks or CHECKS).items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failures += not ok
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return failures
