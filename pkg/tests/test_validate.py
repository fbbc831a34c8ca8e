import numpy as np

from deepfpf import density as D
from deepfpf import validate

BIMODAL = D.Mixture1D.bimodal(0.2)
X = D.Coordinate(0)


def test_weak_form_residual_separates_exact_and_zero_gain():
    exact = validate.weak_form_residuals(lambda Y: D.exact_gain(BIMODAL, X, Y), BIMODAL, X, seed=5)
    zero = validate.weak_form_residuals(np.zeros_like, BIMODAL, X, seed=5)
    assert max(map(abs, exact)) < 0.05
    assert abs(zero[0]) > 2 * validate.WEAK_FORM_BOUND


def test_unnormalized_residual_for_psi_x_is_gain_mean_minus_covariance():
    Y = D.sample(BIMODAL, 10_000, 2).positions[:, 0]
    r = validate.weak_form_residuals(lambda P: np.ones_like(P), BIMODAL, X, seed=2, normalize=False)
    assert abs(r[0] - (1.0 - np.mean((Y - Y.mean()) * Y))) < 1e-12


def test_kink_free_excludes_points_near_kinks():
    p = validate.random_network(3, 4, 1, 0)
    x = np.linspace(-3, 3, 2001)[:, None]
    keep = validate.kink_free(p, x, margin=0.05)
    assert 0 < keep.sum() < len(x)


def test_run_all_reports_each_check():
    lines = []
    checks = {"ok": lambda: (True, "fine"), "bad": lambda: (False, "broken"), "boom": lambda: 1 / 0}
    assert validate.run_all(lines.append, checks) == 2
    assert lines == ["PASS ok: fine", "FAIL bad: broken", "FAIL boom: ZeroDivisionError: division by zero"]
