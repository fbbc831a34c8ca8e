"""Batched Adam minimization of the empirical variational objective."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, NumericError

LOG_EVERY = 100


@dataclass(frozen=True)
class TrainConfig:
    L: int = 4
    m: int = 32
    alpha: float = 0.3
    M: int = 10
    N: int = 100
    T: int = 10_000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True
    replace: bool = False
    log_every: int = LOG_EVERY

    def __post_init__(self):
        if not 1 <= self.M <= self.N:
            raise ConfigError(f"batch size must satisfy 1 <= M <= N, got M={self.M}, N={self.N}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.L < 2 or self.m < 1:
            raise ConfigError(f"architecture needs L >= 2 and m >= 1, got L={self.L}, m={self.m}")

    def replace_with(self, **changes):
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)


class AdamState:
    """First/second moment accumulators congruent to a parameter vector."""

    def __init__(self, size, mask=None):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.mask = mask

    @classmethod
    def for_params(cls, params):
        mask = params.trainable_mask()
        return cls(params.size, None if mask.all() else mask)


def adam_step(state, params, grad, cfg):
    """Bias-corrected Adam update of ``params.flat`` in place.

    Masked-out entries (W_0) never move.
    """
    if grad.shape != params.flat.shape or state.m.shape != grad.shape:
        raise ValueError("gradient, optimizer state and parameters are not congruent")
    if not np.isfinite(grad.sum()):
        raise NumericError("non-finite gradient", where=f"iteration {state.t + 1}")
    if state.mask is not None:
        grad = grad * state.mask
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    # m_hat / (sqrt(v_hat) + eps) with both bias corrections folded into scalars
    c1 = 1.0 - b1**state.t
    c2 = math.sqrt(1.0 - b2**state.t)
    denom = np.sqrt(state.v)
    denom += cfg.eps * c2
    params.flat -= (cfg.lr * c2 / c1) * (state.m / denom)
    return state, params


@dataclass
class TrainTrace:
    iteration: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)

    def append(self, it, train, test):
        if self.iteration and it <= self.iteration[-1]:
            raise ValueError("trace iterations must be strictly increasing")
        self.iteration.append(int(it))
        self.train_loss.append(float(train))
        self.test_loss.append(float("nan") if test is None else float(test))

    def __len__(self):
        return len(self.iteration)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "test_loss"])
        for row in zip(self.iteration, self.train_loss, self.test_loss):
            w.writerow([row[0], repr(row[1]), repr(row[2])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        trace = cls()
        lines = [ln for ln in io.StringIO(text) if not ln.startswith("#")]
        for row in csv.DictReader(lines):
            trace.append(int(row["iteration"]), float(row["train_loss"]), float(row["test_loss"]))
        return trace


def _draw_batch(rng, n, m, replace):
    """Uniform batch indices; Floyd's algorithm keeps cost O(m) without replacement."""
    if replace:
        return rng.integers(0, n, size=m)
    if m == n:
        return np.arange(n)
    chosen = {}
    draws = (rng.random(m) * np.arange(n - m + 1, n + 1)).astype(np.intp)
    for j, r in zip(range(n - m, n), draws.tolist()):
        chosen[r if r not in chosen else j] = None
    return np.fromiter(chosen, dtype=np.intp, count=m)


def evaluate_loss(params, ensemble, h, h_hat=None):
    """Full-ensemble empirical objective. ``h_hat`` defaults to the ensemble mean of h."""
    X = ensemble.positions if hasattr(ensemble, "positions") else np.asarray(ensemble)
    hv = h(X)
    if h_hat is None:
        h_hat = float(np.mean(hv))
    return nn.objective(params, X, hv, h_hat)


def train_gain(ensemble, h, cfg, init=None, test_ensemble=None, callback=None):
    """Algorithm 1: T Adam steps on random batches of the ensemble.

    h_hat is the mean of h over the whole ensemble and stays fixed for the
    run. With ``init`` the network starts from a copy of those parameters.
    ``callback(it, params)`` runs at every logging step and may return True
    to stop early (used only by the warm-start diagnostics).
    """
    X = ensemble.positions
    n, d = X.shape
    if n < cfg.M:
        raise ConfigError(f"ensemble has {n} particles, fewer than batch size {cfg.M}")
    hv = h(X)
    h_hat = float(np.mean(hv))
    if init is not None:
        if init.d != d:
            raise ConfigError(f"initial network has input dimension {init.d}, ensemble has {d}")
        params = init.copy()
    else:
        params = nn.init_params(cfg.L, cfg.m, cfg.alpha, d, cfg.seed)
    state = AdamState.for_params(params)
    rng = np.random.default_rng([cfg.seed, 1])

    test_X = test_hv = None
    if test_ensemble is not None:
        test_X = test_ensemble.positions
        test_hv = h(test_X)
    trace = TrainTrace()

    def log(it):
        train = nn.objective(params, X, hv, h_hat)
        test = None
        if test_X is not None:
            # the test loss uses the test sample's own mean of h
            test = nn.objective(params, test_X, test_hv, float(np.mean(test_hv)))
        trace.append(it, train, test)
        return callback(it, params) if callback else False

    log_every = cfg.log_every
    if log_every and log(0):
        return params, trace
    for it in range(1, cfg.T + 1):
        idx = _draw_batch(rng, n, cfg.M, cfg.replace)
        try:
            _, grad = nn.loss_and_grad(params, X[idx], hv[idx], h_hat)
            adam_step(state, params, grad, cfg)
        except NumericError as exc:
            raise NumericError(str(exc), where=f"iteration {it}") from exc
        if log_every and it % log_every == 0 and log(it):
            break
    return params, trace
