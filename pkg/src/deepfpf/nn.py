"""Skip-connected feedforward potential network and its double backprop.

The network maps x in R^d to a scalar potential f(x; theta):

    h_1     = sq_lrelu(A_0 x + b_0)
    h_{l+1} = sigma_l(W_l h_l + A_l x + b_l),   l = 1..L-1

with leaky ReLU for l = 1..L-2 and identity for the output layer. The gain
is grad_x f. Training needs d/dtheta of a loss containing grad_x f, which
is computed by pushing a forward tangent (direction grad_x f) through the
reverse pass: d/dtheta (1/2)|grad_x f|^2 = d/deps grad_theta f(x + eps v)
with v = grad_x f held fixed.

All routines operate on batches: x has shape (n, d).
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import NumericError

SQ_LRELU = "sq_lrelu"
LRELU = "lrelu"
IDENTITY = "identity"


def activation_schedule(L):
    """Layer 0 squared leaky ReLU, middle layers leaky ReLU, output identity."""
    if L < 2:
        raise ValueError(f"need at least 2 layers, got {L}")
    return [SQ_LRELU] + [LRELU] * (L - 2) + [IDENTITY]


def _act(kind, z, alpha):
    """Return sigma(z), sigma'(z), sigma''(z); None marks an identically 1 or 0 derivative.

    sigma'(0) uses the leak branch.
    """
    if kind == IDENTITY:
        return z, None, None
    pos = z > 0
    slope = alpha + (1.0 - alpha) * pos
    lz = z * slope
    if kind == LRELU:
        return lz, slope, None
    return lz * lz, 2.0 * lz * slope, 2.0 * slope * slope


class NetworkParams:
    """Weights of the gain network stored in one flat float64 vector.

    ``W[l]``, ``A[l]``, ``b[l]`` are reshaped views into ``flat``, so an
    optimizer can update the whole network with a single vector operation.
    ``W[0]`` has zero columns: the first layer sees only ``A_0 x + b_0``.
    """

    def __init__(self, d, widths, alpha, flat=None):
        self.d = int(d)
        self.widths = [int(w) for w in widths]
        self.alpha = float(alpha)
        if self.widths[0] != 0 or self.widths[-1] != 1:
            raise ValueError(f"widths must start at 0 and end at 1, got {self.widths}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"leak parameter must lie in (0, 1), got {alpha}")
        self.L = len(self.widths) - 1
        self.activations = activation_schedule(self.L)
        self.shapes = []
        for l in range(self.L):
            out, inp = self.widths[l + 1], self.widths[l]
            self.shapes.append(((out, inp), (out, self.d), (out,)))
        self._slices = []
        pos = 0
        for layer in self.shapes:
            for shape in layer:
                n = math.prod(shape)
                self._slices.append((pos, pos + n, shape))
                pos += n
        size = pos
        if flat is None:
            flat = np.zeros(size)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (size,):
            raise ValueError(f"flat parameter vector has shape {flat.shape}, expected ({size},)")
        self.flat = flat
        self.W, self.A, self.b = self.views(flat)

    def views(self, vec):
        """Split a flat vector congruent to the parameters into (W, A, b) lists."""
        parts = [vec[lo:hi].reshape(shape) for lo, hi, shape in self._slices]
        return parts[0::3], parts[1::3], parts[2::3]

    @property
    def size(self):
        return self.flat.size

    def trainable_mask(self):
        """Boolean mask over ``flat``; False on W_0 entries (empty by construction)."""
        mask = np.ones(self.size, dtype=bool)
        mask[: self._slices[0][1]] = False
        return mask

    def copy(self):
        return NetworkParams(self.d, self.widths, self.alpha, self.flat.copy())

    def with_flat(self, flat):
        return NetworkParams(self.d, self.widths, self.alpha, flat)

    # serialization: shapes plus row-major value lists
    def to_dict(self):
        layers = []
        for l in range(self.L):
            layers.append({
                name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
                for name, arr in (("W", self.W[l]), ("A", self.A[l]), ("b", self.b[l]))
            })
        return {
            "format": "deepfpf.network/1",
            "d": self.d,
            "alpha": self.alpha,
            "widths": self.widths,
            "activations": self.activations,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, data):
        net = cls(data["d"], data["widths"], data["alpha"])
        for l, layer in enumerate(data["layers"]):
            for name, target in (("W", net.W), ("A", net.A), ("b", net.b)):
                shape = tuple(layer[name]["shape"])
                if shape != target[l].shape:
                    raise ValueError(f"layer {l} {name}: shape {shape} != {target[l].shape}")
                target[l][...] = np.asarray(layer[name]["values"], dtype=float).reshape(shape)
        return net

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return (
            isinstance(other, NetworkParams)
            and self.widths == other.widths
            and self.d == other.d
            and self.alpha == other.alpha
            and np.array_equal(self.flat, other.flat)
        )


def param_count(L, m, d):
    """Trainable parameters for depth L, width m, input dimension d."""
    first = m * d + m
    middle = (L - 2) * (m * m + m * d + m)
    last = m + d + 1
    return first + middle + last


def init_params(L, m, alpha, d, seed):
    """Glorot-uniform A_l and W_l (l >= 1), zero biases, W_0 empty."""
    if L < 2 or m < 1:
        raise ValueError(f"need L >= 2 and m >= 1, got L={L}, m={m}")
    widths = [0] + [m] * (L - 1) + [1]
    net = NetworkParams(d, widths, alpha)
    rng = np.random.default_rng(seed)
    for l in range(net.L):
        out, inp = widths[l + 1], widths[l]
        if inp:
            bound = np.sqrt(6.0 / (inp + out))
            net.W[l][...] = rng.uniform(-bound, bound, size=(out, inp))
        bound = np.sqrt(6.0 / (d + out))
        net.A[l][...] = rng.uniform(-bound, bound, size=(out, d))
    return net


def init_bound(params, l, which):
    """Largest |entry| ``init_params`` can produce for W or A of layer l."""
    out, inp = params.widths[l + 1], params.widths[l]
    fan = inp if which == "W" else params.d
    return np.sqrt(6.0 / (fan + out)) if fan else 0.0


def _points(params, x):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1 and not (arr.ndim == 1 and params.d == 1 and arr.size > 1)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if single else arr.reshape(-1, 1)
    if arr.shape[1] != params.d:
        raise ValueError(f"input dimension {arr.shape[1]} does not match network dimension {params.d}")
    return arr, single


def _forward(params, X):
    """Return preactivations z, layer inputs hs, activation derivatives."""
    a = params.alpha
    zs, hs, d1, d2 = [], [], [], []
    h = None
    for l in range(params.L):
        z = X @ params.A[l].T + params.b[l]
        if l > 0:
            z += h @ params.W[l].T
        hs.append(h)
        h, s1, s2 = _act(params.activations[l], z, a)
        zs.append(z)
        d1.append(s1)
        d2.append(s2)
    return zs, hs, d1, d2, h[:, 0]


def _backward(params, d1):
    """Reverse pass seeded with df = 1. Returns dF/dz per layer and grad_x f."""
    n = d1[0].shape[0]
    gs = [None] * params.L
    delta = np.ones((n, 1))
    grad_x = np.zeros((n, params.d))
    for l in range(params.L - 1, -1, -1):
        g = delta if d1[l] is None else delta * d1[l]
        gs[l] = g
        grad_x += g @ params.A[l]
        if l > 0:
            delta = g @ params.W[l]
    return gs, grad_x


def forward(params, x):
    """Potential f(x; theta). Scalar for one point, (n,) for a batch."""
    X, single = _points(params, x)
    f = _forward(params, X)[-1]
    return float(f[0]) if single else f


def value_and_gain(params, x):
    X, single = _points(params, x)
    _, _, d1, _, f = _forward(params, X)
    _, grad_x = _backward(params, d1)
    if single:
        return float(f[0]), grad_x[0]
    return f, grad_x


def gain(params, x):
    """Gain grad_x f. Shape (d,) for one point, (n, d) for a batch."""
    return value_and_gain(params, x)[1]


def loss_and_grad(params, X, h_values, h_hat):
    """Empirical objective on a batch and its exact gradient in theta.

    loss = mean_i [ 1/2 |grad_x f(X_i)|^2 - f(X_i) (h_i - h_hat) ]

    Returns ``(loss, grad)`` with ``grad`` a flat vector congruent to
    ``params.flat``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, params.d)
    n = X.shape[0]
    c = np.asarray(h_values, dtype=float) - h_hat
    zs, hs, d1, d2, f = _forward(params, X)
    gs, v = _backward(params, d1)

    # forward tangent of the whole forward pass along v = grad_x f
    zdot, hdot = [], [None]
    hd = None
    for l in range(params.L):
        zd = v @ params.A[l].T
        if l > 0:
            zd += hd @ params.W[l].T
        zdot.append(zd)
        hd = zd if d1[l] is None else d1[l] * zd
        hdot.append(hd)

    grad = np.zeros(params.size)
    gW, gA, gb = params.views(grad)
    delta_dot = None  # stays None while every layer above has sigma'' == 0
    delta = None
    inv_n = 1.0 / n
    cc = c[:, None]
    for l in range(params.L - 1, -1, -1):
        g = gs[l]
        # tangent of g_l = delta_{l+1} * sigma'(z_l)
        gdot = None
        if delta_dot is not None:
            gdot = delta_dot if d1[l] is None else delta_dot * d1[l]
        if d2[l] is not None:
            curv = (1.0 if delta is None else delta) * d2[l] * zdot[l]
            gdot = curv if gdot is None else gdot + curv
        G = -cc * g if gdot is None else gdot - cc * g
        if l > 0:
            gW[l][...] = (G.T @ hs[l] + g.T @ hdot[l]) * inv_n
        gA[l][...] = (G.T @ X + g.T @ v) * inv_n
        gb[l][...] = G.sum(axis=0) * inv_n
        if l > 0:
            if gdot is not None:
                delta_dot = gdot @ params.W[l]
            delta = g @ params.W[l]

    loss = (0.5 * np.einsum("ij,ij->", v, v) - f @ c) * inv_n
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient", where=_first_bad_layer(zs))
    return loss, grad


def _first_bad_layer(zs):
    for l, z in enumerate(zs):
        if not np.all(np.isfinite(z)):
            return f"layer {l}"
    return "output"


def objective(params, X, h_values, h_hat):
    """Empirical objective without the gradient."""
    X = np.asarray(X, dtype=float).reshape(-1, params.d)
    f, v = value_and_gain(params, X)
    c = np.asarray(h_values, dtype=float) - h_hat
    return float(np.mean(0.5 * np.sum(v * v, axis=1) - f * c))
