"""Small fully convolutional biomass regressor with hand-written backpropagation.

Layout is NHWC. Each 3x3 convolution pads by edge replication so the
15x15 patch keeps its size; every convolution is followed by a rectifier.
The last feature map is averaged over the patch and fed to two linear
heads: the mean and a scale that a softplus maps to a positive standard
deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ShapeError

PATCH = 15
N_INPUTS = 4          # height, height uncertainty, sin(lat), cos(lat)
PAPER_DEPTHS = (16, 32, 64, 128, 128, 128)
SIGMA_EPS = 1e-3


@dataclass
class Normalisation:
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_INPUTS))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(N_INPUTS))
    t_mean: float = 0.0
    t_std: float = 1.0

    def to_json(self) -> dict:
        return {"in_mean": [float(v) for v in self.in_mean], "in_std": [float(v) for v in self.in_std],
                "t_mean": float(self.t_mean), "t_std": float(self.t_std)}

    @classmethod
    def from_json(cls, d) -> "Normalisation":
        return cls(np.asarray(d["in_mean"], dtype=np.float64), np.asarray(d["in_std"], dtype=np.float64),
                   float(d["t_mean"]), float(d["t_std"]))

    @classmethod
    def fit(cls, X, y) -> "Normalisation":
        """Height channels standardised from data; latitude channels left as is."""
        X = np.asarray(X, dtype=np.float64)
        m = np.zeros(X.shape[-1])
        s = np.ones(X.shape[-1])
        for c in (0, 1):
            v = X[..., c]
            m[c] = v.mean()
            s[c] = v.std() if v.std() > 0 else 1.0
        y = np.asarray(y, dtype=np.float64)
        ts = float(y.std()) if y.size and y.std() > 0 else 1.0
        return cls(m, s, float(y.mean()) if y.size else 0.0, ts)


@dataclass
class AgbdNet:
    """Parameters of one network; ``depths`` lists the convolution widths."""

    depths: tuple[int, ...]
    params: dict
    norm: Normalisation = field(default_factory=Normalisation)
    seed: int = 0

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.depths)):
            names += [f"conv{i}.w", f"conv{i}.b"]
        return names + ["mu.w", "mu.b", "s.w", "s.b"]

    def astype(self, dtype) -> "AgbdNet":
        return AgbdNet(self.depths, {k: v.astype(dtype) for k, v in self.params.items()}, self.norm, self.seed)

    def copy(self) -> "AgbdNet":
        return AgbdNet(self.depths, {k: v.copy() for k, v in self.params.items()}, self.norm, self.seed)


def init_net(depths=PAPER_DEPTHS, seed: int = 0, n_inputs: int = N_INPUTS, dtype=np.float32,
             norm: Normalisation | None = None) -> AgbdNet:
    """He-normal convolutions, small heads; the scale head starts at softplus(b) = 1."""
    rng = np.random.default_rng(seed)
    params = {}
    cin = n_inputs
    for i, cout in enumerate(depths):
        params[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), (cin, 3, 3, cout))
        params[f"conv{i}.b"] = np.zeros(cout)
        cin = cout
    params["mu.w"] = rng.normal(0.0, np.sqrt(1.0 / cin), (cin,))
    params["mu.b"] = np.zeros(1)
    params["s.w"] = rng.normal(0.0, 0.1 * np.sqrt(1.0 / cin), (cin,))
    params["s.b"] = np.full(1, np.log(np.expm1(1.0)))
    params = {k: v.astype(dtype) for k, v in params.items()}
    return AgbdNet(tuple(int(d) for d in depths), params, norm or Normalisation(), seed)


def _im2col(x):
    """(N,H,W,C) -> (N*H*W, C*9) with edge-replicated padding."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))        # (N,H,W,C,3,3)
    return win.reshape(n * h * w, c * 9)


def _col2im(dcols, shape):
    """Adjoint of :func:`_im2col`, folding padded-border gradients back onto the edges."""
    n, h, w, c = shape
    d = dcols.reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky : ky + h, kx : kx + w, :] += d[..., ky, kx]
    dr = dxp[:, 1:-1]
    dr[:, 0] += dxp[:, 0]
    dr[:, -1] += dxp[:, -1]
    dx = dr[:, :, 1:-1]
    dx[:, :, 0] += dr[:, :, 0]
    dx[:, :, -1] += dr[:, :, -1]
    return np.ascontiguousarray(dx)


def _check_input(net: AgbdNet, x):
    x = np.asarray(x)
    cin = net.params["conv0.w"].shape[0]
    if x.ndim != 4 or x.shape[1:] != (PATCH, PATCH, cin):
        raise ShapeError(f"expected patches (N, {PATCH}, {PATCH}, {cin}), got {x.shape}")
    return x


def forward(net: AgbdNet, x, keep: bool = False):
    """Raw outputs on normalised input: ``(mu_n, s)`` plus the cache when ``keep``.

    ``mu = t_mean + t_std * mu_n`` and ``sigma = t_std * (softplus(s) + eps)``.
    """
    x = _check_input(net, x)
    dt = net.params["conv0.w"].dtype
    a = x.astype(dt, copy=False)
    cache = []
    for i in range(len(net.depths)):
        wgt = net.params[f"conv{i}.w"]
        n, h, w, c = a.shape
        cols = _im2col(a)
        z = cols @ wgt.reshape(c * 9, -1) + net.params[f"conv{i}.b"]
        if keep:
            cache.append((cols, z, a.shape))
        a = np.maximum(z, 0).reshape(n, h, w, -1)
    g = a.mean(axis=(1, 2))
    mu_n = g @ net.params["mu.w"] + net.params["mu.b"][0]
    s = g @ net.params["s.w"] + net.params["s.b"][0]
    if keep:
        return mu_n, s, (cache, a.shape, g)
    return mu_n, s


def outputs(net: AgbdNet, mu_n, s):
    """Physical mean and standard deviation from raw head outputs."""
    nm = net.norm
    mu = nm.t_mean + nm.t_std * mu_n.astype(np.float64)
    sigma = nm.t_std * (np.logaddexp(0.0, s.astype(np.float64)) + SIGMA_EPS)
    return mu, sigma


def normalise_inputs(net: AgbdNet, x):
    x = np.asarray(x, dtype=np.float64)
    return (x - net.norm.in_mean) / net.norm.in_std


def net_forward(net: AgbdNet, patches):
    """(mu, sigma) for raw patches (N,15,15,4) or a single (15,15,4) patch; mu clamped at 0."""
    p = np.asarray(patches)
    single = p.ndim == 3
    if single:
        p = p[None]
    xn = normalise_inputs(net, p)
    mu, sigma = outputs(net, *forward(net, xn))
    mu = np.maximum(mu, 0.0)
    return (mu[0], sigma[0]) if single else (mu, sigma)


def nll(mu, sigma, y, w=None) -> np.ndarray:
    """Per-sample Gaussian negative log-likelihood without the constant."""
    r = y - mu
    out = np.log(sigma) + r * r / (2.0 * sigma * sigma)
    return out if w is None else w * out


def loss_and_grad(net: AgbdNet, xn, y, w=None):
    """Mean weighted NLL over the batch and its gradient for every parameter.

    ``xn`` must already be normalised (see :func:`normalise_inputs`).
    """
    n = xn.shape[0]
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    mu_n, s, (cache, shape_last, g) = forward(net, xn, keep=True)
    mu, sigma = outputs(net, mu_n, s)
    loss = float(np.sum(nll(mu, sigma, y, w)) / n)
    r = y - mu
    dmu = -w * r / (sigma * sigma) / n
    dsig = w * (1.0 / sigma - r * r / sigma ** 3) / n
    t_std = net.norm.t_std
    dt = net.params["conv0.w"].dtype
    dmu_n = (dmu * t_std).astype(dt)
    ds = (dsig * t_std * expit(s.astype(np.float64))).astype(dt)

    grads = {
        "mu.w": g.T @ dmu_n, "mu.b": np.array([dmu_n.sum()], dtype=dt),
        "s.w": g.T @ ds, "s.b": np.array([ds.sum()], dtype=dt),
    }
    dg = np.outer(dmu_n, net.params["mu.w"]) + np.outer(ds, net.params["s.w"])
    nb, h, wd, c = shape_last
    da = np.broadcast_to(dg[:, None, None, :] / (h * wd), shape_last)
    for i in range(len(net.depths) - 1, -1, -1):
        cols, z, in_shape = cache[i]
        dz = da.reshape(z.shape) * (z > 0)
        wgt = net.params[f"conv{i}.w"]
        grads[f"conv{i}.w"] = (cols.T @ dz).reshape(wgt.shape)
        grads[f"conv{i}.b"] = dz.sum(axis=0)
        if i > 0:
            da = _col2im(dz @ wgt.reshape(-1, wgt.shape[-1]).T, in_shape)
    return loss, grads
