"""Adam training with early stopping, deep ensembles and CNET model files."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import FormatError, LengthError, TrainingDivergedError
from .net import AgbdNet, Normalisation, forward, init_net, loss_and_grad, net_forward, nll, normalise_inputs, \
    outputs

log = logging.getLogger(__name__)

LAT_ENCODING = "sin-cos(2*pi*lat_deg/180)"


@dataclass(frozen=True)
class NetConfig:
    depths: tuple[int, ...] = (16, 32, 64, 128, 128, 128)
    learning_rate: float = 1e-5
    batch_size: int = 256
    ensemble: int = 5
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if self.ensemble < 1 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError(f"invalid network config {self}")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(params[k].dtype)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def evaluate_nll(net: AgbdNet, xn, y, w=None, batch: int = 2048) -> float:
    total = 0.0
    for s in range(0, xn.shape[0], batch):
        mu, sigma = outputs(net, *forward(net, xn[s : s + batch]))
        total += float(np.sum(nll(mu, sigma, y[s : s + batch], None if w is None else w[s : s + batch])))
    return total / max(1, xn.shape[0])


def train_member(X, y, w, Xval, yval, config: NetConfig, member: int = 0, norm: Normalisation | None = None):
    """One ensemble member; returns ``(best_net, history)``.

    Initialisation uses seed ``config.seed + member``; the batch order comes
    from ``config.seed`` alone, so members differ only by initialisation.
    Early stopping watches the unweighted validation NLL once per epoch.
    """
    norm = norm or Normalisation.fit(X, y)
    dtype = np.dtype(config.dtype)
    net = init_net(config.depths, seed=config.seed + member, dtype=dtype, norm=norm)
    xn = normalise_inputs(net, X).astype(dtype)
    xv = normalise_inputs(net, Xval).astype(dtype) if len(Xval) else None
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=np.float64)
    opt = Adam(config.learning_rate)
    rng = np.random.default_rng(config.seed)
    hist = TrainHistory()
    best, best_val, stale = net.copy(), math.inf, 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(y.size)
        losses = []
        for s in range(0, y.size, config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, grads = loss_and_grad(net, xn[idx], y[idx], w[idx])
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDivergedError(
                    f"member {member}: non-finite loss {loss} at epoch {epoch}, batch {s // config.batch_size}; "
                    f"last epoch losses {hist.train_loss[-3:]}"
                )
            opt.step(net.params, grads)
            losses.append(loss * idx.size)
        hist.train_loss.append(float(np.sum(losses) / y.size))
        if xv is None:
            best, hist.best_epoch = net.copy(), epoch
            continue
        vl = evaluate_nll(net, xv, np.asarray(yval, dtype=np.float64))
        hist.val_loss.append(vl)
        if not math.isfinite(vl):
            raise TrainingDivergedError(f"member {member}: validation NLL {vl} at epoch {epoch}")
        if vl < best_val:
            best_val, best, stale, hist.best_epoch = vl, net.copy(), 0, epoch
        else:
            stale += 1
            if stale >= config.patience:
                hist.stopped_early = True
                break
        log.debug("member %d epoch %d train %.4f val %.4f", member, epoch, hist.train_loss[-1], vl)
    log.info("member %d: best epoch %d of %d", member, hist.best_epoch, len(hist.train_loss))
    return best, hist


@dataclass
class Ensemble:
    members: list[AgbdNet]
    config: NetConfig
    histories: list[TrainHistory] = field(default_factory=list)


def net_train(X, y, w, Xval, yval, config: NetConfig = NetConfig()) -> Ensemble:
    """Train ``config.ensemble`` members sharing one set of normalisation constants."""
    norm = Normalisation.fit(X, y)
    members, hists = [], []
    for m in range(config.ensemble):
        net, h = train_member(X, y, w, Xval, yval, config, m, norm)
        members.append(net)
        hists.append(h)
    return Ensemble(members, config, hists)


def combine(mus, sigmas):
    """Law of total variance across members: mean of means, mean variance plus variance of means."""
    mus = np.asarray(mus, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    mu = mus.mean(axis=0)
    var = (sigmas ** 2).mean(axis=0) + mus.var(axis=0)
    return mu, np.sqrt(var)


def ensemble_predict(ensemble: Ensemble | Sequence[AgbdNet], patches):
    members = ensemble.members if isinstance(ensemble, Ensemble) else list(ensemble)
    out = [net_forward(m, patches) for m in members]
    return combine([o[0] for o in out], [o[1] for o in out])


# ---------------------------------------------------------------- CNET files

MAGIC = b"CNET"
VERSION = 1


def encode_ensemble(ens: Ensemble) -> bytes:
    first = ens.members[0]
    names = first.param_names()
    header = {
        "config": asdict(ens.config),
        "depths": list(first.depths),
        "kernel": 3,
        "padding": "replicate",
        "activation": "relu",
        "head": "mean over patch; mu linear, sigma = t_std*(softplus(s)+eps)",
        "inputs": ["height", "height_sd", "sin_lat", "cos_lat"],
        "lat_encoding": LAT_ENCODING,
        "norm": first.norm.to_json(),
        "seeds": [m.seed for m in ens.members],
        "params": [[n, list(first.params[n].shape)] for n in names],
        "n_members": len(ens.members),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(m.params[n].astype("<f4").tobytes() for m in ens.members for n in names)
    return MAGIC + struct.pack("<HI", VERSION, len(hb)) + hb + blob


def decode_ensemble(buf: bytes) -> Ensemble:
    if buf[:4] != MAGIC:
        raise FormatError("not a CNET file")
    if len(buf) < 10:
        raise LengthError("truncated CNET header")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version > VERSION:
        raise FormatError(f"CNET version {version} is newer than supported {VERSION}")
    h = json.loads(buf[10 : 10 + hlen].decode("utf-8"))
    off = 10 + hlen
    cfg = dict(h["config"])
    cfg["depths"] = tuple(cfg["depths"])
    config = NetConfig(**cfg)
    norm = Normalisation.from_json(h["norm"])
    members = []
    for seed in h["seeds"]:
        params = {}
        for name, shape in h["params"]:
            n = int(np.prod(shape))
            if len(buf) < off + 4 * n:
                raise LengthError("truncated CNET parameter blob")
            params[name] = np.frombuffer(buf, "<f4", n, off).reshape(shape).astype(np.float32)
            off += 4 * n
        members.append(AgbdNet(tuple(h["depths"]), params, norm, int(seed)))
    if off != len(buf):
        raise LengthError(f"{len(buf) - off} trailing bytes in CNET file")
    return Ensemble(members, config)


def save_ensemble(path, ens: Ensemble) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ensemble(ens))
    return path


def load_ensemble(path) -> Ensemble:
    return decode_ensemble(Path(path).read_bytes())
