"""Three-layer rectifier network that outputs N quantiles per action.

Parameters are plain numpy arrays so gradients can be checked against
finite differences and checkpoints written byte for byte.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

HIDDEN_SIZES = (120, 84)


@dataclass
class NetworkParams:
    weights: list  # weights[k] has shape (fan_out, fan_in)
    biases: list
    n_actions: int
    n_tau: int

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def obs_dim(self):
        return self.weights[0].shape[1]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.n_actions,
            self.n_tau,
        )

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class Gradients:
    weights: list
    biases: list

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, factor):
        return Gradients([factor * w for w in self.weights], [factor * b for b in self.biases])


def init(obs_dim, n_actions, n_tau, seed, hidden=HIDDEN_SIZES):
    """Fan-in scaled uniform weights, zero biases."""
    dims = [int(obs_dim), *map(int, hidden), int(n_actions) * int(n_tau)]
    if min(dims) < 1 or n_actions < 1 or n_tau < 1:
        raise ValueError(f"all dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases, int(n_actions), int(n_tau))


def _as_batch(params, obs):
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    batch = obs[None, :] if single else obs
    if batch.ndim != 2 or batch.shape[1] != params.obs_dim:
        raise ValueError(f"expected obs of width {params.obs_dim}, got shape {obs.shape}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("observation contains NaN or Inf")
    return batch, single


def forward(params, obs, return_cache=False):
    """Quantile estimates of shape (n_actions, n_tau), or (B, n_actions, n_tau)."""
    x, single = _as_batch(params, obs)
    acts = [x]
    pre = []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = x @ w.T + b
        pre.append(z)
        x = z if k == last else np.maximum(z, 0.0)
        acts.append(x)
    out = x.reshape(x.shape[0], params.n_actions, params.n_tau)
    if single:
        out = out[0]
    if return_cache:
        return out, (acts, pre)
    return out


def backward(params, obs, loss_grad, cache=None):
    """Reverse-mode gradients given d loss / d output."""
    x, single = _as_batch(params, obs)
    g = np.asarray(loss_grad, dtype=np.float64)
    expected = (params.n_actions, params.n_tau) if single else (x.shape[0], params.n_actions, params.n_tau)
    if g.shape != expected:
        raise ValueError(f"loss_grad shape {g.shape} does not match output {expected}")
    if cache is None:
        _, cache = forward(params, x, return_cache=True)
    acts, pre = cache
    delta = g.reshape(x.shape[0], -1)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0.0)
    return Gradients(gw, gb)


@dataclass
class OptimizerState:
    mode: str = "adam"
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k_alpha: float | None = None  # enables lr_t = k_alpha / (t + 1)
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    skipped: int = 0
    last_skipped: bool = False

    def __post_init__(self):
        if self.mode not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.mode!r}")
        if not self.lr > 0.0:
            raise ValueError("learning rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.k_alpha is not None and not self.k_alpha > 0.0:
            raise ValueError("k_alpha must be positive")

    def current_lr(self):
        if self.k_alpha is not None:
            return self.k_alpha / (self.t + 1)
        return self.lr


def step(params, grads, opt):
    """Apply one optimizer update and return new parameters.

    Non-finite gradients leave ``params`` untouched and set ``opt.last_skipped``.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        opt.skipped += 1
        opt.last_skipped = True
        return params
    opt.last_skipped = False
    lr = opt.current_lr()
    if opt.mode == "sgd":
        new = [p - lr * g for p, g in zip(p_arrays, g_arrays)]
    else:
        if not opt.m:
            opt.m = [np.zeros_like(p) for p in p_arrays]
            opt.v = [np.zeros_like(p) for p in p_arrays]
        t = opt.t + 1
        c1 = 1.0 - opt.beta1 ** t
        c2 = 1.0 - opt.beta2 ** t
        new = []
        for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
            opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
            opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g
            new.append(p - lr * (opt.m[i] / c1) / (np.sqrt(opt.v[i] / c2) + opt.eps))
    opt.t += 1
    return NetworkParams(new[0::2], new[1::2], params.n_actions, params.n_tau)


def soft_update(target, online, eta):
    """``eta * online + (1 - eta) * target``; ``eta == 1`` is a hard copy."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if target.dims != online.dims or target.n_tau != online.n_tau:
        raise ValueError("target and online networks have different shapes")
    if eta == 1.0:
        return online.copy()
    blend = [eta * o + (1.0 - eta) * t for t, o in zip(target.arrays(), online.arrays())]
    return NetworkParams(blend[0::2], blend[1::2], target.n_actions, target.n_tau)


# Checkpoint layout (all integers little-endian):
#   magic  b"RQCK"            4 bytes
#   version uint32            currently 1
#   header_len uint32
#   header  UTF-8 JSON, sorted keys, header_len bytes
#   payload float64 '<f8' arrays back to back in header["arrays"] order, row-major
# See docs/checkpoint_format.md.
CHECKPOINT_MAGIC = b"RQCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, opt=None, step_count=0, meta=None):
    arrays = [("params", i, a) for i, a in enumerate(params.arrays())]
    opt_header = None
    if opt is not None:
        opt_header = {
            "mode": opt.mode, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "k_alpha": opt.k_alpha, "t": opt.t, "skipped": opt.skipped,
            "has_moments": bool(opt.m),
        }
        if opt.m:
            arrays += [("adam_m", i, a) for i, a in enumerate(opt.m)]
            arrays += [("adam_v", i, a) for i, a in enumerate(opt.v)]
    header = {
        "dims": params.dims,
        "n_actions": params.n_actions,
        "n_tau": params.n_tau,
        "step": int(step_count),
        "optimizer": opt_header,
        "arrays": [{"group": g, "index": i, "shape": list(a.shape)} for g, i, a in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, opt, step, meta)``."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != CHECKPOINT_MAGIC or len(data) < 12:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    offset = 12 + hlen
    groups = {"params": [], "adam_m": [], "adam_v": []}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape)
        groups[spec["group"]].append(arr.astype(np.float64))
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    p = groups["params"]
    params = NetworkParams(p[0::2], p[1::2], header["n_actions"], header["n_tau"])
    if params.dims != header["dims"]:
        raise CheckpointError(f"{path}: layer dims disagree with header")
    opt = None
    oh = header.get("optimizer")
    if oh is not None:
        opt = OptimizerState(
            mode=oh["mode"], lr=oh["lr"], beta1=oh["beta1"], beta2=oh["beta2"],
            eps=oh["eps"], k_alpha=oh["k_alpha"], t=oh["t"], skipped=oh["skipped"],
        )
        if oh["has_moments"]:
            opt.m = groups["adam_m"]
            opt.v = groups["adam_v"]
    return params, opt, header["step"], header.get("meta", {})
