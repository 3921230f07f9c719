"""Minimal fully-connected network with explicit reverse-mode gradients.

The network is a plain MLP in double precision, stored as one flat parameter
vector so optimizers and checkpoints stay trivial.  Parameter layout is
layer-major: for each layer, the weight matrix W (out, in) in row-major
order, followed by the bias (out,).  Gradients are computed by hand-rolled
backprop; ``grad_batch`` returns both the parameter gradient of
``sum_i <upstream_i, f(x_i)>`` and the per-row input gradients, which is all
the vector-Jacobian machinery the training losses need.

Time conditioning is the caller's job: ``time_features`` embeds scalar times
either raw or as Fourier pairs [sin(2*pi*k*t), cos(2*pi*k*t)], k = 1..K, and
the velocity / generator modules concatenate those features with the state
before calling ``forward``.

Checkpoints are binary: a magic line, a provenance line, a JSON header (spec
plus caller extras), then the raw little-endian float64 parameter array;
they round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import Rng

__all__ = [
    "NetSpec",
    "Net",
    "AdamState",
    "time_features",
    "time_feature_dim",
    "net_init",
    "net_forward",
    "forward_batch",
    "net_grad",
    "grad_batch",
    "adam_step",
    "ema_update",
    "lipschitz_bound",
    "save_net",
    "load_net",
]

ACTIVATIONS = ("relu", "silu")
TIME_FEATURE_KINDS = ("raw", "fourier")

CHECKPOINT_MAGIC = b"CHARFLOW-NET-1\n"


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "relu"
    time_features: str = "raw"
    fourier_k: int = 4

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError("all layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.time_features not in TIME_FEATURE_KINDS:
            raise ValueError(f"unknown time feature kind {self.time_features!r}")
        if self.time_features == "fourier" and self.fourier_k < 1:
            raise ValueError("fourier_k must be >= 1")

    @property
    def layer_dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class Net:
    spec: NetSpec
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.spec.param_count,):
            raise ValueError(
                f"params length {self.params.shape} does not match spec ({self.spec.param_count},)"
            )

    def copy(self) -> "Net":
        return Net(self.spec, self.params.copy())


def time_feature_dim(kind: str, fourier_k: int = 4) -> int:
    return 1 if kind == "raw" else 2 * fourier_k


def time_features(t, kind: str, fourier_k: int = 4) -> np.ndarray:
    """Embed times (m,) as (m, f): raw -> t itself, fourier -> sin/cos pairs."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if kind == "raw":
        return t[:, None]
    if kind != "fourier":
        raise ValueError(f"unknown time feature kind {kind!r}")
    k = np.arange(1, fourier_k + 1)
    ang = 2.0 * np.pi * t[:, None] * k[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _unpack(net: Net):
    dims = net.spec.layer_dims
    layers = []
    off = 0
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = net.params[off : off + fan_in * fan_out].reshape(fan_out, fan_in)
        off += fan_in * fan_out
        b = net.params[off : off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def net_init(spec: NetSpec, seed: int) -> Net:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = Rng(seed)
    dims = spec.layer_dims
    chunks = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = limit * (2.0 * rng.uniform((fan_out, fan_in)) - 1.0)
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    return Net(spec, np.concatenate(chunks))


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    sig = 1.0 / (1.0 + np.exp(-z))
    return z * sig


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    sig = 1.0 / (1.0 + np.exp(-z))
    return sig * (1.0 + z * (1.0 - sig))


def forward_batch(net: Net, X: np.ndarray, want_cache: bool = False):
    """MLP forward pass on rows of X (m, input_dim)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.spec.input_dim:
        raise ValueError(f"input shape {X.shape} does not match input_dim {net.spec.input_dim}")
    layers = _unpack(net)
    act = net.spec.activation
    h = X
    pre, post = [], [X]
    for w, b in layers[:-1]:
        z = h @ w.T + b
        h = _act(z, act)
        if want_cache:
            pre.append(z)
            post.append(h)
    w, b = layers[-1]
    out = h @ w.T + b
    if want_cache:
        return out, (pre, post)
    return out


def net_forward(net: Net, x: np.ndarray) -> np.ndarray:
    """Forward pass on one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("net_forward expects a single input vector")
    return forward_batch(net, x[None, :])[0]


def grad_batch(net: Net, X: np.ndarray, upstream: np.ndarray, cache=None):
    """Reverse-mode gradients of sum_i <upstream_i, f(X_i)>.

    Returns ``(param_grad, input_grads)`` where param_grad is the flat
    gradient summed over the batch (fixed accumulation order: one matmul per
    layer) and input_grads has one row per input.  Pass the cache from
    ``forward_batch(..., want_cache=True)`` to skip the re-forward.
    """
    X = np.asarray(X, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (X.shape[0], net.spec.output_dim):
        raise ValueError(f"upstream shape {upstream.shape} does not match output_dim")
    layers = _unpack(net)
    act = net.spec.activation
    if cache is None:
        _, cache = forward_batch(net, X, want_cache=True)
    pre, post = cache

    grads = [None] * len(layers)
    delta = upstream
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = delta.T @ post[i]
        gb = delta.sum(axis=0)
        grads[i] = (gw, gb)
        delta = delta @ w
        if i > 0:
            delta = delta * _act_grad(pre[i - 1], act)
    param_grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return param_grad, delta


def net_grad(net: Net, x: np.ndarray, upstream: np.ndarray):
    """Gradients of <upstream, f(x)> w.r.t. params and the input vector."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (net.spec.output_dim,):
        raise ValueError("upstream length must equal output_dim")
    pg, ig = grad_batch(net, x[None, :], upstream[None, :])
    return pg, ig[0]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def for_net(self, net: Net) -> "AdamState":
        self.m = np.zeros_like(net.params)
        self.v = np.zeros_like(net.params)
        self.step = 0
        return self


def adam_step(state: AdamState, net: Net, grad: np.ndarray):
    """One Adam update with bias correction; mutates state and net in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != net.params.shape:
        raise ValueError("gradient length must match parameter count")
    if not np.all(np.isfinite(grad)):
        raise RuntimeError("non-finite gradient entries; training aborted")
    if state.m is None:
        state.for_net(net)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1**state.step)
    vhat = state.v / (1.0 - state.beta2**state.step)
    net.params -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state, net


def ema_update(ema: Net, live: Net, rate: float) -> Net:
    """ema <- rate * ema + (1 - rate) * live, elementwise on parameters."""
    if ema.spec != live.spec:
        raise ValueError("ema and live nets must share a spec")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    ema.params *= rate
    ema.params += (1.0 - rate) * live.params
    return ema


def lipschitz_bound(net: Net, n_iter: int = 64, seed: int = 0) -> float:
    """Product of per-layer spectral norms, estimated by power iteration.

    For ReLU (1-Lipschitz) this bounds the input-output Lipschitz constant;
    SiLU contributes an extra 1.1 factor per hidden layer (its derivative
    peaks just below 1.1).  Monitored, never enforced.
    """
    rng = Rng(seed)
    prod = 1.0
    for w, _ in _unpack(net):
        v = rng.normal((w.shape[1],))
        v /= np.linalg.norm(v)
        for _ in range(n_iter):
            u = w @ v
            nu = np.linalg.norm(u)
            if nu == 0.0:
                break
            v = w.T @ (u / nu)
            v /= np.linalg.norm(v)
        prod *= float(np.linalg.norm(w @ v))
    if net.spec.activation == "silu":
        prod *= 1.1 ** len(net.spec.hidden_dims)
    return prod


def save_net(path, net: Net, extra: dict | None = None, provenance: str = "charflow"):
    """Binary checkpoint: magic, provenance, JSON header, float64 params."""
    header = {
        "input_dim": net.spec.input_dim,
        "hidden_dims": list(net.spec.hidden_dims),
        "output_dim": net.spec.output_dim,
        "activation": net.spec.activation,
        "time_features": net.spec.time_features,
        "fourier_k": net.spec.fourier_k,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(f"# {provenance}\n".encode("utf-8"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(net.params.astype("<f8").tobytes())


def load_net(path):
    """Read a checkpoint written by save_net; returns (net, extra)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a charflow net checkpoint")
        fh.readline()  # provenance
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        params = np.frombuffer(fh.read(), dtype="<f8").copy()
    spec = NetSpec(
        input_dim=header["input_dim"],
        hidden_dims=tuple(header["hidden_dims"]),
        output_dim=header["output_dim"],
        activation=header["activation"],
        time_features=header["time_features"],
        fourier_k=header["fourier_k"],
    )
    return Net(spec, params), header["extra"]
