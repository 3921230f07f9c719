"""Velocity and denoiser matching: learn the probability-flow drift from data.

A training batch pairs uniform times t ~ Unif[0, T] with prior draws
X_0 ~ N(0, I) and data draws X_1, and regresses either

* the velocity target  Y_t = dalpha X_0 + dbeta X_1  against  b(t, X_t), or
* the normalized denoiser target  (X_1 - c_skip X_t)/c_out  against
  F(c_noise(t), c_in(t) X_t), the unit-variance parameterization under which
  the effective loss weight is identically 1.

Both losses return exact parameter gradients.  ``train`` runs plain Adam on
fresh batches, one substream per iteration, so runs are reproducible from
the config seed alone.

Field callables produced here follow one convention package-wide:
``f(t, X) -> (m, d)`` where t is a scalar or an (m,) array and X is (m, d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net as nets
from .net import AdamState, Net, NetSpec
from .rng import Rng
from .schedule import Schedule, denoiser_coeffs

__all__ = [
    "InterpolantBatch",
    "TrainConfig",
    "TrainingDiverged",
    "draw_batch",
    "velocity_loss",
    "denoiser_loss",
    "train",
    "velocity_from_denoiser",
    "make_velocity",
    "make_denoiser",
    "denoiser_to_velocity_field",
    "estimate_sigma_data",
    "default_stop_time",
    "clip_gradient",
]


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries the partial loss log."""

    def __init__(self, message, losses):
        super().__init__(message)
        self.losses = losses


def clip_gradient(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    """Rescale the gradient to the given norm when it exceeds it (None: off)."""
    if max_norm is None or max_norm <= 0:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass(frozen=True)
class InterpolantBatch:
    """Times, endpoint draws, interpolants and regression targets for one batch."""

    t: np.ndarray    # (m,)
    x0: np.ndarray   # (m, d)
    x1: np.ndarray   # (m, d)
    xt: np.ndarray   # (m, d) = alpha(t) x0 + beta(t) x1
    yt: np.ndarray   # (m, d) = dalpha(t) x0 + dbeta(t) x1

    @property
    def size(self) -> int:
        return self.t.shape[0]

    @property
    def dim(self) -> int:
        return self.x0.shape[1]


def default_stop_time(schedule: Schedule) -> float:
    """Fixed stop-time defaults: 0.99 (linear), 0.999 (follmer)."""
    return 0.99 if schedule.kind == "linear" else 0.999


@dataclass
class TrainConfig:
    schedule: Schedule
    net_spec: NetSpec
    stop_time: float = 0.99
    iterations: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "velocity"           # "velocity" | "denoiser"
    sigma_data: float | None = None  # None -> estimated from the training set
    clip_grad_norm: float | None = None

    def __post_init__(self):
        if not 0.5 < self.stop_time < 1.0:
            raise ValueError("stop_time must lie in (0.5, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.loss not in ("velocity", "denoiser"):
            raise ValueError(f"unknown loss kind {self.loss!r}")


def draw_batch(data: np.ndarray, schedule: Schedule, T: float, m: int, seed: int | Rng) -> InterpolantBatch:
    """t ~ Unif[0, T], X_0 ~ N(0, I), X_1 with replacement from data."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("data must be nonempty")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    d = data.shape[1]
    t = T * rng.uniform(m)
    x0 = rng.normal((m, d))
    x1 = data[rng.integers(data.shape[0], m)]
    a, b, da, db = schedule.coeffs(t)
    xt = a[:, None] * x0 + b[:, None] * x1
    yt = da[:, None] * x0 + db[:, None] * x1
    return InterpolantBatch(t=t, x0=x0, x1=x1, xt=xt, yt=yt)


def _net_input(net: Net, t, X) -> np.ndarray:
    tf = nets.time_features(t, net.spec.time_features, net.spec.fourier_k)
    if tf.shape[0] == 1 and X.shape[0] > 1:
        tf = np.broadcast_to(tf, (X.shape[0], tf.shape[1]))
    return np.concatenate([tf, X], axis=1)


def velocity_loss(net: Net, batch: InterpolantBatch):
    """Mean squared velocity-matching residual and its exact parameter gradient."""
    inp = _net_input(net, batch.t, batch.xt)
    pred = nets.forward_batch(net, inp)
    resid = pred - batch.yt
    m = batch.size
    loss = float(np.sum(resid * resid)) / m
    if not np.isfinite(loss):
        raise RuntimeError("non-finite velocity loss")
    grad, _ = nets.grad_batch(net, inp, (2.0 / m) * resid)
    return loss, grad


def denoiser_loss(net: Net, batch: InterpolantBatch, sigma_data: float, schedule: Schedule):
    """Normalized denoiser-matching loss: mean ||F_pred - F_target||^2.

    F_pred = F(c_noise(t), c_in(t) X_t); F_target = (X_1 - c_skip X_t)/c_out.
    The uniform weight makes this the conditional-mean regression for the
    denoiser D(t,x) = c_skip x + c_out F(c_noise, c_in x).
    """
    c_in, c_skip, c_out, c_noise, _ = denoiser_coeffs(schedule, batch.t, sigma_data)
    inp = _net_input(net, c_noise, c_in[:, None] * batch.xt)
    pred = nets.forward_batch(net, inp)
    target = (batch.x1 - c_skip[:, None] * batch.xt) / c_out[:, None]
    resid = pred - target
    m = batch.size
    loss = float(np.sum(resid * resid)) / m
    if not np.isfinite(loss):
        raise RuntimeError("non-finite denoiser loss")
    grad, _ = nets.grad_batch(net, inp, (2.0 / m) * resid)
    return loss, grad


def estimate_sigma_data(data: np.ndarray) -> float:
    """Average per-coordinate standard deviation of the training set."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return float(np.mean(np.std(data, axis=0)))


def train(config: TrainConfig, data: np.ndarray):
    """Adam on fresh batches; returns (net, per-iteration losses).

    Iteration k draws its batch from substream 1+k of the config seed; the
    net is initialized from substream 0 (the seed itself).  iterations=0
    returns the freshly initialized net.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    net = nets.net_init(config.net_spec, config.seed)
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps).for_net(net)
    sigma_data = config.sigma_data
    if config.loss == "denoiser" and sigma_data is None:
        sigma_data = estimate_sigma_data(data)
    losses = []
    for it in range(config.iterations):
        batch = draw_batch(data, config.schedule, config.stop_time, config.batch_size,
                           Rng(config.seed, stream=1 + it))
        try:
            if config.loss == "velocity":
                loss, grad = velocity_loss(net, batch)
            else:
                loss, grad = denoiser_loss(net, batch, sigma_data, config.schedule)
            losses.append(loss)
            nets.adam_step(state, net, clip_gradient(grad, config.clip_grad_norm))
        except RuntimeError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", losses) from exc
    return net, losses


def velocity_from_denoiser(denoiser, schedule: Schedule, t, x) -> np.ndarray:
    """b(t, x) = (dalpha/alpha) x + beta (dbeta/beta - dalpha/alpha) D(t, x).

    Uses the pre-simplified closed forms for both time factors, so t = 0 is
    the limit form (for the follmer schedule b(0, x) = D(0, x)); singular at
    t = 1 where alpha vanishes.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    squeeze = np.asarray(x).ndim == 1
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
    dlog = schedule.dlog_alpha(t_arr)
    rate = schedule.rate(t_arr)
    out = dlog[:, None] * X + rate[:, None] * np.atleast_2d(denoiser(t, X))
    return out[0] if squeeze else out


def make_velocity(net: Net):
    """Wrap a velocity net as a field callable f(t, X) -> (m, d)."""

    def field_fn(t, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return nets.forward_batch(net, _net_input(net, t, X))

    return field_fn


def make_denoiser(net: Net, schedule: Schedule, sigma_data: float):
    """Wrap an F-net as the denoiser D(t, x) = c_skip x + c_out F(c_noise, c_in x)."""

    def denoiser_fn(t, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
        c_in, c_skip, c_out, c_noise, _ = denoiser_coeffs(schedule, t_arr, sigma_data)
        pred = nets.forward_batch(net, _net_input(net, c_noise, c_in[:, None] * X))
        return c_skip[:, None] * X + c_out[:, None] * pred

    return denoiser_fn


def denoiser_to_velocity_field(denoiser, schedule: Schedule):
    """Field callable applying the denoiser-to-velocity conversion pointwise."""

    def field_fn(t, X):
        return velocity_from_denoiser(denoiser, schedule, t, np.atleast_2d(X))

    return field_fn
