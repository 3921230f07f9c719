"""Closed-form ground truth for smoothed atomic-mixture targets.

For a target ``mixture of atoms u_j convolved with N(0, sigma^2 I)`` and an
interpolant ``X_t = alpha X_0 + beta X_1`` with Gaussian prior, the law of
``X_1`` given ``X_t = x`` is available in closed form: it is a Gaussian
mixture whose atom posterior has log-weights

    log w_j - ||x - beta u_j||^2 / (2 (alpha^2 + sigma^2 beta^2)),

computed here with max-subtracted log-sum-exp (atom separations of a few
sigma already underflow naive exponentials).  Everything else follows:

* denoiser  E[X_1|X_t=x] = (a^2 E[U] + sigma^2 b x) / (a^2 + sigma^2 b^2)
* velocity  b*(t,x) = c_u(t) E[U_{t,x}] + gamma(t) x, with
  gamma = (a da + sigma^2 b db)/(a^2 + sigma^2 b^2) and
  c_u = a (a db - da b)/(a^2 + sigma^2 b^2)
* score     (beta * denoiser - x)/alpha^2
* conditional covariance
  (a^2/(a^2+s^2 b^2))^2 cov(U) + s^2 a^2/(a^2+s^2 b^2) I.

The reference flow map integrates the exact velocity with classical RK4 and
Richardson step halving; it is the ground truth against which every learned
or discretized flow is measured.

All evaluators accept a single point ``x`` of shape (d,) or a batch (m, d),
and a scalar time or a per-row time array of shape (m,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule
from .target import TargetSpec, atomic_mixture

__all__ = [
    "OracleContext",
    "gamma_coefficient",
    "denoiser_exact",
    "velocity_exact",
    "score_exact",
    "conditional_cov_exact",
    "flow_exact",
    "manifold_decompose",
]


@dataclass(frozen=True)
class OracleContext:
    """A mixture target paired with a schedule; no Swiss-roll closed form exists."""

    spec: TargetSpec
    schedule: Schedule

    def __post_init__(self):
        if self.spec.variant == "swiss_roll":
            raise ValueError("oracles require a mixture target")


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _times(t, m, allow_zero=True, allow_one=False):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    if not allow_one and np.any(t >= 1.0):
        raise ValueError("t must be strictly below 1")
    if not allow_zero and np.any(t <= 0.0):
        raise ValueError("t must be strictly above 0")
    return np.broadcast_to(t, (m,)).astype(np.float64)


def _denominator(ctx, t):
    a = ctx.schedule.alpha(t)
    b = ctx.schedule.beta(t)
    return a, b, a * a + ctx.spec.sigma**2 * b * b


def posterior_atom_weights(ctx: OracleContext, t, x) -> np.ndarray:
    """(m, J) posterior probabilities over atoms given X_t = x."""
    X, _ = _as_batch(x)
    t = _times(t, X.shape[0])
    a, b, den = _denominator(ctx, t)
    diff = X[:, None, :] - b[:, None, None] * ctx.spec.atoms[None, :, :]
    logw = np.log(ctx.spec.weights)[None, :] - 0.5 * np.sum(diff * diff, axis=2) / den[:, None]
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def posterior_atom_mean(ctx: OracleContext, t, x) -> np.ndarray:
    """E[U_{t,x}]: the posterior mean over atom locations."""
    X, squeeze = _as_batch(x)
    w = posterior_atom_weights(ctx, t, X)
    mean = w @ ctx.spec.atoms
    return mean[0] if squeeze else mean


def gamma_coefficient(schedule: Schedule, sigma: float, t):
    """(a da + sigma^2 b db)/(a^2 + sigma^2 b^2): the linear-in-x velocity factor."""
    a, b, da, db = schedule.coeffs(t)
    return (a * da + sigma * sigma * b * db) / (a * a + sigma * sigma * b * b)


def denoiser_exact(ctx: OracleContext, t, x) -> np.ndarray:
    """E[X_1 | X_t = x] for the mixture target."""
    X, squeeze = _as_batch(x)
    t = _times(t, X.shape[0])
    a, b, den = _denominator(ctx, t)
    mean_u = posterior_atom_weights(ctx, t, X) @ ctx.spec.atoms
    s2 = ctx.spec.sigma**2
    out = (a * a / den)[:, None] * mean_u + (s2 * b / den)[:, None] * X
    return out[0] if squeeze else out


def velocity_exact(ctx: OracleContext, t, x) -> np.ndarray:
    """Probability-flow velocity, in the cancellation-free mixture form."""
    X, squeeze = _as_batch(x)
    t = _times(t, X.shape[0])
    a, b, den = _denominator(ctx, t)
    da = ctx.schedule.dalpha(t)
    db = ctx.schedule.dbeta(t)
    s2 = ctx.spec.sigma**2
    mean_u = posterior_atom_weights(ctx, t, X) @ ctx.spec.atoms
    c_u = a * (a * db - da * b) / den
    gam = (a * da + s2 * b * db) / den
    out = c_u[:, None] * mean_u + gam[:, None] * X
    return out[0] if squeeze else out


def score_exact(ctx: OracleContext, t, x) -> np.ndarray:
    """grad log rho_t(x) = (beta * E[X_1|X_t=x] - x)/alpha^2; singular at t = 0."""
    X, squeeze = _as_batch(x)
    t = _times(t, X.shape[0], allow_zero=False)
    a = ctx.schedule.alpha(t)
    b = ctx.schedule.beta(t)
    out = (b[:, None] * denoiser_exact(ctx, t, X) - X) / (a * a)[:, None]
    return out[0] if squeeze else out


def conditional_cov_exact(ctx: OracleContext, t, x) -> np.ndarray:
    """cov(X_1 | X_t = x), one (d, d) matrix per input row."""
    X, squeeze = _as_batch(x)
    t = _times(t, X.shape[0])
    a, _, den = _denominator(ctx, t)
    w = posterior_atom_weights(ctx, t, X)
    atoms = ctx.spec.atoms
    mean_u = w @ atoms
    second = np.einsum("mj,jp,jq->mpq", w, atoms, atoms)
    cov_u = second - np.einsum("mp,mq->mpq", mean_u, mean_u)
    ratio = (a * a / den)[:, None, None]
    gauss = (ctx.spec.sigma**2 * a * a / den)[:, None, None]
    eye = np.eye(ctx.spec.dim)[None, :, :]
    out = ratio * ratio * cov_u + gauss * eye
    return out[0] if squeeze else out


def flow_exact(ctx: OracleContext, t: float, s: float, x, tol: float = 1e-10,
               max_doublings: int = 18) -> np.ndarray:
    """Reference flow map g*(t, s, x) by RK4 with Richardson step halving.

    Integrates dx/dtau = velocity_exact(tau, x) from t to s, doubling the
    step count until two successive refinements agree within tol in the
    max norm.  Raises if the budget of doublings is exhausted.
    """
    if not 0.0 <= t <= s <= 0.999:
        raise ValueError("flow_exact requires 0 <= t <= s <= 0.999")
    X, squeeze = _as_batch(x)
    if s == t:
        return (X[0] if squeeze else X).copy()
    prev = _rk4(ctx, t, s, X, 8)
    steps = 16
    for _ in range(max_doublings):
        cur = _rk4(ctx, t, s, X, steps)
        if float(np.max(np.abs(cur - prev))) < tol:
            return cur[0] if squeeze else cur
        prev = cur
        steps *= 2
    raise RuntimeError(f"flow_exact did not converge to tol={tol} within {steps // 2} steps")


def _rk4(ctx, t, s, X, steps):
    h = (s - t) / steps
    y = X.copy()
    for k in range(steps):
        tk = t + k * h
        k1 = velocity_exact(ctx, tk, y)
        k2 = velocity_exact(ctx, tk + 0.5 * h, y + 0.5 * h * k1)
        k3 = velocity_exact(ctx, tk + 0.5 * h, y + 0.5 * h * k2)
        k4 = velocity_exact(ctx, tk + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def manifold_decompose(ctx: OracleContext, t, x):
    """Split the velocity of an embedded target into tangential and normal parts.

    Returns ``(tangential, normal, gamma)`` with

        tangential = P b_low(t, P^T x)   (low-dim oracle on the pre-embedding mixture)
        normal     = gamma(t) (I - P P^T) x

    whose sum equals ``velocity_exact`` on the embedded target.
    """
    if ctx.spec.variant != "embedded" or ctx.spec.frame is None:
        raise ValueError("manifold_decompose requires an embedded target with a frame")
    P = ctx.spec.frame
    X, squeeze = _as_batch(x)
    t = _times(t, X.shape[0])
    low_spec = atomic_mixture(ctx.spec.atoms @ P, sigma=ctx.spec.sigma, weights=ctx.spec.weights)
    low_ctx = OracleContext(low_spec, ctx.schedule)
    tangential = velocity_exact(low_ctx, t, X @ P) @ P.T
    gam = gamma_coefficient(ctx.schedule, ctx.spec.sigma, t)
    normal = gam[:, None] * (X - (X @ P) @ P.T)
    if squeeze:
        return tangential[0], normal[0], float(gam[0])
    return tangential, normal, gam
