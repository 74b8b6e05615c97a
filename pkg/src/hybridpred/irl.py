"""
Continuous maximum-entropy IRL with a Laplace-approximated likelihood.

The predicted vehicle's cost over a horizon of ``N`` steps is linear in
four per-step features::

    proximity   exp(-(dist / proximity_scale)**2)    dist = Cartesian center distance
    speed_gap   (v - v_limit)**2             v = ds/dt by backward difference
    accel       a**2                         a = dv/dt by backward difference
    lateral_dev d**2                         d = offset from the target lane

Derivatives with respect to the flattened predicted trajectory
``[s_1, d_1, ..., s_N, d_N]`` are taken by central finite differences.
Because the cost is linear in the weights, the finite differences are
taken once per feature and contracted with the weights afterwards.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import Diverged, LengthMismatch, NonFiniteCost, SingularHessian
from .geometry import Trajectory, frenet_pose
from .optim import spg_minimize

log = logging.getLogger(__name__)

__all__ = [
    "FEATURE_NAMES",
    "CostWeights",
    "CostContext",
    "features",
    "feature_sums",
    "cumulative_cost",
    "feature_derivatives",
    "regularize_hessian",
    "cost_gradient_hessian",
    "demo_log_likelihood",
    "log_likelihood",
    "MaxEntIRL",
    "train_irl",
    "project_simplex",
]

FEATURE_NAMES = ("proximity", "speed_gap", "accel", "lateral_dev")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Nonnegative feature weights.

    ``theta`` is the direction reported by training (unit L1 norm after
    :func:`train_irl`) and ``scale`` the likelihood-optimal magnitude, so
    the weights that enter the cost are ``scale * theta``.
    """

    theta: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        if theta.shape != (4,):
            raise ValueError("theta must have 4 entries")
        if np.any(theta < 0) or not np.all(np.isfinite(theta)) or theta.sum() <= 0:
            raise ValueError("theta must be finite, nonnegative and not all zero")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError("scale must be positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def effective(self):
        return self.scale * self.theta

    def to_dict(self):
        return {
            "features": list(FEATURE_NAMES),
            "theta": self.theta.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data):
        names = data.get("features", list(FEATURE_NAMES))
        if list(names) != list(FEATURE_NAMES):
            raise ValueError(f"unexpected feature names {names}")
        return cls(np.asarray(data["theta"], dtype=float), float(data.get("scale", 1.0)))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _weights(theta):
    if isinstance(theta, CostWeights):
        return theta.effective
    w = np.asarray(theta, dtype=float).ravel()
    if w.shape != (4,):
        raise ValueError("theta must have 4 entries")
    return w


def _states(traj):
    return traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)


@dataclass(frozen=True, eq=False)
class CostContext:
    """Everything the cost needs besides the predicted trajectory itself."""

    pred_path: object
    pred_prev: np.ndarray  # last two history states of the predicted vehicle
    ego_xy: np.ndarray  # (N, 2) Cartesian ego positions over the horizon
    speed_limit: float
    dt: float
    proximity_scale: float = 5.0

    @classmethod
    def build(cls, scene, ego_plan, proximity_scale=5.0):
        ego_states = _states(ego_plan)
        ego_xy, _ = frenet_pose(ego_states, scene.ego_path, strict=False)
        hist = scene.pred_history.states
        prev = np.vstack([hist[-2] if len(hist) > 1 else hist[-1], hist[-1]])
        return cls(scene.pred_path, prev, ego_xy, float(scene.speed_limit), scene.dt, float(proximity_scale))

    @property
    def horizon(self):
        return len(self.ego_xy)


def features(ctx, pred_states):
    """Per-step features, shape ``(..., N, 4)``.

    ``pred_states`` has shape ``(..., N, 2)``; velocities and accelerations
    use the two most recent history states as left boundary.
    """
    x = np.asarray(pred_states, dtype=float)
    if x.shape[-2] != ctx.horizon:
        raise LengthMismatch(f"predicted horizon {x.shape[-2]} != ego horizon {ctx.horizon}")
    prev = np.broadcast_to(ctx.pred_prev, x.shape[:-2] + (2, 2))
    q = np.concatenate([prev, x], axis=-2)
    v = np.diff(q[..., 0], axis=-1) / ctx.dt
    a = np.diff(v, axis=-1) / ctx.dt
    speed = v[..., 1:]
    xy, _ = frenet_pose(x, ctx.pred_path, strict=False)
    diff = xy - ctx.ego_xy
    dist2 = np.sum(diff * diff, axis=-1)
    prox = np.exp(-dist2 / ctx.proximity_scale**2)
    return np.stack(
        [prox, (speed - ctx.speed_limit) ** 2, a * a, x[..., 1] ** 2],
        axis=-1,
    )


def feature_sums(ctx, pred_states):
    """Features summed over the horizon, shape ``(..., 4)``."""
    return features(ctx, pred_states).sum(axis=-2)


def cumulative_cost(pred_traj, ego_traj, scene, theta, proximity_scale=5.0):
    """Linear cost ``theta . sum_t phi_t`` of a predicted trajectory."""
    pred = _states(pred_traj)
    ego = _states(ego_traj)
    if pred.shape[-2] != ego.shape[-2]:
        raise LengthMismatch("predicted and ego trajectories differ in length")
    ctx = CostContext.build(scene, ego, proximity_scale)
    return feature_sums(ctx, pred) @ _weights(theta)


def feature_derivatives(ctx, pred_states, h=1e-4):
    """Central finite-difference gradient and Hessian of every feature sum.

    Returns
    -------
    F : ndarray (4,)
    J : ndarray (D, 4)
        ``J[i, k] = dF_k / dxi_i``.
    Hk : ndarray (4, D, D)
    """
    x0 = np.asarray(pred_states, dtype=float)
    shape = x0.shape
    flat = x0.ravel()
    D = flat.size
    eye = np.eye(D) * h
    iu, ju = np.triu_indices(D, k=1)
    pts = [flat[None]]
    pts.append(flat + eye)
    pts.append(flat - eye)
    pts.append(flat + eye[iu] + eye[ju])
    pts.append(flat + eye[iu] - eye[ju])
    pts.append(flat - eye[iu] + eye[ju])
    pts.append(flat - eye[iu] - eye[ju])
    batch = np.vstack(pts)
    vals = feature_sums(ctx, batch.reshape((-1,) + shape))
    f0 = vals[0]
    fp = vals[1 : 1 + D]
    fm = vals[1 + D : 1 + 2 * D]
    n_off = len(iu)
    o = 1 + 2 * D
    fpp, fpm, fmp, fmm = (vals[o + k * n_off : o + (k + 1) * n_off] for k in range(4))
    J = (fp - fm) / (2 * h)
    Hk = np.zeros((4, D, D))
    diag = (fp - 2 * f0 + fm) / h**2
    Hk[:, np.arange(D), np.arange(D)] = diag.T
    off = (fpp - fpm - fmp + fmm) / (4 * h * h)
    Hk[:, iu, ju] = off.T
    Hk[:, ju, iu] = off.T
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(Hk))):
        raise NonFiniteCost("non-finite feature derivatives")
    return f0, J, Hk


def regularize_hessian(H, eps0=1e-6, max_eps=1e8):
    """Symmetrize and add ``eps * I`` (eps doubling from ``eps0``) until Cholesky succeeds.

    Returns ``(H_reg, L, eps)`` with ``eps = 0`` when no shift was needed.
    """
    H = 0.5 * (H + H.T)
    eps = 0.0
    eye = np.eye(len(H))
    while True:
        try:
            L = np.linalg.cholesky(H + eps * eye)
            return H + eps * eye, L, eps
        except np.linalg.LinAlgError:
            eps = eps0 if eps == 0.0 else 2.0 * eps
            if eps > max_eps:
                raise SingularHessian("Hessian could not be made positive definite")


def cost_gradient_hessian(pred_traj, ego_traj, scene, theta, h=1e-4, proximity_scale=5.0):
    """Gradient and regularized Hessian of the cost w.r.t. the predicted trajectory."""
    ctx = CostContext.build(scene, _states(ego_traj), proximity_scale)
    _, J, Hk = feature_derivatives(ctx, _states(pred_traj), h)
    w = _weights(theta)
    g = J @ w
    H, _, _ = regularize_hessian(np.tensordot(w, Hk, axes=1))
    return g, H


def _laplace_terms(g, H):
    _, L, _ = regularize_hessian(H)
    y = np.linalg.solve(L, g) if g.size else g
    quad = float(y @ y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return quad, logdet


def demo_log_likelihood(g, H):
    """Laplace log-likelihood of one demonstration given cost gradient and Hessian."""
    quad, logdet = _laplace_terms(g, H)
    D = len(g)
    return -0.5 * quad + 0.5 * logdet - 0.5 * D * LOG_2PI


@dataclass(frozen=True, eq=False)
class _DemoTerms:
    J: np.ndarray
    Hk: np.ndarray

    @property
    def dim(self):
        return self.J.shape[0]


def _demo_terms(demo, h, proximity_scale):
    ctx = CostContext.build(demo.context, demo.ego_future, proximity_scale)
    _, J, Hk = feature_derivatives(ctx, demo.pred_future.states, h)
    return _DemoTerms(J, Hk)


def log_likelihood(demos, theta, h=1e-4, proximity_scale=5.0):
    """Summed Laplace log-likelihood of demonstrations under ``theta``."""
    if len(demos) == 0:
        raise ValueError("at least one demonstration is required")
    w = _weights(theta)
    total = 0.0
    for demo in demos:
        t = demo if isinstance(demo, _DemoTerms) else _demo_terms(demo, h, proximity_scale)
        total += demo_log_likelihood(t.J @ w, np.tensordot(w, t.Hk, axes=1))
    return total


def project_simplex(v):
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _profiled(terms, u, max_scale=1e12):
    """Mean log-likelihood at ``c * u`` with ``c`` set to its closed-form optimum."""
    M = len(terms)
    quads = np.empty(M)
    logdets = np.empty(M)
    dims = np.empty(M)
    for i, t in enumerate(terms):
        quads[i], logdets[i] = _laplace_terms(t.J @ u, np.tensordot(u, t.Hk, axes=1))
        dims[i] = t.dim
    A = quads.sum()
    c = dims.sum() / A if A > 0 else max_scale
    c = float(np.clip(c, 1e-12, max_scale))
    ll = -0.5 * c * quads + 0.5 * dims * np.log(c) + 0.5 * logdets - 0.5 * dims * LOG_2PI
    value = float(ll.mean())
    if not np.isfinite(value):
        raise Diverged("non-finite log-likelihood")
    return value, c


class MaxEntIRL(BaseEstimator):
    """Learn cost weights that maximize the Laplace likelihood of demonstrations.

    Optimization runs projected gradient ascent over the unit simplex of
    weight directions; for each direction the overall weight magnitude is
    set to its closed-form maximum-likelihood value, so the search covers
    all of ``theta >= 0``. The weight gradient is a central finite
    difference.

    Parameters
    ----------
    proximity_scale : float
        Proximity kernel width in meters.
    fd_step : float
        Finite-difference step for trajectory derivatives.
    weight_step : float
        Finite-difference step for the weight gradient.
    max_iter : int
    tol : float
        Stop when the projected-gradient norm falls below ``tol``.
    ftol : float
        Also stop when an iteration improves the mean log-likelihood by
        less than ``ftol`` (relative).
    """

    def __init__(self, proximity_scale=5.0, fd_step=1e-4, weight_step=1e-6, max_iter=500, tol=1e-4, ftol=1e-9):
        self.proximity_scale = proximity_scale
        self.fd_step = fd_step
        self.weight_step = weight_step
        self.max_iter = max_iter
        self.tol = tol
        self.ftol = ftol

    def _objective_grad(self, terms, u):
        h = self.weight_step
        grad = np.empty(4)
        for k in range(4):
            up, um = u.copy(), u.copy()
            up[k] += h
            um[k] = max(u[k] - h, 0.0)
            grad[k] = (_profiled(terms, up)[0] - _profiled(terms, um)[0]) / (up[k] - um[k])
        return grad

    def fit(self, demos, y=None):
        if len(demos) < 5:
            raise ValueError("train_irl needs at least 5 demonstrations")
        terms = [_demo_terms(d, self.fd_step, self.proximity_scale) for d in demos]

        def neg(u):
            return -_profiled(terms, u)[0]

        def neg_grad(u):
            return -self._objective_grad(terms, u)

        res = spg_minimize(
            neg, neg_grad, np.full(4, 0.25), project_simplex, self.max_iter, self.tol, ftol=self.ftol
        )
        u = res.x
        value, scale = _profiled(terms, u)
        self.theta_ = u / u.sum()
        self.scale_ = scale
        self.weights_ = CostWeights(self.theta_, scale)
        self.log_likelihood_ = value
        self.likelihood_curve_ = -res.history
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        log.info("IRL finished after %d iterations: theta=%s scale=%.4g", res.n_iter, self.theta_, scale)
        return self

    def score(self, demos, y=None):
        """Mean Laplace log-likelihood per demonstration under the fitted weights."""
        check_is_fitted(self, "weights_")
        return log_likelihood(demos, self.weights_, self.fd_step, self.proximity_scale) / len(demos)

    def cost(self, pred_traj, ego_traj, scene):
        check_is_fitted(self, "weights_")
        return cumulative_cost(pred_traj, ego_traj, scene, self.weights_, self.proximity_scale)


def train_irl(demos, **hyperparams):
    """Fit :class:`MaxEntIRL` and return its :class:`CostWeights`."""
    return MaxEntIRL(**hyperparams).fit(demos).weights_
