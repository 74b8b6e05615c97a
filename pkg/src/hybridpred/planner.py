"""
Finite-horizon trajectory optimization over the learned cost.

Decision variables are controls: a longitudinal acceleration and a
lateral rate per step. States follow a point-mass model in the Frenet
frame with speed clamped at zero, so every optimized trajectory is
dynamically feasible by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import LengthMismatch, NonFiniteCost
from .geometry import Trajectory, collides_on_paths
from .optim import spg_minimize
from .irl import CostContext, _weights, cost_gradient_hessian, feature_sums
from .scene import Demonstration

log = logging.getLogger(__name__)

__all__ = [
    "ControlBounds",
    "rollout",
    "OptimizationResult",
    "optimize_trajectory",
    "plan_ego",
    "constant_decel_rollout",
    "constant_decel_feasible",
    "min_safe_decel",
    "sample_demonstrations",
]


@dataclass(frozen=True)
class ControlBounds:
    a_max: float = 4.0
    d_rate_max: float = 2.0

    def clip(self, u):
        lo = np.array([-self.a_max, -self.d_rate_max])
        return np.clip(u, lo, -lo)


def rollout(state, v0, controls, dt):
    """Integrate controls from ``state = (s, d)`` at speed ``v0``.

    ``controls`` has shape ``(..., N, 2)`` holding ``(a, d_rate)`` per step;
    the result has the same shape and holds the states after each step.
    Speed never goes negative: a vehicle that stops mid-step stays put.
    """
    u = np.asarray(controls, dtype=float)
    s0, d0 = float(state[0]), float(state[1])
    batch = u.shape[:-2]
    n = u.shape[-2]
    s = np.full(batch, s0)
    v = np.full(batch, max(float(v0), 0.0))
    out = np.empty(u.shape)
    for t in range(n):
        a = u[..., t, 0]
        v_next = v + a * dt
        stops = v_next < 0.0
        ds = np.where(stops, v * v / (2.0 * np.maximum(-a, 1e-300)), v * dt + 0.5 * a * dt * dt)
        s = s + ds
        v = np.maximum(v_next, 0.0)
        out[..., t, 0] = s
    out[..., 1] = d0 + np.cumsum(u[..., 1], axis=-1) * dt
    return out


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    trajectory: Trajectory
    controls: np.ndarray
    cost: float
    start_costs: tuple
    n_iter: int
    converged: bool


def _pred_start(scene):
    state = scene.current("pred")
    v0 = scene.velocity("pred")[0]
    return state, v0


def optimize_trajectory(
    scene,
    theta,
    ego_plan,
    bounds=ControlBounds(),
    proximity_scale=5.0,
    max_iter=200,
    tol=1e-3,
    fd_step=1e-6,
    return_result=False,
):
    """Cost-minimizing predicted-vehicle trajectory given an ego plan.

    Projected gradient descent over controls, started from zero controls,
    full braking and full acceleration; the best local optimum wins with
    ties going to the earlier start.

    Returns
    -------
    Trajectory or OptimizationResult
    """
    ego_states = ego_plan.states if isinstance(ego_plan, Trajectory) else np.asarray(ego_plan)
    n = len(ego_states)
    if n < 1:
        raise LengthMismatch("ego plan is empty")
    ctx = CostContext.build(scene, ego_states, proximity_scale)
    w = _weights(theta)
    state, v0 = _pred_start(scene)
    dt = scene.dt
    shape = (n, 2)
    size = 2 * n

    def batch_cost(u):
        return feature_sums(ctx, rollout(state, v0, u, dt)) @ w

    def f(u):
        c = float(batch_cost(u))
        if not np.isfinite(c):
            raise NonFiniteCost("non-finite cost during optimization")
        return c

    eye = np.eye(size).reshape(size, *shape) * fd_step

    def grad(u):
        vals = batch_cost(np.concatenate([u + eye, u - eye]))
        return ((vals[:size] - vals[size:]) / (2.0 * fd_step)).reshape(shape)

    starts = []
    for a in (0.0, -bounds.a_max, bounds.a_max):
        u0 = np.zeros(shape)
        u0[:, 0] = a
        starts.append(u0)
    best = None
    start_costs = []
    for u0 in starts:
        start_costs.append(f(u0))
        res = spg_minimize(f, grad, u0, bounds.clip, max_iter, tol, step_range=(1e-6, 1e3))
        if best is None or res.fun < best[1]:
            best = (res.x, res.fun, res.n_iter, res.converged)
    u, fu, it, conv = best
    log.debug("MPC cost %.6g after %d iterations (converged=%s)", fu, it, conv)
    traj = Trajectory(rollout(state, v0, u, dt), dt, scene.pred_history.path_id)
    if return_result:
        return OptimizationResult(traj, u, fu, tuple(start_costs), it, conv)
    return traj


def plan_ego(scene, mode="offline", theta=None, **kwargs):
    """Ego trajectory used as ground truth for conditioning.

    ``offline`` returns the recorded ego future; ``online`` optimizes the
    ego vehicle under ``theta`` with roles swapped, against the predicted
    vehicle's constant-velocity extrapolation.
    """
    if len(scene.ego_history) < 2:
        from .exceptions import InsufficientHistory

        raise InsufficientHistory("ego history has fewer than 2 states")
    if mode == "offline":
        if scene.ego_future is None:
            raise ValueError("offline planning needs a recorded ego future")
        return scene.ego_future
    if mode != "online":
        raise ValueError(f"unknown planning mode {mode!r}")
    if theta is None:
        raise ValueError("online planning needs cost weights")
    horizon = kwargs.pop("horizon", None) or (
        len(scene.pred_future) if scene.pred_future is not None else 5
    )
    pred_state = scene.current("pred")
    v = scene.velocity("pred")
    steps = np.arange(1, horizon + 1)[:, None] * scene.dt
    pred_cv = Trajectory(pred_state + steps * np.array([max(v[0], 0.0), 0.0]), scene.dt, scene.pred_history.path_id)
    swapped = scene.swapped()
    traj = optimize_trajectory(swapped, theta, pred_cv, **kwargs)
    return Trajectory(traj.states, traj.dt, scene.ego_history.path_id)


def constant_decel_rollout(state, v0, decel, dt, steps):
    """Positions at steps ``0..steps`` under constant deceleration ``decel >= 0``."""
    u = np.zeros((steps, 2))
    u[:, 0] = -decel
    traj = rollout(state, v0, u, dt)
    return np.vstack([np.asarray(state, dtype=float)[None], traj])


def _brake_is_safe(scene, brake, decel, look_ahead):
    other = "ego" if brake == "pred" else "pred"
    dt = scene.dt
    steps = int(round(look_ahead / dt))
    xb = constant_decel_rollout(scene.current(brake), scene.velocity(brake)[0], decel, dt, steps)
    xo = constant_decel_rollout(scene.current(other), scene.velocity(other)[0], 0.0, dt, steps)
    paths = {"pred": scene.pred_path, "ego": scene.ego_path}
    hit = collides_on_paths(
        xb, paths[brake], xo, paths[other], scene.footprint(brake), scene.footprint(other)
    )
    return not np.any(hit)


def min_safe_decel(scene, brake="pred", a_max=4.0, step=0.1, look_ahead=3.0, floor=0.0):
    """Smallest deceleration on the ``step`` grid in ``[floor, a_max]`` avoiding collision.

    Returns ``None`` when no deceleration up to ``a_max`` is safe.
    """
    n = int(np.floor((a_max - floor) / step + 1e-9))
    for k in range(n + 1):
        decel = round(floor + k * step, 10)
        if _brake_is_safe(scene, brake, decel, look_ahead):
            return decel
    return None


def constant_decel_feasible(scene, a_max=4.0, step=0.1, look_ahead=3.0):
    """True iff one vehicle can brake at a constant rate and avoid the other."""
    if scene.no_intersection:
        return True
    return any(
        min_safe_decel(scene, brake, a_max, step, look_ahead) is not None for brake in ("pred", "ego")
    )


def sample_demonstrations(scenes, theta, rationality, rng, bounds=ControlBounds(a_max=50.0, d_rate_max=50.0)):
    """Noisily rational demonstrations under planted weights.

    For each scene the predicted vehicle's cost-minimizing trajectory is
    found against the recorded ego future, then perturbed with Gaussian
    noise of covariance ``(rationality * H)^-1``, where ``H`` is the cost
    Hessian there: the Laplace approximation of the maximum-entropy
    distribution ``exp(-rationality * C)``. Loose control bounds keep the
    optimum interior so the approximation is centered on it.
    ``rationality = inf`` returns the optima themselves.
    """
    demos = []
    for scene in scenes:
        opt = optimize_trajectory(scene, theta, scene.ego_future, bounds=bounds)
        states = opt.states
        if np.isfinite(rationality):
            _, H = cost_gradient_hessian(opt, scene.ego_future, scene, theta)
            L = np.linalg.cholesky(rationality * H)
            z = rng.standard_normal(states.size)
            states = states + np.linalg.solve(L.T, z).reshape(states.shape)
        demos.append(Demonstration(Trajectory(states, scene.dt, opt.path_id), scene.ego_future, scene))
    return demos
