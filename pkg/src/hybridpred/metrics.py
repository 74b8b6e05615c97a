"""Prediction accuracy, collision rates and the ratio sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import LengthMismatch
from .geometry import collides_on_paths
from .pipeline import PredictionConfig, RatioState, predict_step

__all__ = [
    "HorizonRmse",
    "rmse_per_horizon",
    "constant_velocity_prediction",
    "collision_rate",
    "SweepResult",
    "SWEEP_RATIOS",
    "sweep_ratio",
]

SWEEP_RATIOS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)


@dataclass(frozen=True, eq=False)
class HorizonRmse:
    """Per-step error statistics; ``mean[t]`` is the error at ``horizons[t]`` seconds."""

    horizons: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def at(self, seconds):
        idx = int(np.argmin(np.abs(self.horizons - seconds)))
        return float(self.mean[idx]), float(self.std[idx])


def _states(t):
    return np.asarray(getattr(t, "states", t), dtype=float)


def rmse_per_horizon(predictions, ground_truths, aggregate="min", dt=0.2):
    """Error per future step across scenes.

    Parameters
    ----------
    predictions : sequence
        Per scene, a sequence of predicted trajectories (or one trajectory).
    ground_truths : sequence of Trajectory
    aggregate : {"min", "mean"}
        Per scene, take the sample with the smallest mean error over the
        horizon, or average the per-sample errors.

    Returns
    -------
    HorizonRmse
        Root mean square over scenes of the per-scene error, and its standard
        deviation across scenes.
    """
    if len(predictions) != len(ground_truths):
        raise LengthMismatch("one prediction set per ground truth is required")
    if aggregate not in ("min", "mean"):
        raise ValueError("aggregate must be 'min' or 'mean'")
    per_scene = []
    for preds, gt in zip(predictions, ground_truths):
        g = _states(gt)
        P = _states(preds) if hasattr(preds, "states") else np.array([_states(p) for p in preds])
        if P.ndim == 2:
            P = P[None]
        if P.shape[1:] != g.shape:
            raise LengthMismatch(f"prediction shape {P.shape[1:]} != ground truth {g.shape}")
        err = np.linalg.norm(P - g[None], axis=-1)
        per_scene.append(err[np.argmin(err.mean(axis=1))] if aggregate == "min" else err.mean(axis=0))
    E = np.array(per_scene)
    horizons = dt * np.arange(1, E.shape[1] + 1)
    return HorizonRmse(horizons, np.sqrt(np.mean(E**2, axis=0)), E.std(axis=0))


def constant_velocity_prediction(scene, role="pred", steps=5):
    """Constant-velocity extrapolation from the last two history states."""
    v = scene.velocity(role)
    k = np.arange(1, steps + 1)[:, None] * scene.dt
    return scene.current(role) + k * v


def collision_rate(predictions, ego_plan, pred_path, ego_path, pred_footprint=None, ego_footprint=None):
    """Fraction of predicted trajectories that collide with the ego plan at any step."""
    if len(predictions) == 0:
        raise ValueError("no predictions")
    P = np.array([_states(p) for p in predictions])
    E = _states(ego_plan)
    if P.shape[1:] != E.shape:
        raise LengthMismatch("predictions and ego plan differ in length")
    hit = collides_on_paths(P, pred_path, E[None], ego_path, pred_footprint, ego_footprint)
    return float(np.mean(np.any(hit, axis=-1)))


@dataclass(frozen=True, eq=False)
class SweepResult:
    ratios: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    rates: np.ndarray  # (n_ratios, repeats)

    def __post_init__(self):
        if np.any(np.diff(self.ratios) <= 0):
            raise ValueError("ratios must be strictly increasing")

    def rows(self):
        return [(float(r), float(m), float(s)) for r, m, s in zip(self.ratios, self.mean, self.std)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "mean_collision_rate", "std_collision_rate"])
            for r, m, s in self.rows():
                w.writerow([f"{r:.6g}", f"{m:.6f}", f"{s:.6f}"])


def sweep_ratio(scene, ratios, repeats, cvae_model, theta, seed=0, config=PredictionConfig()):
    """Collision rate of hybrid predictions for each forced ratio.

    Repeat ``j`` of every ratio uses the RNG stream ``(seed, j)``, so all
    ratios see the same CVAE samples and differ only in the mixing.
    """
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios < 0):
        raise ValueError("ratios must be nonnegative")
    rates = np.empty((len(ratios), repeats))
    for i, r in enumerate(ratios):
        for j in range(repeats):
            rng = np.random.default_rng([seed, j])
            _, _, diag = predict_step(scene, cvae_model, theta, RatioState(), config, rng, force_ratio=r)
            rates[i, j] = diag.collision_rate
    return SweepResult(ratios, rates.mean(axis=1), rates.std(axis=1), rates)
