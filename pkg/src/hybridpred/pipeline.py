"""
Hybrid prediction: learned joint samples conditioned on the ego plan, mixed
with the planner's optimal trajectory and reweighted by the learned cost.

One prediction step:

1. draw ``N`` joint samples from the CVAE;
2. keep the samples whose ego part ends near the ego plan;
3. add ``round(r * n_satisfied)`` copies of the cost-optimal predicted trajectory;
4. weight every sample by ``exp(-cost)``;
5. draw ``k`` predictions by systematic resampling.

With ``r = 0`` steps 3 and 4 are skipped and the satisfied samples are
resampled uniformly, which is the purely learning-based predictor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cvae import CVAE, sample_joint, training_arrays
from .exceptions import LengthMismatch, NoSatisfiedSamples, NonFiniteCost
from .geometry import Trajectory, collides_on_paths
from .irl import CostContext, MaxEntIRL, _weights, feature_sums
from .planner import optimize_trajectory, plan_ego

log = logging.getLogger(__name__)

__all__ = [
    "SamplePair",
    "WeightedSampleSet",
    "RatioState",
    "PredictionConfig",
    "StepDiagnostics",
    "discrepancy",
    "filter_satisfied",
    "inject_optimal",
    "pair_costs",
    "reweight",
    "systematic_indices",
    "resample",
    "mean_trajectory",
    "update_ratio",
    "collides_with_plan",
    "predict_step",
    "HybridPredictor",
]


@dataclass(frozen=True, eq=False)
class SamplePair:
    pred: Trajectory
    ego: Trajectory
    source: str = "learned"

    def __post_init__(self):
        if len(self.pred) != len(self.ego) or self.pred.dt != self.ego.dt:
            raise LengthMismatch("pair trajectories differ in length or dt")
        if self.source not in ("learned", "optimal"):
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    pairs: tuple
    weights: np.ndarray
    costs: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if len(self.pairs) == 0 or w.shape != (len(self.pairs),):
            raise ValueError("weights must align with a non-empty pair list")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability vector")
        w.setflags(write=False)
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class RatioState:
    """Posterior probabilities of the learned and planning hypotheses."""

    p_learned: float = 0.5
    p_planned: float = 0.5

    def __post_init__(self):
        if self.p_learned < 0 or self.p_planned <= 0 or abs(self.p_learned + self.p_planned - 1.0) > 1e-9:
            raise ValueError("need p_learned >= 0, p_planned > 0 and p_learned + p_planned = 1")

    @property
    def r(self):
        return self.p_learned / self.p_planned

    @classmethod
    def from_ratio(cls, r):
        if r < 0 or not np.isfinite(r):
            raise ValueError("ratio must be finite and nonnegative")
        return cls(r / (1.0 + r), 1.0 / (1.0 + r))


@dataclass(frozen=True)
class PredictionConfig:
    n_samples: int = 100
    k: int = 20
    threshold: float = 0.2
    max_threshold_doublings: int = 3
    discrepancy: str = "final"
    bandwidth: float = 0.2
    proximity_scale: float = 5.0
    a_max: float = 4.0
    plan_mode: str = "offline"

    def __post_init__(self):
        if self.n_samples < 1 or self.k < 1:
            raise ValueError("n_samples and k must be positive")
        if self.threshold <= 0 or self.bandwidth <= 0:
            raise ValueError("threshold and bandwidth must be positive")
        if self.discrepancy not in ("final", "rmse"):
            raise ValueError("discrepancy must be 'final' or 'rmse'")


@dataclass(eq=False)
class StepDiagnostics:
    n_samples: int
    n_satisfied: int
    n_optimal: int
    r: float
    threshold: float
    fallback: bool
    collision_rate: float
    costs: np.ndarray
    raw: list = field(default_factory=list, repr=False)
    satisfied: list = field(default_factory=list, repr=False)
    optimal: Trajectory | None = field(default=None, repr=False)
    weighted: WeightedSampleSet | None = field(default=None, repr=False)
    ego_plan: Trajectory | None = field(default=None, repr=False)

    def row(self, timestep=0):
        c = self.costs if len(self.costs) else np.array([np.nan])
        return {
            "timestep": timestep,
            "n_satisfied": self.n_satisfied,
            "n_optimal": self.n_optimal,
            "r": self.r,
            "collision_rate": self.collision_rate,
            "min_cost": float(np.min(c)),
            "mean_cost": float(np.mean(c)),
            "max_cost": float(np.max(c)),
        }


def discrepancy(ego, ego_plan, kind="final"):
    """Distance between an ego sample and the ego plan (final state or RMSE)."""
    a, b = ego.states, ego_plan.states
    if a.shape != b.shape:
        raise LengthMismatch("ego sample and plan differ in length")
    if kind == "final":
        return float(np.linalg.norm(a[-1] - b[-1]))
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def filter_satisfied(samples, ego_plan, threshold=0.2, kind="final"):
    """Pairs whose ego trajectory ends within ``threshold`` of the ego plan."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(samples) == 0:
        raise ValueError("no samples to filter")
    kept = [p for p in samples if discrepancy(p.ego, ego_plan, kind) <= threshold]
    if not kept:
        raise NoSatisfiedSamples(f"no ego sample within {threshold:g} m of the plan")
    return kept


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def inject_optimal(satisfied, opt_traj, ego_plan, ratio):
    """Append ``round(r * n_satisfied)`` copies of the optimal pair."""
    if len(satisfied) == 0:
        raise ValueError("satisfied set is empty")
    r = ratio.r if isinstance(ratio, RatioState) else float(ratio)
    n_opt = _round_half_up(r * len(satisfied))
    return list(satisfied) + [SamplePair(opt_traj, ego_plan, "optimal")] * n_opt


def pair_costs(pairs, scene, theta, ego_plan, proximity_scale=5.0):
    """Cost of each pair's predicted trajectory against the ego plan."""
    ctx = CostContext.build(scene, ego_plan, proximity_scale)
    states = np.array([p.pred.states for p in pairs])
    costs = feature_sums(ctx, states) @ _weights(theta)
    if not np.all(np.isfinite(costs)):
        raise NonFiniteCost("non-finite sample cost")
    return costs


def reweight(pairs, scene, theta, ego_plan, proximity_scale=5.0):
    """Weights proportional to ``exp(-cost)``."""
    costs = pair_costs(pairs, scene, theta, ego_plan, proximity_scale)
    logw = -costs - logsumexp(-costs)
    w = np.exp(logw)
    return WeightedSampleSet(pairs, w / w.sum(), costs)


def systematic_indices(weights, k, rng):
    """Systematic resampling: one uniform offset, ``k`` evenly spaced strata."""
    if k < 1:
        raise ValueError("k must be at least 1")
    w = np.asarray(weights, dtype=float)
    positions = (rng.uniform() + np.arange(k)) / k
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, len(w) - 1)


def resample(sample_set, k, rng):
    """``k`` predicted trajectories drawn systematically from a weighted set."""
    idx = systematic_indices(sample_set.weights, k, rng)
    return [sample_set.pairs[i].pred for i in idx]


def mean_trajectory(trajectories, weights=None):
    """Pointwise (weighted) mean of equally long trajectories."""
    arr = np.array([t.states for t in trajectories])
    w = np.full(len(arr), 1.0 / len(arr)) if weights is None else np.asarray(weights) / np.sum(weights)
    first = trajectories[0]
    return Trajectory(np.tensordot(w, arr, axes=1), first.dt, first.path_id)


def _rmse(a, b):
    if a.states.shape != b.states.shape or a.dt != b.dt:
        raise LengthMismatch("trajectories differ in length or dt")
    return float(np.sqrt(np.mean(np.sum((a.states - b.states) ** 2, axis=1))))


def update_ratio(state, observed, learned_pred, optimal_pred, bandwidth=0.2):
    """Bayes update of the two hypotheses from an observed trajectory.

    Each hypothesis has likelihood ``exp(-RMSE^2 / (2 bandwidth^2))``; the
    update is done in log space so a common factor cancels exactly.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    e_s = _rmse(observed, learned_pred)
    e_o = _rmse(observed, optimal_pred)
    log_s = np.log(state.p_learned) if state.p_learned > 0 else -np.inf
    log_o = np.log(state.p_planned)
    post = np.array([log_s - e_s**2 / (2 * bandwidth**2), log_o - e_o**2 / (2 * bandwidth**2)])
    p = np.exp(post - logsumexp(post))
    p_planned = max(float(p[1]), 1e-6)
    return RatioState(1.0 - p_planned, p_planned)


def collides_with_plan(predictions, scene, ego_plan):
    """Per-prediction flag: does it collide with the ego plan at any step?"""
    states = np.array([p.states for p in predictions])
    hit = collides_on_paths(
        states, scene.pred_path, ego_plan.states[None], scene.ego_path,
        scene.footprint("pred"), scene.footprint("ego"),
    )
    return np.any(np.atleast_2d(hit), axis=-1)


def predict_step(
    scene,
    cvae_model,
    theta,
    ratio=RatioState(),
    config=PredictionConfig(),
    rng=None,
    force_ratio=None,
    pure_learned=False,
    observed=None,
):
    """Run one hybrid prediction cycle.

    Parameters
    ----------
    force_ratio : float, optional
        Use this ratio instead of ``ratio.r``.
    pure_learned : bool
        Shorthand for ``force_ratio=0``.
    observed : Trajectory, optional
        Realized future of the predicted vehicle; when given, the returned
        ratio is the Bayes update of ``ratio``.

    Returns
    -------
    predictions : list of Trajectory
    ratio : RatioState
    diagnostics : StepDiagnostics
    """
    rng = np.random.default_rng() if rng is None else rng
    r = 0.0 if pure_learned else (ratio.r if force_ratio is None else float(force_ratio))
    ego_plan = plan_ego(scene, config.plan_mode, theta)
    raw = [SamplePair(p, e) for p, e in sample_joint(cvae_model, scene, config.n_samples, rng)]
    opt_traj = optimize_trajectory(scene, theta, ego_plan, proximity_scale=config.proximity_scale)
    threshold = config.threshold
    satisfied = None
    for _ in range(config.max_threshold_doublings + 1):
        try:
            satisfied = filter_satisfied(raw, ego_plan, threshold, config.discrepancy)
            break
        except NoSatisfiedSamples:
            threshold *= 2.0
    if satisfied is None:
        log.warning("no satisfied samples up to %.3g m; falling back to the optimal trajectory", threshold / 2)
        preds = [opt_traj] * config.k
        diag = StepDiagnostics(
            config.n_samples, 0, config.k, r, threshold / 2, True,
            float(np.mean(collides_with_plan(preds, scene, ego_plan))), np.array([]),
            raw, [], opt_traj, None, ego_plan,
        )
        return preds, ratio, diag
    if r == 0.0:
        pool = list(satisfied)
        n = len(pool)
        costs = pair_costs(pool, scene, theta, ego_plan, config.proximity_scale)
        weighted = WeightedSampleSet(pool, np.full(n, 1.0 / n), costs)
    else:
        pool = inject_optimal(satisfied, opt_traj, ego_plan, r)
        weighted = reweight(pool, scene, theta, ego_plan, config.proximity_scale)
    preds = resample(weighted, config.k, rng)
    rate = float(np.mean(collides_with_plan(preds, scene, ego_plan)))
    new_ratio = ratio
    if observed is not None:
        learned_w = weighted.weights[: len(satisfied)]
        learned_mean = mean_trajectory([p.pred for p in satisfied], learned_w)
        new_ratio = update_ratio(ratio, observed, learned_mean, opt_traj, config.bandwidth)
    diag = StepDiagnostics(
        config.n_samples, len(satisfied), len(pool) - len(satisfied), r, threshold, False, rate,
        weighted.costs, raw, satisfied, opt_traj, weighted, ego_plan,
    )
    return preds, new_ratio, diag


class HybridPredictor(BaseEstimator):
    """Estimator wrapper around a CVAE, IRL cost weights and the hybrid step.

    Parameters
    ----------
    cvae : CVAE, optional
        Unfitted template; defaults to ``CVAE()``.
    irl : MaxEntIRL, optional
        Unfitted template; defaults to ``MaxEntIRL()``.
    n_samples, k, threshold, bandwidth, proximity_scale : see :class:`PredictionConfig`
    initial_ratio : float
    force_ratio : float, optional
    seed : int
    """

    def __init__(
        self,
        cvae=None,
        irl=None,
        n_samples=100,
        k=20,
        threshold=0.2,
        bandwidth=0.2,
        proximity_scale=5.0,
        initial_ratio=1.0,
        force_ratio=None,
        seed=0,
    ):
        self.cvae = cvae
        self.irl = irl
        self.n_samples = n_samples
        self.k = k
        self.threshold = threshold
        self.bandwidth = bandwidth
        self.proximity_scale = proximity_scale
        self.initial_ratio = initial_ratio
        self.force_ratio = force_ratio
        self.seed = seed

    @property
    def config(self):
        return PredictionConfig(
            n_samples=self.n_samples,
            k=self.k,
            threshold=self.threshold,
            bandwidth=self.bandwidth,
            proximity_scale=self.proximity_scale,
        )

    def fit(self, scenes, demos=None, weights=None):
        """Train the CVAE on ``scenes`` and the cost on ``demos`` (or take ``weights``)."""
        from sklearn.base import clone

        X, Y = training_arrays(scenes)
        self.cvae_ = clone(self.cvae if self.cvae is not None else CVAE()).fit(X, Y)
        if weights is None:
            if demos is None:
                raise ValueError("either demos or weights is required")
            self.irl_ = clone(self.irl if self.irl is not None else MaxEntIRL(proximity_scale=self.proximity_scale)).fit(demos)
            weights = self.irl_.weights_
        self.weights_ = weights
        self.ratio_ = RatioState.from_ratio(self.initial_ratio)
        self.rng_ = np.random.default_rng(self.seed)
        return self

    @classmethod
    def from_models(cls, cvae_model, weights, **params):
        est = cls(**params)
        est.cvae_ = cvae_model
        est.weights_ = weights
        est.ratio_ = RatioState.from_ratio(est.initial_ratio)
        est.rng_ = np.random.default_rng(est.seed)
        return est

    def predict_step(self, scene, observed=None, pure_learned=False):
        check_is_fitted(self, "cvae_")
        preds, ratio, diag = predict_step(
            scene, self.cvae_, self.weights_, self.ratio_, self.config, self.rng_,
            force_ratio=self.force_ratio, pure_learned=pure_learned, observed=observed,
        )
        self.ratio_ = ratio
        return preds, diag

    def predict(self, scene):
        """``k`` predicted-vehicle trajectories for one scene."""
        return self.predict_step(scene)[0]
