"""Run configuration: every tunable with a default, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .exceptions import ConfigError
from .metrics import SWEEP_RATIOS
from .pipeline import PredictionConfig

__all__ = ["RunConfig", "load_config"]


@dataclass(frozen=True)
class RunConfig:
    """All tunables of a command-line run.

    Model and data paths default to files under ``out_dir``; an explicitly
    configured path must exist when a command reads it.
    """

    seed: int = 0
    out_dir: str = "out"
    # data
    n_scenes: int = 1000
    mix: float = 0.8
    noise: float = 0.05
    test_fraction: float = 0.2
    data_file: str | None = None
    # CVAE
    latent_dim: int = 8
    hidden: tuple = (64, 64)
    beta: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    cvae_file: str | None = None
    # cost learning
    proximity_scale: float = 5.0
    irl_demos: int = 40
    irl_reference_weights: tuple = (1.0, 0.002, 0.01, 0.3)
    irl_rationality: float = 3.3
    irl_max_iter: int = 500
    weights_file: str | None = None
    # prediction
    n_samples: int = 100
    k: int = 20
    threshold: float = 0.2
    max_threshold_doublings: int = 3
    discrepancy: str = "final"
    bandwidth: float = 0.2
    a_max: float = 4.0
    plan_mode: str = "offline"
    initial_ratio: float = 1.0
    force_ratio: float | None = None
    scene_file: str | None = None
    # experiments
    sweep_scene: str = "corner_ego6"
    sweep_ratios: tuple = SWEEP_RATIOS
    sweep_repeats: int = 10
    corner_repeats: int = 10
    rmse_aggregate: str = "min"
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("hidden", "irl_reference_weights", "sweep_ratios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        checks = [
            (self.n_scenes >= 10, "n_scenes must be at least 10"),
            (0.0 <= self.mix <= 1.0, "mix must be in [0, 1]"),
            (self.noise >= 0.0, "noise must be nonnegative"),
            (0.0 < self.test_fraction < 1.0, "test_fraction must be in (0, 1)"),
            (self.epochs >= 1 and self.batch_size >= 1, "epochs and batch_size must be positive"),
            (self.learning_rate > 0 and self.beta >= 0, "invalid learning_rate or beta"),
            (self.proximity_scale > 0, "proximity_scale must be positive"),
            (self.irl_demos >= 5, "irl_demos must be at least 5"),
            (len(self.irl_reference_weights) == 4, "irl_reference_weights needs 4 entries"),
            (self.irl_rationality > 0, "irl_rationality must be positive"),
            (self.sweep_repeats >= 1 and self.corner_repeats >= 1, "repeats must be positive"),
            (self.force_ratio is None or self.force_ratio >= 0, "force_ratio must be nonnegative"),
            (self.initial_ratio > 0, "initial_ratio must be positive"),
            (self.rmse_aggregate in ("min", "mean"), "rmse_aggregate must be 'min' or 'mean'"),
            (self.seed >= 0, "seed must be nonnegative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.prediction
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def prediction(self):
        return PredictionConfig(
            n_samples=self.n_samples,
            k=self.k,
            threshold=self.threshold,
            max_threshold_doublings=self.max_threshold_doublings,
            discrepancy=self.discrepancy,
            bandwidth=self.bandwidth,
            proximity_scale=self.proximity_scale,
            a_max=self.a_max,
            plan_mode=self.plan_mode,
        )

    def to_dict(self):
        d = asdict(self)
        d.pop("extra")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)} - {"extra"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def updated(self, **changes):
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def load_config(path=None):
    """Config from a JSON file, or the defaults when ``path`` is None."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(d)
