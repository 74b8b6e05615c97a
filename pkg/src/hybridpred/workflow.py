"""Reference experiment setup shared by the command line and the acceptance suite.

The cost weights are learned from demonstrations sampled from a
noisily rational planner under reference weights, on the rational
training contexts of the dataset.
"""

from __future__ import annotations

import numpy as np

from .cvae import CVAE, training_arrays
from .irl import MaxEntIRL
from .planner import sample_demonstrations
from .scenario import generate_dataset

__all__ = ["make_dataset", "fit_cvae", "planted_demonstrations", "fit_cost"]


def make_dataset(cfg):
    return generate_dataset(
        cfg.n_scenes, cfg.mix, seed=cfg.seed, noise=cfg.noise, test_fraction=cfg.test_fraction
    )


def fit_cvae(cfg, scenes):
    X, Y = training_arrays(scenes)
    model = CVAE(
        latent_dim=cfg.latent_dim,
        hidden=tuple(cfg.hidden),
        beta=cfg.beta,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed,
    )
    return model.fit(X, Y)


def planted_demonstrations(cfg, scenes):
    """Demonstrations on the first ``cfg.irl_demos`` rational scenes."""
    contexts = [s for s in scenes if s.mode.startswith("rational")][: cfg.irl_demos]
    theta = np.asarray(cfg.irl_reference_weights, dtype=float)
    theta = theta / theta.sum()
    rng = np.random.default_rng(cfg.seed)
    return sample_demonstrations(contexts, theta, cfg.irl_rationality, rng)


def fit_cost(cfg, demos):
    return MaxEntIRL(proximity_scale=cfg.proximity_scale, max_iter=cfg.irl_max_iter).fit(demos)
