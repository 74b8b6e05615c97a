"""Dynamic time warping and DTW-based reference-path likelihoods."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from .exceptions import EmptySequence
from .geometry import closest_point

__all__ = ["PathLikelihoods", "dtw_distance", "candidate_segment", "path_likelihoods"]


def _as_sequence(a):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise EmptySequence("DTW needs non-empty sequences")
    return arr


def dtw_distance(a, b):
    """Classic DTW with Euclidean local cost.

    Both endpoints are aligned; steps are match, insertion and deletion,
    each adding the local cost of the cell it enters.

    Parameters
    ----------
    a, b : array-like of shape (n,) or (n, k)

    Returns
    -------
    float
        Minimum cumulative cost over monotone alignments.
    """
    a = _as_sequence(a)
    b = _as_sequence(b)
    cost = cdist(a, b)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = cost[i - 1]
        prev = acc[i - 1]
        cur = acc[i]
        for j in range(1, m + 1):
            cur[j] = row[j - 1] + min(prev[j - 1], prev[j], cur[j - 1])
    return float(acc[n, m])


@dataclass(frozen=True)
class PathLikelihoods:
    entries: tuple

    def __post_init__(self):
        probs = np.array([p for _, p in self.entries], dtype=float)
        if len(probs) == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("path likelihoods must form a probability vector")

    def as_dict(self):
        return dict(self.entries)

    @property
    def most_likely(self):
        """Path id with the highest probability (first on ties)."""
        return max(self.entries, key=lambda e: e[1])[0]


def candidate_segment(history, path):
    """Portion of ``path`` nearest the history, resampled to its length."""
    history = _as_sequence(history)
    arcs, _ = closest_point(history[[0, -1]], path)
    return path.point_at(np.linspace(arcs[0], arcs[1], len(history)))


def path_likelihoods(history, candidates, tau=1.0):
    """Softmax of negative DTW distances between a history and candidate paths.

    Parameters
    ----------
    history : array-like of shape (n, 2)
        Observed Cartesian positions, oldest first.
    candidates : sequence of ReferencePath
    tau : float
        Temperature in meters.
    """
    history = _as_sequence(history)
    if len(candidates) == 0:
        raise ValueError("at least one candidate path is required")
    if tau <= 0:
        raise ValueError("tau must be positive")
    dist = np.array([dtw_distance(history, candidate_segment(history, p)) for p in candidates])
    probs = softmax(-dist / tau)
    probs = probs / probs.sum()
    return PathLikelihoods(tuple((p.path_id, float(q)) for p, q in zip(candidates, probs)))
