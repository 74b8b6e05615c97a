"""Scene container shared by the learning, planning and pipeline modules."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InsufficientHistory
from .geometry import Trajectory, VehicleFootprint

__all__ = ["Scene", "Demonstration", "ROLES"]

ROLES = ("ego", "pred", "surr")


@dataclass(frozen=True, eq=False)
class Scene:
    """Histories of the interacting vehicles plus map context.

    Every trajectory is expressed in the Frenet frame of the path named by
    its ``path_id``; ``paths`` holds those paths with origins at the cross
    point of the ego and predicted vehicles' paths.
    """

    pred_history: Trajectory
    ego_history: Trajectory
    paths: dict
    surr_histories: tuple = ()
    candidates: dict = field(default_factory=dict)
    speed_limit: float = 8.0
    footprints: dict = field(default_factory=dict)
    no_intersection: bool = False
    pred_future: Trajectory | None = None
    ego_future: Trajectory | None = None
    scene_id: str = "scene"
    mode: str = ""

    def __post_init__(self):
        if self.pred_history.dt != self.ego_history.dt:
            raise ValueError("histories must share dt")
        for traj in (self.pred_history, self.ego_history, *self.surr_histories):
            if traj.path_id not in self.paths:
                raise KeyError(f"unknown path {traj.path_id!r}")
        object.__setattr__(self, "surr_histories", tuple(self.surr_histories))

    @property
    def dt(self):
        return self.pred_history.dt

    @property
    def pred_path(self):
        return self.paths[self.pred_history.path_id]

    @property
    def ego_path(self):
        return self.paths[self.ego_history.path_id]

    def footprint(self, role):
        return self.footprints.get(role, VehicleFootprint())

    def history(self, role):
        return {"pred": self.pred_history, "ego": self.ego_history}[role]

    def velocity(self, role):
        """Backward-difference ``(ds/dt, dd/dt)`` at the current step."""
        hist = self.history(role)
        if len(hist) < 2:
            raise InsufficientHistory(f"{role} history has fewer than 2 states")
        return (hist.states[-1] - hist.states[-2]) / hist.dt

    def current(self, role):
        return self.history(role).states[-1]

    def with_futures(self, pred_future=None, ego_future=None):
        return replace(self, pred_future=pred_future, ego_future=ego_future)

    def swapped(self):
        """Same scene with the ego and predicted roles exchanged."""
        fps = dict(self.footprints)
        if "ego" in fps or "pred" in fps:
            fps["ego"], fps["pred"] = self.footprint("pred"), self.footprint("ego")
        cands = dict(self.candidates)
        if cands:
            cands["ego"], cands["pred"] = self.candidates.get("pred", ()), self.candidates.get("ego", ())
        return replace(
            self,
            pred_history=self.ego_history,
            ego_history=self.pred_history,
            pred_future=self.ego_future,
            ego_future=self.pred_future,
            candidates=cands,
            footprints=fps,
        )

    def allclose(self, other, atol=1e-9):
        trajs = lambda sc: [sc.pred_history, sc.ego_history, *sc.surr_histories]  # noqa: E731
        if len(trajs(self)) != len(trajs(other)):
            return False
        ok = all(a.allclose(b, atol) for a, b in zip(trajs(self), trajs(other)))
        for name in ("pred_future", "ego_future"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None) or (a is not None and not a.allclose(b, atol)):
                return False
        return ok and np.isclose(self.speed_limit, other.speed_limit) and self.scene_id == other.scene_id


@dataclass(frozen=True, eq=False)
class Demonstration:
    """Ground-truth futures of both vehicles with their scene context."""

    pred_future: Trajectory
    ego_future: Trajectory
    context: Scene

    def __post_init__(self):
        if len(self.pred_future) != len(self.ego_future):
            raise ValueError("demonstration futures must have equal length")
