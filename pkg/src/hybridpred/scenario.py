"""
Synthetic crossing scenes: a straight entry lane meeting a circular arc.

The ego vehicle drives north on the entry lane, the predicted vehicle
circulates counter-clockwise on a 20 m arc, and both Frenet frames have
their origin at the cross point ``(0, -20)``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dtw import path_likelihoods
from .exceptions import InfeasibleSpec, SchemaError
from .geometry import (
    ReferencePath,
    Trajectory,
    anchor_at_cross_point,
    collides_on_paths,
    load_paths,
    project_to_frenet,
    save_paths,
    to_cartesian,
)
from .planner import constant_decel_rollout, min_safe_decel
from .scene import Demonstration, Scene

log = logging.getLogger(__name__)

__all__ = [
    "MODES",
    "DT",
    "HISTORY_STEPS",
    "FUTURE_STEPS",
    "crossing_paths",
    "ScenarioSpec",
    "generate_scene",
    "Dataset",
    "generate_dataset",
    "corner_case_suite",
    "CORNER_EGO_SPEEDS",
    "export_csv",
    "import_csv",
]

MODES = ("rational-yield", "rational-proceed", "irrational-ignore")
DT = 0.2
HISTORY_STEPS = 5
FUTURE_STEPS = 5
ARC_RADIUS = 20.0
ENTRY_LENGTH = 40.0
LOOK_AHEAD = 3.0
MIN_YIELD_DECEL = 1.0
CORNER_EGO_SPEEDS = (4.0, 6.0, 7.0, 8.0)


def crossing_paths():
    """Entry and arc paths with origins at their cross point."""
    entry = ReferencePath([(0.0, -ENTRY_LENGTH), (0.0, 0.0)], path_id="entry")
    ang = np.deg2rad(np.arange(-180.0, 0.0 + 0.5, 1.0))
    arc = ReferencePath(np.c_[ARC_RADIUS * np.cos(ang), ARC_RADIUS * np.sin(ang)], path_id="arc")
    entry, arc, _ = anchor_at_cross_point(entry, arc)
    return {"entry": entry, "arc": arc}


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one synthetic scene.

    Gaps are distances to the cross point along each vehicle's path at the
    current time step.
    """

    ego_speed: float
    pred_speed: float
    ego_gap: float
    pred_gap: float
    mode: str = "rational-yield"
    noise: float = 0.05
    seed: int = 0
    n_surround: int = 0
    speed_limit: float = 8.0

    def __post_init__(self):
        if self.ego_speed < 0 or self.pred_speed < 0:
            raise ValueError("speeds must be nonnegative")
        if self.ego_gap <= 0 or self.pred_gap <= 0:
            raise ValueError("gaps must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not 0 <= self.n_surround <= 2:
            raise ValueError("n_surround must be 0, 1 or 2")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _constant_history(s_now, v, path, steps=HISTORY_STEPS, dt=DT):
    s = s_now - v * dt * np.arange(steps, -1, -1)
    lo, _ = path.s_range()
    if s[0] < lo:
        raise InfeasibleSpec(f"history leaves path {path.path_id!r} (s={s[0]:.3f} < {lo:.3f})")
    return np.c_[s, np.zeros_like(s)]


def _futures_collide(scene, pred_states, ego_states):
    return bool(
        np.any(
            collides_on_paths(
                pred_states, scene.pred_path, ego_states, scene.ego_path,
                scene.footprint("pred"), scene.footprint("ego"),
            )
        )
    )


def _pred_future(scene, spec, steps):
    """Future of the predicted vehicle under the scenario's control law."""
    state = scene.current("pred")
    v = spec.pred_speed
    if spec.mode == "irrational-ignore":
        return constant_decel_rollout(state, v, 0.0, DT, steps)[1:]
    if spec.mode == "rational-proceed":
        if not _brake_safe_at(scene, 0.0):
            raise InfeasibleSpec("gap too small to proceed")
        return constant_decel_rollout(state, v, 0.0, DT, steps)[1:]
    decel = min_safe_decel(scene, "pred", floor=MIN_YIELD_DECEL, look_ahead=LOOK_AHEAD)
    if decel is None:
        raise InfeasibleSpec("predicted vehicle cannot yield in time")
    return constant_decel_rollout(state, v, decel, DT, steps)[1:]


def _brake_safe_at(scene, decel):
    return min_safe_decel(scene, "pred", a_max=decel, floor=decel, look_ahead=LOOK_AHEAD) is not None


def _surround_histories(rng, n, path):
    out = []
    for _ in range(n):
        s_now = rng.uniform(5.0, 20.0)
        v = rng.uniform(3.0, 7.0)
        out.append(Trajectory(_constant_history(s_now, v, path), DT, path.path_id))
    return out


def generate_scene(spec, future_steps=FUTURE_STEPS):
    """Build a scene and its ground-truth futures.

    Returns
    -------
    scene : Scene
        With ``pred_future`` and ``ego_future`` attached.
    pred_future, ego_future : Trajectory
    """
    paths = crossing_paths()
    entry, arc = paths["entry"], paths["arc"]
    rng = np.random.default_rng(spec.seed)
    ego_hist = _constant_history(-spec.ego_gap, spec.ego_speed, entry)
    pred_hist = _constant_history(-spec.pred_gap, spec.pred_speed, arc)
    surr = _surround_histories(rng, spec.n_surround, arc)
    clean = Scene(
        pred_history=Trajectory(pred_hist, DT, "arc"),
        ego_history=Trajectory(ego_hist, DT, "entry"),
        paths=paths,
        candidates={"pred": ("arc",), "ego": ("entry",)},
        speed_limit=spec.speed_limit,
        mode=spec.mode,
    )
    ego_fut = constant_decel_rollout(ego_hist[-1], spec.ego_speed, 0.0, DT, future_steps)[1:]
    pred_fut = _pred_future(clean, spec, future_steps)
    _, hi = entry.s_range()
    if ego_fut[-1, 0] > hi:
        raise InfeasibleSpec("ego future runs off the entry lane")

    def noisy(x):
        return x + rng.normal(0.0, spec.noise, size=x.shape) if spec.noise > 0 else x

    pred_future = Trajectory(noisy(pred_fut), DT, "arc")
    ego_future = Trajectory(noisy(ego_fut), DT, "entry")
    scene = replace(
        clean,
        pred_history=Trajectory(noisy(pred_hist), DT, "arc"),
        ego_history=Trajectory(noisy(ego_hist), DT, "entry"),
        surr_histories=tuple(Trajectory(noisy(t.states), DT, t.path_id) for t in surr),
        pred_future=pred_future,
        ego_future=ego_future,
        scene_id=f"seed{spec.seed}",
    )
    return scene, pred_future, ego_future


@dataclass(frozen=True, eq=False)
class Dataset:
    train: list
    test: list
    demos: list
    specs: list = field(default_factory=list)

    @property
    def scenes(self):
        return self.train + self.test


def _sample_spec(rng, rational, noise, seed, force_conflict):
    pred_speed = rng.uniform(5.0, 8.0)
    pred_gap = rng.uniform(6.0, 14.0)
    ego_speed = rng.uniform(3.5, 8.5)
    half = 0.2 if force_conflict and not rational else 0.5
    delta = rng.uniform(-half, half)
    ego_gap = ego_speed * (pred_gap / pred_speed + delta)
    if ego_gap < 0.5:
        return None
    return ScenarioSpec(
        ego_speed=ego_speed,
        pred_speed=pred_speed,
        ego_gap=float(ego_gap),
        pred_gap=pred_gap,
        mode="rational-proceed" if rational else "irrational-ignore",
        noise=noise,
        seed=seed,
        n_surround=int(rng.integers(0, 3)),
    )


def _realize(spec):
    """Generate a scene; a rational driver proceeds when that is safe and yields otherwise."""
    if spec.mode == "rational-proceed":
        try:
            return generate_scene(spec)
        except InfeasibleSpec:
            spec = replace(spec, mode="rational-yield")
    return generate_scene(spec)


def generate_dataset(n, mix, seed=0, noise=0.05, force_conflict=False, test_fraction=0.2, max_tries=1000):
    """Randomized scenes with an exact fraction ``mix`` of irrational drivers.

    Rational and irrational scenes share the same distribution of initial
    conditions. Specs that cannot be realized (or irrational specs without
    a collision when ``force_conflict`` is set) are redrawn.
    """
    if n < 10:
        raise ValueError("generate_dataset needs n >= 10")
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_irr = int(np.floor(mix * n + 0.5))
    rational = np.array([False] * n_irr + [True] * (n - n_irr))[rng.permutation(n)]
    scenes, specs = [], []
    for is_rational in rational:
        for _ in range(max_tries):
            spec = _sample_spec(rng, is_rational, noise, int(rng.integers(2**31)), force_conflict)
            if spec is None:
                continue
            try:
                scene, pred_f, ego_f = _realize(spec)
            except InfeasibleSpec:
                continue
            if force_conflict and not is_rational:
                if not _futures_collide(scene, pred_f.states, ego_f.states):
                    continue
            break
        else:
            raise InfeasibleSpec("could not realize a scene")
        scenes.append(replace(scene, scene_id=f"s{len(scenes):05d}"))
        specs.append(replace(spec, mode=scene.mode))
    n_test = int(np.floor(test_fraction * n + 0.5))
    order = rng.permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(scenes) if i not in test_idx]
    test = [s for i, s in enumerate(scenes) if i in test_idx]
    demos = [Demonstration(s.pred_future, s.ego_future, s) for s in train if s.mode.startswith("rational")]
    return Dataset(train, test, demos, specs)


def corner_case_suite(pred_gap=9.0, pred_speed=6.0, ego_start=12.5):
    """Four scenes sharing the predicted vehicle's history; ego at 4, 6, 7 and 8 m/s.

    The ego vehicle starts its history ``ego_start`` meters before the
    cross point and drives at constant speed, so its current gap shrinks
    with speed. Ground-truth futures: ego at constant speed, predicted
    vehicle yielding with the smallest safe constant deceleration.
    """
    paths = crossing_paths()
    pred_hist = _constant_history(-pred_gap, pred_speed, paths["arc"])
    scenes = []
    for v in CORNER_EGO_SPEEDS:
        s = -ego_start + v * DT * np.arange(HISTORY_STEPS + 1)
        ego_hist = np.c_[s, np.zeros_like(s)]
        scene = Scene(
            pred_history=Trajectory(pred_hist, DT, "arc"),
            ego_history=Trajectory(ego_hist, DT, "entry"),
            paths=paths,
            candidates={"pred": ("arc",), "ego": ("entry",)},
            scene_id=f"corner_ego{v:g}",
            mode="corner",
        )
        ego_fut = constant_decel_rollout(ego_hist[-1], v, 0.0, DT, FUTURE_STEPS)[1:]
        decel = min_safe_decel(scene, "pred", look_ahead=LOOK_AHEAD)
        decel = 4.0 if decel is None else decel
        pred_fut = constant_decel_rollout(pred_hist[-1], pred_speed, decel, DT, FUTURE_STEPS)[1:]
        scenes.append(
            scene.with_futures(Trajectory(pred_fut, DT, "arc"), Trajectory(ego_fut, DT, "entry"))
        )
    return scenes


# ---------------------------------------------------------------------------
# CSV exchange

SCENE_COLUMNS = ("scene_id", "t", "vehicle_id", "role", "x", "y")


def _paths_file(csv_file):
    csv_file = Path(csv_file)
    return csv_file.with_name(csv_file.stem + "_paths.csv")


def _vehicle_rows(scene):
    yield "pred", "pred", scene.pred_history, scene.pred_future
    yield "ego", "ego", scene.ego_history, scene.ego_future
    for k, traj in enumerate(scene.surr_histories):
        yield f"surr{k}", "surr", traj, None


def export_csv(scenes, csv_file):
    """Write scenes as ``scene_id,t,vehicle_id,role,x,y`` rows.

    Times are relative to the current step (history ``t <= 0``, future
    ``t > 0``). Paths go to ``<stem>_paths.csv`` next to the file.
    """
    csv_file = Path(csv_file)
    paths = {}
    with open(csv_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCENE_COLUMNS)
        for scene in scenes:
            paths.update(scene.paths)
            for vid, role, hist, fut in _vehicle_rows(scene):
                path = scene.paths[hist.path_id]
                states = hist.states if fut is None else np.vstack([hist.states, fut.states])
                steps = np.arange(len(states)) - (len(hist) - 1)
                xy = to_cartesian(states, path)
                for k, (x, y) in zip(steps, xy):
                    w.writerow([scene.scene_id, f"{k * hist.dt:.6f}", vid, role, repr(float(x)), repr(float(y))])
    save_paths(list(paths.values()), _paths_file(csv_file))


def _read_rows(csv_file):
    rows = {}
    with open(csv_file, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in SCENE_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing column {col!r}", column=col)
        for row_no, row in enumerate(reader, start=2):
            try:
                t = float(row["t"])
                x = float(row["x"])
                y = float(row["y"])
            except (TypeError, ValueError):
                bad = next(c for c in ("t", "x", "y") if not _is_float(row[c]))
                raise SchemaError(f"non-numeric value {row[bad]!r}", row=row_no, column=bad) from None
            role = row["role"]
            if role not in ("ego", "pred", "surr"):
                raise SchemaError(f"unknown role {role!r}", row=row_no, column="role")
            key = (row["scene_id"], row["vehicle_id"])
            rows.setdefault(row["scene_id"], {}).setdefault(key[1], (role, []))[1].append((t, x, y))
    return rows


def _is_float(text):
    try:
        float(text)
        return True
    except (TypeError, ValueError):
        return False


def _assign_path(xy, candidates):
    if len(candidates) == 1:
        return candidates[0]
    lik = path_likelihoods(xy, candidates)
    return next(p for p in candidates if p.path_id == lik.most_likely)


def import_csv(csv_file, paths=None):
    """Read scenes written by :func:`export_csv` or by hand.

    Each vehicle is assigned the most likely of the available paths (DTW
    path likelihoods over its history). Without a ``<stem>_paths.csv``
    file the synthetic crossing paths are used.
    """
    csv_file = Path(csv_file)
    if paths is None:
        pf = _paths_file(csv_file)
        paths = load_paths(pf) if pf.exists() else crossing_paths()
    candidates = list(paths.values())
    scenes = []
    for scene_id, vehicles in _read_rows(csv_file).items():
        parts = {"surr": []}
        dt = DT
        for vid, (role, samples) in vehicles.items():
            samples.sort()
            arr = np.asarray(samples)
            if len(arr) > 1:
                dt = float(np.round(np.median(np.diff(arr[:, 0])), 9))
            hist_mask = arr[:, 0] <= 1e-9
            if not np.any(hist_mask):
                raise SchemaError(f"vehicle {vid!r} in scene {scene_id!r} has no history rows", column="t")
            path = _assign_path(arr[hist_mask, 1:], candidates)
            frenet = np.array([project_to_frenet(p, path) for p in arr[:, 1:]], dtype=float)
            hist = Trajectory(frenet[hist_mask], dt, path.path_id)
            fut = Trajectory(frenet[~hist_mask], dt, path.path_id) if np.any(~hist_mask) else None
            if role == "surr":
                parts["surr"].append((vid, hist))
            elif role in parts:
                raise SchemaError(f"scene {scene_id!r} has two {role} vehicles", column="role")
            else:
                parts[role] = (hist, fut)
        for role in ("pred", "ego"):
            if role not in parts:
                raise SchemaError(f"scene {scene_id!r} has no {role} vehicle", column="role")
        used = {parts["pred"][0].path_id, parts["ego"][0].path_id}
        used |= {h.path_id for _, h in parts["surr"]}
        scenes.append(
            Scene(
                pred_history=Trajectory(parts["pred"][0].states, dt, parts["pred"][0].path_id),
                ego_history=Trajectory(parts["ego"][0].states, dt, parts["ego"][0].path_id),
                paths={pid: paths[pid] for pid in sorted(used)},
                surr_histories=tuple(h for _, h in sorted(parts["surr"], key=lambda e: e[0])),
                candidates={"pred": (parts["pred"][0].path_id,), "ego": (parts["ego"][0].path_id,)},
                pred_future=parts["pred"][1],
                ego_future=parts["ego"][1],
                scene_id=scene_id,
            )
        )
    return scenes
