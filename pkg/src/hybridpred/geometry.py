"""
Reference paths, Frenet-frame conversion, cross points and footprints.

A :class:`ReferencePath` is a polyline parameterized by arc length. Its
Frenet frame uses a unit normal that is blended linearly between the
vertex normals (each vertex normal bisects its two adjacent segment
normals), which makes the map ``(s, d) -> (x, y)`` continuous and
invertible inside the corridor. On straight paths the blended normal is
the ordinary segment normal, so projection reduces to perpendicular
projection.

Lateral offsets ``d`` are positive to the left of the travel direction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import NoIntersection, OffPathEnd, OutOfCorridor, ShapeMismatch

__all__ = [
    "CartesianPoint",
    "FrenetState",
    "ReferencePath",
    "VehicleFootprint",
    "Trajectory",
    "CrossPoint",
    "project_to_frenet",
    "to_cartesian",
    "frenet_pose",
    "closest_point",
    "cross_point",
    "closest_approach",
    "collides_on_paths",
    "anchor_at_cross_point",
    "circle_centers",
    "collision",
    "save_paths",
    "load_paths",
]


class CartesianPoint(NamedTuple):
    x: float
    y: float


class FrenetState(NamedTuple):
    s: float
    d: float


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _left_normal(v):
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


class ReferencePath:
    """Arc-length parameterized polyline defining one Frenet frame.

    Parameters
    ----------
    vertices : array-like of shape (n, 2)
        Ordered polyline vertices, ``n >= 2``; consecutive vertices must
        be distinct.
    origin_arc_length : float
        Arc length of the frame origin. Frenet ``s`` is measured from here.
    corridor_half_width : float
        Largest admissible ``|d|``.
    path_id : str
        Identifier used by trajectories and serialization.
    """

    def __init__(self, vertices, origin_arc_length=0.0, corridor_half_width=4.0, path_id="path"):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise ShapeMismatch(f"vertices must have shape (n>=2, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        seg = np.diff(v, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive vertices must be distinct")
        if corridor_half_width <= 0:
            raise ValueError("corridor_half_width must be positive")
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        origin_arc_length = float(origin_arc_length)
        if not (-1e-9 <= origin_arc_length <= cum[-1] + 1e-9):
            raise ValueError("origin_arc_length outside the path")

        tangents = seg / seg_len[:, None]
        seg_normals = _left_normal(tangents)
        vnorm = np.empty_like(v)
        vnorm[0] = seg_normals[0]
        vnorm[-1] = seg_normals[-1]
        if len(v) > 2:
            bis = seg_normals[:-1] + seg_normals[1:]
            bis_len = np.hypot(bis[:, 0], bis[:, 1])
            if np.any(bis_len < 1e-6):
                raise ValueError("path reverses direction at a vertex")
            vnorm[1:-1] = bis / bis_len[:, None]

        for arr in (v, seg, seg_len, cum, tangents, vnorm):
            arr.setflags(write=False)
        self._vertices = v
        self._seg = seg
        self._seg_len = seg_len
        self._cum = cum
        self._tangents = tangents
        self._vertex_normals = vnorm
        self.origin_arc_length = min(max(origin_arc_length, 0.0), float(cum[-1]))
        self.corridor_half_width = float(corridor_half_width)
        self.path_id = str(path_id)

    @property
    def vertices(self):
        return self._vertices

    @property
    def arc_lengths(self):
        """Cumulative arc length at each vertex."""
        return self._cum

    @property
    def length(self):
        return float(self._cum[-1])

    @property
    def vertex_normals(self):
        return self._vertex_normals

    def with_origin(self, origin_arc_length):
        return ReferencePath(
            self._vertices,
            origin_arc_length=origin_arc_length,
            corridor_half_width=self.corridor_half_width,
            path_id=self.path_id,
        )

    def s_range(self):
        """Admissible Frenet ``s`` interval ``(s_min, s_max)``."""
        return -self.origin_arc_length, self.length - self.origin_arc_length

    def point_at(self, arc):
        """On-path point at absolute arc length(s) ``arc``, clipped to the path."""
        arc = np.clip(np.asarray(arc, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self._cum, arc, side="right") - 1, 0, len(self._seg) - 1)
        u = (arc - self._cum[idx]) / self._seg_len[idx]
        return self._vertices[idx] + u[..., None] * self._seg[idx]

    def __eq__(self, other):
        if not isinstance(other, ReferencePath):
            return NotImplemented
        return (
            self.path_id == other.path_id
            and np.array_equal(self._vertices, other._vertices)
            and self.origin_arc_length == other.origin_arc_length
            and self.corridor_half_width == other.corridor_half_width
        )

    def __hash__(self):
        return hash((self.path_id, self._vertices.tobytes(), self.origin_arc_length))

    def __repr__(self):
        return (
            f"ReferencePath(path_id={self.path_id!r}, n_vertices={len(self._vertices)}, "
            f"length={self.length:.3f}, origin={self.origin_arc_length:.3f})"
        )


@dataclass(frozen=True)
class VehicleFootprint:
    """Rectangle approximated by three equal circles along the heading."""

    length: float = 4.5
    width: float = 1.8
    circle_radius: float = 1.0
    circle_offsets: tuple = (-1.5, 0.0, 1.5)

    def __post_init__(self):
        if self.circle_radius <= 0:
            raise ValueError("circle_radius must be positive")
        offsets = tuple(float(o) for o in self.circle_offsets)
        if len(offsets) != 3 or not np.isclose(offsets[0], -offsets[2]) or offsets[1] != 0.0:
            raise ValueError("circle_offsets must be (-a, 0, a)")
        object.__setattr__(self, "circle_offsets", offsets)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fixed-rate sequence of Frenet states ``(s, d)`` on one path."""

    states: np.ndarray
    dt: float
    path_id: str

    def __post_init__(self):
        states = np.array(self.states, dtype=float).reshape(-1, 2)
        if states.shape[0] < 1:
            raise ShapeMismatch("a trajectory needs at least one state")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory states must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self):
        return self.states.shape[0]

    @property
    def s(self):
        return self.states[:, 0]

    @property
    def d(self):
        return self.states[:, 1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.path_id == other.path_id
            and self.dt == other.dt
            and np.array_equal(self.states, other.states)
        )

    def allclose(self, other, atol=1e-9):
        return (
            self.path_id == other.path_id
            and np.isclose(self.dt, other.dt)
            and self.states.shape == other.states.shape
            and np.allclose(self.states, other.states, rtol=0.0, atol=atol)
        )


# ---------------------------------------------------------------------------
# Frenet conversion


def _as_points(p):
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != 2:
        raise ShapeMismatch(f"expected trailing dimension 2, got shape {arr.shape}")
    return arr


def _segment_roots(path, pts):
    """Blended-normal foot parameters for every (point, segment) pair.

    Returns ``u`` of shape (n, m, 2) (two quadratic roots, NaN when
    invalid) for n points and m segments.
    """
    A = path._vertices[:-1]
    e = path._seg
    nA = path._vertex_normals[:-1]
    dN = path._vertex_normals[1:] - nA
    q = pts[:, None, :] - A[None, :, :]
    a2 = -_cross(dN, e)[None, :].repeat(len(pts), axis=0)
    a1 = _cross(dN[None], q) - _cross(nA, e)[None, :]
    a0 = _cross(nA[None], q)

    roots = np.full(a0.shape + (2,), np.nan)
    scale = np.maximum(np.abs(a1), 1e-300)
    lin = np.abs(a2) <= 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        roots[..., 0] = np.where(lin, -a0 / a1, np.nan)
        disc = a1 * a1 - 4.0 * a2 * a0
        quad = ~lin & (disc >= 0)
        sq = np.sqrt(np.where(quad, disc, 0.0))
        # numerically stable pair of roots
        qq = -0.5 * (a1 + np.copysign(sq, a1))
        r1 = np.where(quad, qq / a2, np.nan)
        r2 = np.where(quad & (qq != 0), a0 / qq, np.nan)
        roots[..., 0] = np.where(quad, r1, roots[..., 0])
        roots[..., 1] = r2
    tol = 1e-9
    inside = (roots >= -tol) & (roots <= 1.0 + tol)
    roots = np.where(inside, np.clip(roots, 0.0, 1.0), np.nan)
    return roots


def project_to_frenet(p, path):
    """Map Cartesian point(s) to Frenet ``(s, d)`` on ``path``.

    Parameters
    ----------
    p : array-like of shape (2,) or (n, 2)
    path : ReferencePath

    Returns
    -------
    FrenetState for a single point, else ndarray of shape (n, 2).

    Raises
    ------
    OutOfCorridor
        If no frame foot within ``corridor_half_width`` exists.
    """
    arr = _as_points(p)
    single = arr.ndim == 1
    pts = arr.reshape(-1, 2)
    roots = _segment_roots(path, pts)  # (n, m, 2)
    n, m, _ = roots.shape
    seg_idx = np.broadcast_to(np.arange(m)[None, :, None], roots.shape)
    valid = ~np.isnan(roots)
    u = np.where(valid, roots, 0.0)

    A = path._vertices[:-1][seg_idx]
    e = path._seg[seg_idx]
    nA = path._vertex_normals[:-1][seg_idx]
    nB = path._vertex_normals[1:][seg_idx]
    foot = A + u[..., None] * e
    M = (1.0 - u)[..., None] * nA + u[..., None] * nB
    M /= np.linalg.norm(M, axis=-1, keepdims=True)
    d = np.einsum("...k,...k->...", pts[:, None, None, :] - foot, M)
    arc = path._cum[:-1][seg_idx] + u * path._seg_len[seg_idx]

    absd = np.where(valid, np.abs(d), np.inf).reshape(n, -1)
    arc_flat = arc.reshape(n, -1)
    best = np.min(absd, axis=1)
    # ties on |d| broken by the lower arc length
    cand = absd <= best[:, None] + 1e-12
    arc_masked = np.where(cand, arc_flat, np.inf)
    pick = np.argmin(arc_masked, axis=1)
    rows = np.arange(n)
    if np.any(~np.isfinite(best)) or np.any(best > path.corridor_half_width + 1e-9):
        bad = int(np.argmax(~np.isfinite(best) | (best > path.corridor_half_width + 1e-9)))
        raise OutOfCorridor(
            f"point {pts[bad].tolist()} is outside the corridor of path {path.path_id!r}"
        )
    out = np.stack([arc_flat[rows, pick] - path.origin_arc_length, d.reshape(n, -1)[rows, pick]], axis=-1)
    if single:
        return FrenetState(float(out[0, 0]), float(out[0, 1]))
    return out.reshape(arr.shape)


def _frame_at(path, s, strict=True):
    s = np.asarray(s, dtype=float)
    arc = s + path.origin_arc_length
    tol = 1e-9
    if strict and (np.any(arc < -tol) or np.any(arc > path.length + tol)):
        raise OffPathEnd(
            f"s outside [{-path.origin_arc_length:.6g}, "
            f"{path.length - path.origin_arc_length:.6g}] on path {path.path_id!r}"
        )
    arc = np.clip(arc, 0.0, path.length)
    idx = np.clip(np.searchsorted(path._cum, arc, side="right") - 1, 0, len(path._seg) - 1)
    u = (arc - path._cum[idx]) / path._seg_len[idx]
    foot = path._vertices[idx] + u[..., None] * path._seg[idx]
    M = (1.0 - u)[..., None] * path._vertex_normals[idx] + u[..., None] * path._vertex_normals[idx + 1]
    M = M / np.linalg.norm(M, axis=-1, keepdims=True)
    return foot, M


def to_cartesian(f, path):
    """Map Frenet state(s) ``(s, d)`` to Cartesian coordinates.

    Raises
    ------
    OffPathEnd
        If ``s`` lies outside the path (no extrapolation).
    """
    arr = _as_points(f)
    foot, M = _frame_at(path, arr[..., 0])
    xy = foot + arr[..., 1][..., None] * M
    if arr.ndim == 1:
        return CartesianPoint(float(xy[0]), float(xy[1]))
    return xy


def frenet_pose(f, path, strict=True):
    """Cartesian position and unit heading (local frame tangent) of state(s)."""
    arr = _as_points(f)
    foot, M = _frame_at(path, arr[..., 0], strict=strict)
    xy = foot + arr[..., 1][..., None] * M
    heading = np.stack([M[..., 1], -M[..., 0]], axis=-1)
    return xy, heading


def closest_point(p, path):
    """Nearest point on the polyline, ignoring the corridor.

    Returns
    -------
    arc : ndarray
        Absolute arc length of the nearest point (ties -> lower arc length).
    dist : ndarray
        Euclidean distance to it.
    """
    pts = _as_points(p)
    flat = pts.reshape(-1, 2)
    A = path._vertices[:-1]
    e = path._seg
    q = flat[:, None, :] - A[None]
    t = np.clip(np.einsum("nmk,mk->nm", q, e) / (path._seg_len**2)[None], 0.0, 1.0)
    foot = A[None] + t[..., None] * e[None]
    dist = np.linalg.norm(flat[:, None, :] - foot, axis=-1)
    arc = path._cum[:-1][None] + t * path._seg_len[None]
    best = dist.min(axis=1)
    cand = dist <= best[:, None] + 1e-12
    pick = np.argmin(np.where(cand, arc, np.inf), axis=1)
    rows = np.arange(len(flat))
    return arc[rows, pick].reshape(pts.shape[:-1]), best.reshape(pts.shape[:-1])


# ---------------------------------------------------------------------------
# Cross points


class CrossPoint(NamedTuple):
    point: CartesianPoint
    arc_a: float
    arc_b: float
    degenerate: bool = False


def cross_point(a, b):
    """First intersection of two polylines by arc length along ``a``.

    Collinear overlaps count as intersections at the start of the overlap
    and set ``degenerate``.

    Raises
    ------
    NoIntersection
        When the polylines are disjoint; see :func:`closest_approach`.
    """
    Aa = a._vertices[:-1][:, None, :]
    ea = a._seg[:, None, :]
    Ab = b._vertices[:-1][None, :, :]
    eb = b._seg[None, :, :]
    w = Ab - Aa
    denom = _cross(ea, eb)
    la = a._seg_len[:, None]
    lb = b._seg_len[None, :]
    parallel = np.abs(denom) <= 1e-12 * la * lb
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(w, eb) / denom
        u = _cross(w, ea) / denom
    tol = 1e-12
    hit = ~parallel & (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)
    t = np.clip(t, 0.0, 1.0)
    u = np.clip(u, 0.0, 1.0)
    arc_a = np.where(hit, a._cum[:-1][:, None] + t * la, np.inf)
    arc_b = np.where(hit, b._cum[:-1][None, :] + u * lb, np.inf)
    degenerate = np.zeros_like(hit)

    # collinear overlaps
    collinear = parallel & (np.abs(_cross(w, ea)) <= 1e-9 * la)
    if np.any(collinear):
        ii, jj = np.nonzero(collinear)
        for i, j in zip(ii, jj):
            e_i = a._seg[i]
            l2 = a._seg_len[i] ** 2
            t0 = np.dot(b._vertices[j] - a._vertices[i], e_i) / l2
            t1 = np.dot(b._vertices[j + 1] - a._vertices[i], e_i) / l2
            lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))
            if lo <= hi + tol:
                point = a._vertices[i] + lo * e_i
                arc_a[i, j] = a._cum[i] + lo * a._seg_len[i]
                ub = np.dot(point - b._vertices[j], b._seg[j]) / b._seg_len[j] ** 2
                arc_b[i, j] = b._cum[j] + np.clip(ub, 0, 1) * b._seg_len[j]
                hit[i, j] = True
                degenerate[i, j] = True

    if not np.any(hit):
        raise NoIntersection(f"paths {a.path_id!r} and {b.path_id!r} do not intersect")
    best_a = arc_a.min()
    cand = arc_a <= best_a + 1e-12
    flat = np.argmin(np.where(cand, arc_b, np.inf))
    i, j = np.unravel_index(flat, arc_a.shape)
    sa = float(arc_a[i, j])
    pt = a.point_at(sa)
    return CrossPoint(CartesianPoint(float(pt[0]), float(pt[1])), sa, float(arc_b[i, j]), bool(degenerate[i, j]))


def closest_approach(a, b):
    """Midpoint of the closest pair of points of two disjoint polylines (flagged degenerate)."""
    arc_b, dist_b = closest_point(a._vertices, b)
    arc_a, dist_a = closest_point(b._vertices, a)
    if dist_b.min() <= dist_a.min():
        i = int(np.argmin(dist_b))
        pa = a._vertices[i]
        sa = float(a._cum[i])
        sb = float(arc_b[i])
        pb = b.point_at(sb)
    else:
        j = int(np.argmin(dist_a))
        pb = b._vertices[j]
        sb = float(b._cum[j])
        sa = float(arc_a[j])
        pa = a.point_at(sa)
    mid = 0.5 * (pa + pb)
    return CrossPoint(CartesianPoint(float(mid[0]), float(mid[1])), sa, sb, True)


def anchor_at_cross_point(a, b, fallback=True):
    """Return copies of ``a`` and ``b`` whose origins sit at their cross point.

    Returns
    -------
    (ReferencePath, ReferencePath, CrossPoint)
        When the paths are disjoint and ``fallback`` is true, the closest
        approach is used and ``CrossPoint.degenerate`` is set.
    """
    try:
        cp = cross_point(a, b)
    except NoIntersection:
        if not fallback:
            raise
        cp = closest_approach(a, b)
    return a.with_origin(cp.arc_a), b.with_origin(cp.arc_b), cp


# ---------------------------------------------------------------------------
# Footprints and collisions


def circle_centers(f, path, footprint, strict=True):
    """Centers of the three footprint circles, shape (..., 3, 2)."""
    xy, heading = frenet_pose(f, path, strict=strict)
    offs = np.asarray(footprint.circle_offsets)
    return xy[..., None, :] + offs[:, None] * heading[..., None, :]


def collision(sa, path_a, sb, path_b, fa=None, fb=None):
    """True where any of the 3x3 circle pairs of two vehicles overlap.

    ``sa`` and ``sb`` broadcast against each other; each is a Frenet state
    or an array of states on its own path.
    """
    fa = fa or VehicleFootprint()
    fb = fb or VehicleFootprint()
    ca = circle_centers(sa, path_a, fa)
    cb = circle_centers(sb, path_b, fb)
    diff = ca[..., :, None, :] - cb[..., None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    hit = np.any(dist < fa.circle_radius + fb.circle_radius, axis=(-1, -2))
    if np.ndim(hit) == 0:
        return bool(hit)
    return hit


def collides_on_paths(sa, path_a, sb, path_b, fa=None, fb=None):
    """Like :func:`collision` but states beyond either path's ends never collide."""
    sa = np.asarray(sa, dtype=float)
    sb = np.asarray(sb, dtype=float)
    lo_a, hi_a = path_a.s_range()
    lo_b, hi_b = path_b.s_range()
    valid = (sa[..., 0] >= lo_a) & (sa[..., 0] <= hi_a) & (sb[..., 0] >= lo_b) & (sb[..., 0] <= hi_b)
    ca = sa.copy()
    cb = sb.copy()
    ca[..., 0] = np.clip(ca[..., 0], lo_a, hi_a)
    cb[..., 0] = np.clip(cb[..., 0], lo_b, hi_b)
    hit = np.asarray(collision(ca, path_a, cb, path_b, fa, fb)) & valid
    if np.ndim(hit) == 0:
        return bool(hit)
    return hit


# ---------------------------------------------------------------------------
# Serialization


def save_paths(paths, csv_file):
    """Write paths as ``path_id, vertex_index, x, y`` plus a JSON sidecar.

    The sidecar (``<csv stem>.json``) stores each path's origin arc length
    and corridor half-width.
    """
    csv_file = Path(csv_file)
    with open(csv_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "vertex_index", "x", "y"])
        for p in paths:
            for k, (x, y) in enumerate(p.vertices):
                w.writerow([p.path_id, k, repr(float(x)), repr(float(y))])
    meta = {
        p.path_id: {
            "origin_arc_length": p.origin_arc_length,
            "corridor_half_width": p.corridor_half_width,
        }
        for p in paths
    }
    csv_file.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_paths(csv_file):
    """Inverse of :func:`save_paths`; returns ``{path_id: ReferencePath}``."""
    from .exceptions import SchemaError

    csv_file = Path(csv_file)
    verts = {}
    with open(csv_file, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"path_id", "vertex_index", "x", "y"} - set(reader.fieldnames or [])
        if missing:
            raise SchemaError(f"missing column {sorted(missing)[0]!r}", column=sorted(missing)[0])
        for row_no, row in enumerate(reader, start=2):
            try:
                verts.setdefault(row["path_id"], []).append(
                    (int(row["vertex_index"]), float(row["x"]), float(row["y"]))
                )
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"bad value: {exc}", row=row_no) from exc
    sidecar = csv_file.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    out = {}
    for pid, rows in verts.items():
        rows.sort()
        m = meta.get(pid, {})
        out[pid] = ReferencePath(
            [(x, y) for _, x, y in rows],
            origin_arc_length=m.get("origin_arc_length", 0.0),
            corridor_half_width=m.get("corridor_half_width", 4.0),
            path_id=pid,
        )
    return out
