"""Minimal SVG emission for line plots and trajectory panels."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_plot", "trajectory_panels"]

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _num(x):
    return f"{x:.2f}"


class _Frame:
    """Maps data coordinates into a pixel box (y axis up)."""

    def __init__(self, x0, y0, w, h, xlim, ylim, equal=False):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        (a, b), (c, d) = xlim, ylim
        if b - a <= 0:
            a, b = a - 1.0, b + 1.0
        if d - c <= 0:
            c, d = c - 1.0, d + 1.0
        if equal:
            scale = min(w / (b - a), h / (d - c))
            cx, cy = (a + b) / 2, (c + d) / 2
            a, b = cx - w / scale / 2, cx + w / scale / 2
            c, d = cy - h / scale / 2, cy + h / scale / 2
        self.xlim, self.ylim = (a, b), (c, d)

    def __call__(self, x, y):
        (a, b), (c, d) = self.xlim, self.ylim
        px = self.x0 + (np.asarray(x) - a) / (b - a) * self.w
        py = self.y0 + self.h - (np.asarray(y) - c) / (d - c) * self.h
        return px, py

    def polyline(self, xy, color, width=1.0, opacity=1.0, dash=None):
        px, py = self(xy[:, 0], xy[:, 1])
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(px, py))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"{extra}/>'
        )


def _text(x, y, s, size=12, anchor="middle"):
    return f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{escape(str(s))}</text>'


def _document(width, height, body):
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">'
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def line_plot(series, xlabel="", ylabel="", title="", width=480, height=320):
    """Line plot with optional error bars.

    Parameters
    ----------
    series : list of dict
        Each with ``x``, ``y``, optional ``err`` and ``label``.
    """
    xs = np.concatenate([np.asarray(s["x"], float) for s in series])
    ys = np.concatenate(
        [np.asarray(s["y"], float) + np.asarray(s.get("err", 0.0), float) for s in series]
        + [np.asarray(s["y"], float) - np.asarray(s.get("err", 0.0), float) for s in series]
    )
    frame = _Frame(60, 30, width - 80, height - 80, (xs.min(), xs.max()), (min(0.0, ys.min()), ys.max()))
    body = [f'<rect x="60" y="30" width="{width - 80}" height="{height - 80}" fill="none" stroke="black"/>']
    for tick in np.linspace(*frame.xlim, 5):
        px, _ = frame(tick, frame.ylim[0])
        body.append(_text(px, height - 34, f"{tick:.2g}", 10))
    for tick in np.linspace(*frame.ylim, 5):
        _, py = frame(frame.xlim[0], tick)
        body.append(_text(55, py + 4, f"{tick:.2g}", 10, "end"))
    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        x, y = np.asarray(s["x"], float), np.asarray(s["y"], float)
        body.append(frame.polyline(np.column_stack([x, y]), color, 2.0))
        err = np.broadcast_to(np.asarray(s.get("err", 0.0), float), y.shape)
        for xi, yi, ei in zip(x, y, err):
            px, py = frame(xi, yi)
            body.append(f'<circle cx="{_num(px)}" cy="{_num(py)}" r="3" fill="{color}"/>')
            if ei > 0:
                _, lo = frame(xi, yi - ei)
                _, hi = frame(xi, yi + ei)
                body.append(f'<line x1="{_num(px)}" y1="{_num(lo)}" x2="{_num(px)}" y2="{_num(hi)}" stroke="{color}"/>')
        if s.get("label"):
            body.append(_text(width - 30, 48 + 16 * i, s["label"], 11, "end").replace("<text", f'<text fill="{color}"'))
    body += [_text(width / 2, 20, title, 14), _text(width / 2, height - 12, xlabel)]
    body.append(f'<text x="16" y="{height / 2}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {height / 2})">{escape(ylabel)}</text>')
    return _document(width, height, body)


def trajectory_panels(panels, paths, ego_plan=None, panel_size=300):
    """Side-by-side panels of Cartesian trajectories over the reference paths.

    Parameters
    ----------
    panels : list of (title, list of (n, 2) arrays, colliding flags or None)
        Colliding trajectories are drawn in red, others in blue.
    paths : iterable of ReferencePath
    ego_plan : (n, 2) array, optional
        Drawn in green on every panel.
    """
    paths = list(paths)
    focus = [np.asarray(xy, float) for _, trajs, _ in panels for xy in trajs]
    if ego_plan is not None:
        focus.append(np.asarray(ego_plan, float))
    focus = np.vstack(focus or [p.vertices for p in paths])
    lo, hi = focus.min(axis=0) - 6.0, focus.max(axis=0) + 6.0
    body = []
    width = panel_size * len(panels)
    height = panel_size + 30
    for i, (title, trajs, flags) in enumerate(panels):
        side = panel_size - 20
        ox = i * panel_size + 10
        frame = _Frame(0, 0, side, side, (lo[0], hi[0]), (lo[1], hi[1]), equal=True)
        body.append(f'<svg x="{ox}" y="30" width="{side}" height="{side}">')
        body.append(f'<rect width="{side}" height="{side}" fill="none" stroke="#999"/>')
        for path in paths:
            body.append(frame.polyline(np.asarray(path.vertices), "#bbbbbb", 6.0, 0.6))
        if ego_plan is not None:
            body.append(frame.polyline(np.asarray(ego_plan), COLORS[2], 2.5))
        flags = [False] * len(trajs) if flags is None else list(flags)
        for xy, hit in zip(trajs, flags):
            body.append(frame.polyline(np.asarray(xy), COLORS[1] if hit else COLORS[0], 1.0, 0.6))
        body.append("</svg>")
        rate = f" ({np.mean(flags):.2f} colliding)" if len(flags) else ""
        body.append(_text(ox + side / 2, 20, f"{title}{rate}", 12))
    return _document(width, height, body)
