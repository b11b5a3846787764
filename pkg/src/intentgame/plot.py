"""Static top-down SVG plots of scenario solutions.

Drawn natively so that identical inputs give byte-identical files: lanes,
vehicle footprints at sampled stages, position traces and labels.  The
lateral axis is stretched relative to the longitudinal one so that lane
changes stay visible over a long stretch of road.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .hypotheses import LAT, LON, STATE_DIM, ReplicaIndex, SceneDescription
from .model import GameTrajectory

PALETTE = ("#1f5fbf", "#c0392b", "#d35400", "#27ae60", "#8e44ad", "#7f8c8d")
CAR_LENGTH = 4.5
CAR_WIDTH = 1.8


@dataclass(frozen=True)
class PlotLayout:
    px_per_m_lon: float = 4.0
    px_per_m_lat: float = 14.0
    margin: float = 40.0
    footprint_every: int = 10


def _fmt(v: float) -> str:
    out = f"{v:.2f}"
    return "0.00" if out == "-0.00" else out


def _color(info) -> str:
    if info.index == 0:
        return PALETTE[0]
    return PALETTE[1 + (hash_agent(info.agent) % (len(PALETTE) - 1))]


def hash_agent(name: str) -> int:
    """Stable small integer for an agent name (Python's ``hash`` is salted per process)."""
    return sum((k + 1) * ord(c) for k, c in enumerate(name))


class _Canvas:
    def __init__(self, scene: SceneDescription, lon_range, layout: PlotLayout, legend_rows: int):
        self.layout = layout
        self.lon0, lon1 = lon_range
        lanes = scene.lane_centers
        half = scene.lane_width / 2
        self.lat_lo, self.lat_hi = lanes[0] - half, lanes[-1] + half
        self.width = 2 * layout.margin + (lon1 - self.lon0) * layout.px_per_m_lon
        self.road_h = (self.lat_hi - self.lat_lo) * layout.px_per_m_lat
        self.height = 2 * layout.margin + self.road_h + 18.0 * legend_rows
        self.parts = []

    def x(self, lon):
        return self.layout.margin + (lon - self.lon0) * self.layout.px_per_m_lon

    def y(self, lat):
        return self.layout.margin + (self.lat_hi - lat) * self.layout.px_per_m_lat

    def add(self, text: str):
        self.parts.append(text)

    def road(self, scene: SceneDescription, lon_range):
        x0, x1 = self.x(lon_range[0]), self.x(lon_range[1])
        self.add(f'<rect x="{_fmt(x0)}" y="{_fmt(self.y(self.lat_hi))}" width="{_fmt(x1 - x0)}" '
                 f'height="{_fmt(self.road_h)}" fill="#eeeeee"/>')
        half = scene.lane_width / 2
        bounds = [c - half for c in scene.lane_centers] + [scene.lane_centers[-1] + half]
        for k, b in enumerate(bounds):
            outer = k in (0, len(bounds) - 1)
            dash = "" if outer else ' stroke-dasharray="12 10"'
            self.add(f'<line x1="{_fmt(x0)}" y1="{_fmt(self.y(b))}" x2="{_fmt(x1)}" y2="{_fmt(self.y(b))}" '
                     f'stroke="#555555" stroke-width="{2 if outer else 1}"{dash}/>')

    def trace(self, lon, lat, color, dashed=False, width=2.0):
        pts = " ".join(f"{_fmt(self.x(a))},{_fmt(self.y(b))}" for a, b in zip(lon, lat))
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        self.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{_fmt(width)}"{dash}/>')

    def footprint(self, lon, lat, color, opacity):
        w = CAR_LENGTH * self.layout.px_per_m_lon
        h = CAR_WIDTH * self.layout.px_per_m_lat
        self.add(f'<rect x="{_fmt(self.x(lon) - w / 2)}" y="{_fmt(self.y(lat) - h / 2)}" width="{_fmt(w)}" '
                 f'height="{_fmt(h)}" rx="3" fill="{color}" fill-opacity="{_fmt(opacity)}" stroke="{color}"/>')

    def label(self, x, y, text, color="#222222", size=12):
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" font-size="{size}" '
                 f'fill="{color}">{escape(text)}</text>')

    def render(self, title: str) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(self.width)}" '
                f'height="{_fmt(self.height)}" viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">')
        body = [head, f'<title>{escape(title)}</title>',
                f'<rect width="{_fmt(self.width)}" height="{_fmt(self.height)}" fill="white"/>']
        return "\n".join(body + self.parts + ["</svg>"]) + "\n"


def _lon_range(trajs, n_players):
    lons = np.concatenate([t.states[:, STATE_DIM * i + LON] for t in trajs for i in range(n_players)])
    lo, hi = float(lons.min()), float(lons.max())
    return lo - CAR_LENGTH, hi + CAR_LENGTH


def _draw(canvas, traj, index, layout, dashed, label, width):
    T = traj.horizon
    for info in index:
        s = traj.states[:, STATE_DIM * info.index:STATE_DIM * (info.index + 1)]
        color = _color(info)
        replica_dashed = dashed or (info.index > 0 and info.hypothesis is not None
                                    and info.probability is not None and info.probability < 0.5)
        canvas.trace(s[:, LON], s[:, LAT], color, replica_dashed, width)
        for t in range(0, T + 1, layout.footprint_every):
            canvas.footprint(s[t, LON], s[t, LAT], color, 0.15 + 0.5 * t / max(T, 1))
        if label is not None and info.index == 0:
            canvas.label(canvas.x(s[-1, LON]) + 8, canvas.y(s[-1, LAT]) - 6, label, color, 11)


def plot_solution(traj: GameTrajectory, scene: SceneDescription, index: ReplicaIndex, title: str,
                  layout: PlotLayout | None = None) -> str:
    """SVG of one solution: every player's trace and footprints, with a legend."""
    layout = layout or PlotLayout()
    rng = _lon_range([traj], len(index))
    canvas = _Canvas(scene, rng, layout, len(index) + 1)
    canvas.road(scene, rng)
    _draw(canvas, traj, index, layout, False, None, 2.0)
    y = layout.margin + canvas.road_h + 18
    canvas.label(layout.margin, y, title, size=13)
    for info in index:
        y += 18
        text = info.name if info.index == 0 else (
            f"{info.name}: {info.agent} {info.hypothesis} (p={info.probability:g}, weight={info.weight:.4g})")
        canvas.label(layout.margin, y, text, _color(info))
    return canvas.render(title)


def plot_overlay(runs, scene: SceneDescription, index: ReplicaIndex, title: str,
                 layout: PlotLayout | None = None) -> str:
    """SVG overlaying several solutions of one scenario, each labelled with its probabilities.

    ``runs`` is a sequence of ``(label, trajectory)``; the ego trace of each
    run carries its label at the end of the horizon.
    """
    layout = layout or PlotLayout()
    trajs = [t for _, t in runs]
    rng = _lon_range(trajs, len(index))
    canvas = _Canvas(scene, rng, layout, len(runs) + 1)
    canvas.road(scene, rng)
    for k, (label, traj) in enumerate(runs):
        _draw(canvas, traj, index, layout, k > 0, label, 2.5 if k == 0 else 1.5)
    y = layout.margin + canvas.road_h + 18
    canvas.label(layout.margin, y, title, size=13)
    for k, (label, traj) in enumerate(runs):
        y += 18
        style = "solid" if k == 0 else "dashed"
        canvas.label(layout.margin, y, f"{label} ({style})")
    return canvas.render(title)
