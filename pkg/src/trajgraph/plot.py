"""Standalone SVG rendering of a scene with optional predicted modes."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .scene import Scene

MODE_COLORS = ("#d62728", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
               "#bcbd22", "#7f7f7f")
WIDTH = 800
MARGIN = 20.0


def _num(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


class _Canvas:
    def __init__(self, points: np.ndarray):
        lo, hi = points.min(0), points.max(0)
        span = np.maximum(hi - lo, 1e-6)
        self.lo = lo
        self.scale = (WIDTH - 2 * MARGIN) / span.max()
        self.height = int(np.ceil(span[1] * self.scale + 2 * MARGIN))

    def path(self, xy: np.ndarray) -> str:
        px = MARGIN + (xy[:, 0] - self.lo[0]) * self.scale
        py = self.height - MARGIN - (xy[:, 1] - self.lo[1]) * self.scale
        return " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(px, py))


def _polyline(c: _Canvas, xy: np.ndarray, color: str, width: float, extra: str = "") -> str:
    return (f'<polyline points="{c.path(xy)}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{extra}/>')


def render_svg(scene: Scene, mu_world: np.ndarray | None = None, pi: np.ndarray | None = None) -> str:
    """SVG text for ``scene``; ``mu_world`` [F, H, 2] and ``pi`` [F] are the target's modes."""
    T = scene.t_obs
    pts = [l.centerline for l in scene.lanelets]
    pts += [a.xy[a.present] for a in scene.agents]
    if mu_world is not None:
        pts.append(mu_world.reshape(-1, 2))
    c = _Canvas(np.concatenate(pts, axis=0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{c.height}" '
           f'viewBox="0 0 {WIDTH} {c.height}">',
           f'<title>{escape(scene.scene_id)}</title>',
           '<rect width="100%" height="100%" fill="white"/>',
           '<g id="lanes">']
    out += [_polyline(c, l.centerline, "#c8c8c8", 1.0) for l in scene.lanelets]
    out.append('</g>')

    out.append('<g id="past">')
    for a in scene.agents:
        obs = a.xy[:T][a.present[:T]]
        color = "#1f77b4" if a.is_target else "#2ca02c"
        if len(obs) > 1:
            out.append(_polyline(c, obs, color, 2.0 if a.is_target else 1.2))
    out.append('</g>')

    out.append('<g id="ground-truth">')
    for a in scene.agents:
        if not a.is_target:
            continue
        fut = a.xy[T - 1:T + scene.horizon][a.present[T - 1:T + scene.horizon]]
        if len(fut) > 1:
            out.append(_polyline(c, fut, "#000000", 1.5, ' stroke-dasharray="4 3"'))
    out.append('</g>')

    if mu_world is not None:
        F = mu_world.shape[0]
        pi = np.full(F, 1.0 / F) if pi is None else pi
        target = scene.agents[scene.target_index]
        start = target.xy[T - 1][None]
        out.append('<g id="predictions">')
        for k in range(F):
            out.append(_polyline(c, np.concatenate([start, mu_world[k]]), MODE_COLORS[k % len(MODE_COLORS)],
                                 1.5, f' data-mode="{k}"'))
        out.append('</g>')
        out.append('<g id="legend" font-family="monospace" font-size="11">')
        for k in range(F):
            y = 16 + 14 * k
            out.append(f'<rect x="8" y="{y - 8}" width="10" height="3" '
                       f'fill="{MODE_COLORS[k % len(MODE_COLORS)]}"/>')
            out.append(f'<text x="24" y="{y}">mode {k}: p={pi[k]:.3f}</text>')
        out.append('</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def save_svg(path, scene: Scene, mu_world=None, pi=None) -> None:
    Path(path).write_text(render_svg(scene, mu_world, pi), encoding="utf-8")
