"""Static top-down SVG of an episode and SVG metric tables."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .geometry import box_corners
from .records import EpisodeLog


def _bounds(*point_sets: np.ndarray, pad: float = 5.0) -> tuple[float, float, float, float]:
    pts = np.vstack([p.reshape(-1, 2) for p in point_sets if p.size])
    lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    return lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]


def _points(arr: np.ndarray) -> str:
    # SVG's y axis points down; flip so the world frame reads naturally
    return " ".join(f"{x:.3f},{-y:.3f}" for x, y in arr)


def _box(pose: np.ndarray, extent, fill: str, opacity: float) -> str:
    c = box_corners(np.array([pose[0], pose[1], pose[2], extent[0], extent[1]]))
    return f'<polygon points="{_points(c)}" fill="{fill}" fill-opacity="{opacity:.2f}" stroke="black" stroke-width="0.1"/>'


def episode_svg(log: EpisodeLog, frame: int | None = None, every: int = 10, px_per_m: float = 6.0) -> str:
    """Road, expert path, ego trace and boxes.

    With ``frame`` set, draws the scene at that step only; otherwise overlays
    boxes every ``every`` steps with increasing opacity.
    """
    steps = len(log.trace)
    if frame is not None and not 0 <= frame < steps:
        raise ValueError(f"frame {frame} outside 0..{steps - 1}")
    x0, y0, w, h = _bounds(log.road, log.trace[:, :2])
    flip_y = -(y0 + h)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * px_per_m:.0f}" height="{h * px_per_m:.0f}" '
           f'viewBox="{x0:.3f} {flip_y:.3f} {w:.3f} {h:.3f}">',
           f'<rect x="{x0:.3f}" y="{flip_y:.3f}" width="{w:.3f}" height="{h:.3f}" fill="#f4f1e8"/>',
           f'<polygon id="road" points="{_points(log.road)}" fill="#c9c9c9" stroke="#666" stroke-width="0.15"/>',
           f'<polyline id="centerline" points="{_points(log.centerline)}" fill="none" stroke="white" '
           f'stroke-width="0.15" stroke-dasharray="1,1"/>',
           f'<polyline id="expert" points="{_points(log.expert[:, :2])}" fill="none" stroke="#2a7d2a" '
           f'stroke-width="0.25" stroke-opacity="0.6"/>']
    shown = [frame] if frame is not None else sorted(set(range(0, steps, every)) | {steps - 1})
    for k in shown:
        alpha = 0.9 if frame is not None else 0.15 + 0.75 * k / max(steps - 1, 1)
        for i, pose in enumerate(log.agent_trace[k] if len(log.agent_trace) else []):
            out.append(_box(pose, log.agent_extents[i], "#d9822b", alpha))
        out.append(_box(log.trace[k], log.ego_extent, "#2b63d9", alpha))
    upto = steps if frame is None else frame + 1
    out.append(f'<polyline id="ego-trace" points="{_points(log.trace[:upto, :2])}" fill="none" '
               f'stroke="#2b63d9" stroke-width="0.3"/>')
    status = "collision" if log.collided else "off-road" if log.offroad else "safe"
    out.append(f'<text x="{x0 + 1:.3f}" y="{flip_y + 3:.3f}" font-size="2.5" font-family="monospace">'
               f'{escape(log.scenario_id)} {escape(log.scene_type)} PR={100 * log.progress_ratio:.1f}% {status}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def table_svg(header: list[str], rows: list[list[str]], cell_w: int = 130, cell_h: int = 26) -> str:
    n_cols = len(header)
    w, h = n_cols * cell_w, (len(rows) + 1) * cell_h
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="monospace" font-size="13">',
           f'<rect width="{w}" height="{h}" fill="white"/>',
           f'<rect width="{w}" height="{cell_h}" fill="#e4e4e4"/>']
    for r, row in enumerate([header] + rows):
        if len(row) != n_cols:
            raise ValueError("ragged table row")
        for c, cell in enumerate(row):
            anchor, x = ("start", c * cell_w + 6) if c == 0 else ("end", (c + 1) * cell_w - 6)
            out.append(f'<text x="{x}" y="{(r + 1) * cell_h - 8}" text-anchor="{anchor}">{escape(cell)}</text>')
    out.append(f'<line x1="0" y1="{cell_h}" x2="{w}" y2="{cell_h}" stroke="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
