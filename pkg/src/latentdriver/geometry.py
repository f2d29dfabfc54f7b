"""Planar geometry: poses, oriented boxes, rotated IoU, polygons, path curvature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Triples with a side shorter than this are treated as straight in curvature estimates.
_MIN_TRIPLE_SIDE = 1e-3


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    def compose(self, dx: float, dy: float, dyaw: float) -> "Pose2D":
        """Apply an ego-frame displacement."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2D(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.yaw + dyaw)


def relative_pose(origin, target) -> np.ndarray:
    """Express ``target`` (x, y, yaw) in the frame of ``origin``; inverse of compose."""
    ox, oy, oyaw = origin
    tx, ty, tyaw = target
    c, s = math.cos(oyaw), math.sin(oyaw)
    ddx, ddy = tx - ox, ty - oy
    return np.array([c * ddx + s * ddy, -s * ddx + c * ddy, wrap_angle(tyaw - oyaw)])


def to_local(points: np.ndarray, pose) -> np.ndarray:
    """Transform world points (n, 2) into the frame of ``pose`` (x, y, yaw)."""
    x, y, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    d = np.asarray(points, dtype=np.float64) - np.array([x, y])
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


@dataclass(frozen=True)
class OrientedBox:
    center: Pose2D
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box extents must be positive, got {self.length}x{self.width}")

    def as_array(self) -> np.ndarray:
        return np.array([self.center.x, self.center.y, self.center.yaw, self.length, self.width])

    def corners(self) -> np.ndarray:
        return box_corners(self.as_array())

    @property
    def area(self) -> float:
        return self.length * self.width


def box_corners(boxes: np.ndarray) -> np.ndarray:
    """Counter-clockwise corners (..., 4, 2) of boxes given as (..., 5) [x, y, yaw, l, w]."""
    b = np.asarray(boxes, dtype=np.float64)
    hl, hw = b[..., 3:4] / 2, b[..., 4:5] / 2
    lx = np.concatenate([hl, -hl, -hl, hl], axis=-1)
    ly = np.concatenate([hw, hw, -hw, -hw], axis=-1)
    c, s = np.cos(b[..., 2:3]), np.sin(b[..., 2:3])
    return np.stack([b[..., 0:1] + c * lx - s * ly, b[..., 1:2] + s * lx + c * ly], axis=-1)


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip ``subject`` by the CCW convex polygon ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        inp, out = out, []

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_segment_line_hit(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_segment_line_hit(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _segment_line_hit(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _as_box_array(b) -> np.ndarray:
    return b.as_array() if isinstance(b, OrientedBox) else np.asarray(b, dtype=np.float64)


def intersection_area(a, b) -> float:
    pa, pb = box_corners(_as_box_array(a)), box_corners(_as_box_array(b))
    return max(polygon_area(clip_convex(pa, pb)), 0.0)


def rotated_iou(a, b) -> float:
    """Exact IoU of two oriented boxes by convex clipping."""
    aa, bb = _as_box_array(a), _as_box_array(b)
    # canonical argument order makes the result bitwise symmetric
    if tuple(bb) < tuple(aa):
        aa, bb = bb, aa
    inter = intersection_area(aa, bb)
    union = aa[3] * aa[4] + bb[3] * bb[4] - inter
    if inter <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def rotated_iou_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized IoU of broadcastable box arrays (..., 5).

    Builds the intersection polygon from contained corners and edge crossings,
    orders it by angle about its centroid and applies the shoelace formula.
    """
    a, b = np.broadcast_arrays(np.asarray(a, np.float64), np.asarray(b, np.float64))
    ca, cb = box_corners(a), box_corners(b)

    def inside(pts, boxes):
        d = pts - boxes[..., None, 0:2]
        c, s = np.cos(boxes[..., None, 2]), np.sin(boxes[..., None, 2])
        lx = c * d[..., 0] + s * d[..., 1]
        ly = -s * d[..., 0] + c * d[..., 1]
        tol = 1e-9
        return (np.abs(lx) <= boxes[..., None, 3] / 2 + tol) & (np.abs(ly) <= boxes[..., None, 4] / 2 + tol)

    in_a = inside(cb, a)
    in_b = inside(ca, b)

    p = ca[..., :, None, :]
    r = (np.roll(ca, -1, axis=-2) - ca)[..., :, None, :]
    q = cb[..., None, :, :]
    s = (np.roll(cb, -1, axis=-2) - cb)[..., None, :, :]
    denom = _cross2(r, s)
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross2(qp, s) / denom
        u = _cross2(qp, r) / denom
    ok = (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    t = np.where(ok, t, 0.0)
    hits = p + t[..., None] * r
    lead = a.shape[:-1]
    hits = hits.reshape(*lead, 16, 2)
    ok = ok.reshape(*lead, 16)

    pts = np.concatenate([ca, cb, hits], axis=-2)
    valid = np.concatenate([in_b, in_a, ok], axis=-1)
    cnt = valid.sum(axis=-1)
    w = valid[..., None]
    centroid = (pts * w).sum(axis=-2) / np.maximum(cnt, 1)[..., None]
    rel = pts - centroid[..., None, :]
    ang = np.where(valid, np.arctan2(rel[..., 1], rel[..., 0]), np.inf)
    order = np.argsort(ang, axis=-1, kind="stable")
    sp = np.take_along_axis(pts, order[..., None], axis=-2)
    sv = np.take_along_axis(valid, order, axis=-1)
    sp = np.where(sv[..., None], sp, sp[..., :1, :])
    nxt = np.roll(sp, -1, axis=-2)
    inter = 0.5 * np.abs(_cross2(sp, nxt).sum(axis=-1))
    inter = np.where(cnt >= 3, inter, 0.0)
    area_a = a[..., 3] * a[..., 4]
    area_b = b[..., 3] * b[..., 4]
    iou = inter / (area_a + area_b - inter)
    return np.clip(iou, 0.0, 1.0)


def _sat_axes(corners: np.ndarray) -> np.ndarray:
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 1, :]
    return np.stack([e1, e2], axis=-2)


def boxes_overlap_many(box, others: np.ndarray) -> np.ndarray:
    """Separating-axis test of one box (5,) against many (n, 5); touching is not overlap."""
    others = np.asarray(others, dtype=np.float64).reshape(-1, 5)
    if len(others) == 0:
        return np.zeros(0, dtype=bool)
    ca = box_corners(_as_box_array(box))[None]
    cb = box_corners(others)
    ca = np.broadcast_to(ca, cb.shape)
    axes = np.concatenate([_sat_axes(ca), _sat_axes(cb)], axis=-2)  # (n, 4, 2)
    pa = np.einsum("nkd,ncd->nkc", axes, ca)
    pb = np.einsum("nkd,ncd->nkc", axes, cb)
    lo = np.maximum(pa.min(-1), pb.min(-1))
    hi = np.minimum(pa.max(-1), pb.max(-1))
    return np.all(lo < hi, axis=-1)


def boxes_overlap(a, b) -> bool:
    return bool(boxes_overlap_many(_as_box_array(a), _as_box_array(b)[None])[0])


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Vectorized closed-segment intersection test (collinear overlap included)."""
    def orient(a, b, c):
        return np.sign(_cross2(b - a, c - a))

    def on_seg(a, b, c):
        return (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0])) & \
               (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    hit = (o1 != o2) & (o3 != o4) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    hit |= (o1 == 0) & on_seg(p1, p2, q1)
    hit |= (o2 == 0) & on_seg(p1, p2, q2)
    hit |= (o3 == 0) & on_seg(q1, q2, p1)
    hit |= (o4 == 0) & on_seg(q1, q2, p2)
    return hit


class Polygon:
    """Simple closed polygon; validated at construction."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        self.vertices = v
        if not self.is_simple():
            raise ValueError("polygon is self-intersecting")

    def __len__(self):
        return len(self.vertices)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def is_simple(self) -> bool:
        a, b = self.edges()
        n = len(a)
        i, j = np.triu_indices(n, k=2)
        keep = ~((i == 0) & (j == n - 1))  # first and last edges are adjacent
        i, j = i[keep], j[keep]
        if len(i) == 0:
            return True
        hits = np.zeros(len(i), dtype=bool)
        for start in range(0, len(i), 200_000):
            sl = slice(start, start + 200_000)
            hits[sl] = _segments_intersect(a[i[sl]], b[i[sl]], a[j[sl]], b[j[sl]])
        return not hits.any()

    def contains(self, points) -> np.ndarray:
        """Ray-casting membership for (n, 2) points; boundary points count as inside."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        a, b = self.edges()
        px, py = p[:, None, 0], p[:, None, 1]
        ax, ay, bx, by = a[None, :, 0], a[None, :, 1], b[None, :, 0], b[None, :, 1]
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (py - ay) * (bx - ax) / (by - ay)
        inside = (straddle & (px < xcross)).sum(axis=1) % 2 == 1
        # distance to each edge for the boundary rule
        ex, ey = bx - ax, by - ay
        L2 = ex * ex + ey * ey
        t = np.clip(((px - ax) * ex + (py - ay) * ey) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
        dx, dy = ax + t * ex - px, ay + t * ey - py
        on_edge = (dx * dx + dy * dy <= 1e-18).any(axis=1)
        return inside | on_edge


def point_in_polygon(p, poly) -> bool:
    if not isinstance(poly, Polygon):
        poly = Polygon(poly)
    return bool(poly.contains(np.asarray(p, dtype=np.float64)[None])[0])


class Polyline:
    """Ordered points with strictly positive spacing and arc-length helpers."""

    def __init__(self, points):
        p = np.asarray(points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
            raise ValueError("polyline needs at least 2 (x, y) points")
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        if np.any(seg <= 1e-9):
            raise ValueError("polyline has coincident consecutive points")
        self.points = p
        self.seg_len = seg
        self.s = np.concatenate([[0.0], np.cumsum(seg)])

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def headings(self) -> np.ndarray:
        d = np.diff(self.points, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    def interpolate(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Points (n, 2) and tangent headings (n,) at arc lengths ``s`` (clamped)."""
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=np.float64)), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        t = (s - self.s[idx]) / self.seg_len[idx]
        pts = self.points[idx] + t[:, None] * (self.points[idx + 1] - self.points[idx])
        return pts, self.headings()[idx]

    def project(self, p, s_lo: float | None = None, s_hi: float | None = None) -> tuple[float, float]:
        """Arc length of the closest point to ``p`` and the signed lateral offset (left positive).

        ``s_lo``/``s_hi`` restrict the search to a window of segments.
        """
        p = np.asarray(p, dtype=np.float64)
        a, b = self.points[:-1], self.points[1:]
        lo = 0 if s_lo is None else max(int(np.searchsorted(self.s, s_lo, side="right")) - 1, 0)
        hi = len(a) if s_hi is None else min(int(np.searchsorted(self.s, s_hi, side="right")), len(a))
        if hi <= lo:
            lo, hi = max(min(lo, len(a) - 1), 0), max(min(lo, len(a) - 1), 0) + 1
        a, b = a[lo:hi], b[lo:hi]
        e = b - a
        L2 = (e * e).sum(axis=1)
        t = np.clip(((p - a) * e).sum(axis=1) / L2, 0.0, 1.0)
        foot = a + t[:, None] * e
        d2 = ((foot - p) ** 2).sum(axis=1)
        k = int(np.argmin(d2))
        s = float(self.s[lo + k] + t[k] * np.sqrt(L2[k]))
        lat = float(_cross2(e[k], p - a[k]) / np.sqrt(L2[k]))
        return s, lat


def _dedupe(points, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(points.points if isinstance(points, Polyline) else points, dtype=np.float64)
    if len(p) == 0:
        return p.reshape(0, 2)
    keep = [0]
    for i in range(1, len(p)):
        if np.linalg.norm(p[i] - p[keep[-1]]) > tol:
            keep.append(i)
    return p[keep]


def menger_curvature(p0, p1, p2) -> float:
    """Curvature of the circle through three points (0 when degenerate)."""
    a = float(np.hypot(*(np.asarray(p1) - p0)))
    b = float(np.hypot(*(np.asarray(p2) - p1)))
    c = float(np.hypot(*(np.asarray(p2) - p0)))
    if min(a, b, c) < _MIN_TRIPLE_SIDE:
        return 0.0
    cross = abs(_cross2(np.asarray(p1) - p0, np.asarray(p2) - p0))
    return float(2.0 * cross / (a * b * c))


def max_menger_curvature(path, window: int = 5) -> float:
    """Maximum curvature over triples (p[i-window], p[i], p[i+window]); 0 for short paths."""
    if window < 1:
        raise ValueError("window must be >= 1")
    p = np.asarray(path.points if isinstance(path, Polyline) else path, dtype=np.float64)
    if len(p) < 2 * window + 1:
        return 0.0
    p0, p1, p2 = p[:-2 * window], p[window:-window], p[2 * window:]
    a = np.linalg.norm(p1 - p0, axis=1)
    b = np.linalg.norm(p2 - p1, axis=1)
    c = np.linalg.norm(p2 - p0, axis=1)
    cross = np.abs(_cross2(p1 - p0, p2 - p0))
    ok = np.minimum(np.minimum(a, b), c) >= _MIN_TRIPLE_SIDE
    k = np.where(ok, 2.0 * cross / np.where(ok, a * b * c, 1.0), 0.0)
    return float(k.max()) if len(k) else 0.0


def _end_tangent(p: np.ndarray) -> float:
    """Heading of the tangent at p[0], second-order one-sided when 3 points exist."""
    if len(p) == 2:
        d = p[1] - p[0]
        return math.atan2(d[1], d[0])
    h1 = float(np.linalg.norm(p[1] - p[0]))
    h2 = float(np.linalg.norm(p[2] - p[1]))
    d = (-(2 * h1 + h2) / (h1 * (h1 + h2)) * p[0]
         + (h1 + h2) / (h1 * h2) * p[1]
         - h1 / (h2 * (h1 + h2)) * p[2])
    return math.atan2(d[1], d[0])


def heading_difference(path) -> float:
    """Absolute wrapped difference between the end and start tangent headings."""
    p = _dedupe(path)
    if len(p) < 2:
        return 0.0
    start = _end_tangent(p[:3])
    end = wrap_angle(_end_tangent(p[::-1][:3]) + np.pi)
    return abs(wrap_angle(end - start))


def net_heading_change(path) -> float:
    """Signed total turning along the path (left positive), summed segment by segment."""
    p = _dedupe(path)
    if len(p) < 3:
        return 0.0
    d = np.diff(p, axis=0)
    h = np.arctan2(d[:, 1], d[:, 0])
    return float(np.sum(wrap_angle(np.diff(h))))


def path_length(path) -> float:
    p = np.asarray(path.points if isinstance(path, Polyline) else path, dtype=np.float64)
    if len(p) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())
