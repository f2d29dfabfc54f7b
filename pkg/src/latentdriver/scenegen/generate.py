"""Synthetic scenario generator with known ground truth.

Roads are 7 m corridors around a centerline made of constant-curvature
pieces (straight approach, optional 90/180 degree arc, straight exit). The
expert follows the centerline with pure pursuit and controls its speed with
IDM against a curve-speed envelope and an optional lead vehicle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Polygon, Polyline, Pose2D, box_corners, boxes_overlap_many, wrap_angle
from .classify import classify_scene
from .types import (
    DT,
    EGO_LENGTH,
    EPISODE_STEPS,
    AgentTrack,
    Behavior,
    Road,
    Scenario,
    SceneType,
)

HALF_WIDTH = 3.5
CENTERLINE_STEP = 0.5
BACK_LENGTH = 15.0
AHEAD_LENGTH = 150.0
MAX_ATTEMPTS = 100


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Difficulty:
    lead_prob: float = 0.6
    lead_brake_prob: float = 0.35
    max_parked: int = 3
    lateral_offset: float = 0.3
    heading_offset: float = 0.04
    lateral_accel: float = 2.5


@dataclass(frozen=True)
class _ExpertIDM:
    T: float = 1.2
    s0: float = 2.0
    a_max: float = 2.0
    b: float = 2.5
    delta: int = 4
    b_max: float = 8.0


EXPERT_IDM = _ExpertIDM()


def build_centerline(pieces: list[tuple[float, float]], start=(0.0, 0.0, 0.0),
                     ds: float = CENTERLINE_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Integrate (length, curvature) pieces; returns points (n, 2) and curvature per point."""
    x, y, h = start
    pts, kap = [(x, y)], [pieces[0][1]]
    for length, k in pieces:
        n = max(1, int(round(length / ds)))
        step = length / n
        for _ in range(n):
            if abs(k) < 1e-12:
                x += step * math.cos(h)
                y += step * math.sin(h)
            else:
                h2 = h + k * step
                x += (math.sin(h2) - math.sin(h)) / k
                y -= (math.cos(h2) - math.cos(h)) / k
                h = h2
            pts.append((x, y))
            kap.append(k)
    return np.array(pts), np.array(kap)


def corridor_polygon(centerline: Polyline, half_width: float, stride: int = 2) -> Polygon:
    pts = centerline.points
    d = np.gradient(pts, axis=0)
    hd = np.arctan2(d[:, 1], d[:, 0])
    nrm = np.stack([-np.sin(hd), np.cos(hd)], axis=1)
    idx = np.unique(np.r_[np.arange(0, len(pts), stride), len(pts) - 1])
    left = pts[idx] + half_width * nrm[idx]
    right = pts[idx] - half_width * nrm[idx]
    return Polygon(np.concatenate([right, left[::-1]], axis=0))


def speed_envelope(kappa: np.ndarray, v_cruise: float, a_lat: float,
                   decel: float = 2.0, ds: float = CENTERLINE_STEP) -> np.ndarray:
    """Largest speed at each centerline sample that can still brake into later curves."""
    with np.errstate(divide="ignore"):
        vlim = np.minimum(v_cruise, np.sqrt(a_lat / np.maximum(np.abs(kappa), 1e-9)))
    out = vlim.copy()
    for i in range(len(out) - 2, -1, -1):
        out[i] = min(out[i], math.sqrt(out[i + 1] ** 2 + 2 * decel * ds))
    return out


def _idm(v, v0, gap, dv, p=EXPERT_IDM):
    free = p.a_max * (1.0 - (v / v0) ** p.delta) if v0 > 0 else (-p.b if v > 0 else 0.0)
    if gap is None:
        return free
    if gap <= 0:
        return -p.b_max
    s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
    return free - p.a_max * (s_star / gap) ** 2


def _lead_track(rng, cl: Polyline, envelope_fn, s0: float, v_cruise: float,
                brake: bool, stopped: bool) -> tuple[np.ndarray, np.ndarray]:
    """Lead vehicle arc positions and speeds for every step."""
    s = np.zeros(EPISODE_STEPS)
    v = np.zeros(EPISODE_STEPS)
    s[0] = s0
    v[0] = 0.0 if stopped else min(v_cruise, envelope_fn(s0))
    t_brake = rng.uniform(1.5, 5.0) if brake else math.inf
    b = rng.uniform(1.5, 3.0)
    for k in range(1, EPISODE_STEPS):
        if stopped:
            a = 0.0
        elif k * DT >= t_brake:
            a = -b
        else:
            a = float(np.clip(1.5 * (min(v_cruise, envelope_fn(s[k - 1])) - v[k - 1]), -3.0, 1.5))
        v[k] = max(0.0, v[k - 1] + a * DT)
        s[k] = s[k - 1] + 0.5 * (v[k - 1] + v[k]) * DT
    return s, v


def _pose_on(cl: Polyline, s: float, lateral: float = 0.0) -> np.ndarray:
    pt, hd = cl.interpolate(s)
    h = float(hd[0])
    return np.array([pt[0, 0] - math.sin(h) * lateral, pt[0, 1] + math.cos(h) * lateral, h])


def _drive_expert(cl: Polyline, env: np.ndarray, start: np.ndarray, v_init: float,
                  lead: tuple[np.ndarray, np.ndarray, float] | None) -> np.ndarray:
    pose = Pose2D(*start)
    v = v_init
    s_proj, _ = cl.project(start[:2])
    poses = [pose.as_array()]
    for k in range(EPISODE_STEPS - 1):
        s_proj, _ = cl.project(np.array([pose.x, pose.y]), s_proj - 2.0, s_proj + 10.0)
        v_des = float(np.interp(s_proj, cl.s, env))
        gap = dv = None
        if lead is not None:
            ls, lv, llen = lead
            gap = ls[k] - s_proj - 0.5 * (EGO_LENGTH + llen)
            dv = v - lv[k]
        a = float(np.clip(_idm(v, v_des, gap, dv or 0.0), -6.0, 2.5))
        v_new = max(0.0, v + a * DT)
        dist = 0.5 * (v + v_new) * DT
        ld = max(2.5, 0.6 * v)
        tgt, _ = cl.interpolate(s_proj + ld)
        alpha = wrap_angle(math.atan2(tgt[0, 1] - pose.y, tgt[0, 0] - pose.x) - pose.yaw)
        look = math.hypot(tgt[0, 0] - pose.x, tgt[0, 1] - pose.y)
        kappa = float(np.clip(2.0 * math.sin(alpha) / max(look, 1e-6), -0.35, 0.35))
        if dist < 1e-12:
            dx = dy = dyaw = 0.0
        elif abs(kappa) < 1e-12:
            dx, dy, dyaw = dist, 0.0, 0.0
        else:
            dyaw = kappa * dist
            dx, dy = math.sin(dyaw) / kappa, (1.0 - math.cos(dyaw)) / kappa
        pose = pose.compose(dx, dy, dyaw)
        v = v_new
        poses.append(pose.as_array())
    return np.array(poses)


def _transform(points: np.ndarray, theta: float, shift: np.ndarray) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return points @ R.T + shift


def _transform_poses(poses: np.ndarray, theta: float, shift: np.ndarray) -> np.ndarray:
    out = poses.copy()
    out[..., :2] = _transform(poses[..., :2], theta, shift)
    out[..., 2] = wrap_angle(poses[..., 2] + theta)
    return out


def _attempt(kind: SceneType, rng: np.random.Generator, diff: Difficulty, scenario_id: str,
             seed: int) -> Scenario:
    # -- road -----------------------------------------------------------
    if kind == SceneType.U_TURN:
        radius, sweep = rng.uniform(4.2, 5.2), math.pi
        approach, v_cruise = rng.uniform(2.0, 8.0), rng.uniform(4.0, 7.0)
    elif kind in (SceneType.TURN_LEFT, SceneType.TURN_RIGHT):
        radius, sweep = rng.uniform(7.0, 20.0), math.pi / 2
        approach, v_cruise = rng.uniform(3.0, 15.0), rng.uniform(5.0, 10.0)
    else:
        radius, sweep = 0.0, 0.0
        approach, v_cruise = 20.0, rng.uniform(5.0, 13.0)
    sign = -1.0 if kind == SceneType.TURN_RIGHT else 1.0
    if kind == SceneType.U_TURN and rng.random() < 0.5:
        sign = -1.0
    pieces = [(BACK_LENGTH + approach, 0.0)]
    arc_len = radius * sweep
    if sweep > 0:
        pieces.append((arc_len, sign / radius))
    pieces.append((max(40.0, AHEAD_LENGTH - approach - arc_len), 0.0))
    pts, kappa = build_centerline(pieces, start=(-BACK_LENGTH, 0.0, 0.0))
    cl = Polyline(pts)
    env = speed_envelope(kappa, v_cruise, diff.lateral_accel)

    def envelope_fn(s, vc=v_cruise):
        e = speed_envelope(kappa, vc, diff.lateral_accel)
        return float(np.interp(s, cl.s, e))

    # -- ego start --------------------------------------------------------
    stationary = kind == SceneType.STATIONARY
    s_ego = BACK_LENGTH
    lat0 = 0.0 if stationary else rng.uniform(-diff.lateral_offset, diff.lateral_offset)
    start = _pose_on(cl, s_ego, lat0)
    if not stationary:
        start[2] = wrap_angle(start[2] + rng.uniform(-diff.heading_offset, diff.heading_offset))
    v_init = 0.0 if stationary else min(v_cruise, float(np.interp(s_ego, cl.s, env))) * rng.uniform(0.7, 1.0)

    # -- agents -----------------------------------------------------------
    agents: list[AgentTrack] = []
    lead = None
    if stationary or rng.random() < diff.lead_prob:
        llen, lwid = rng.uniform(4.0, 5.2), rng.uniform(1.8, 2.1)
        if stationary:
            gap = rng.uniform(2.0, 3.0)
            v_lead = 0.0
        else:
            gap = rng.uniform(max(8.0, 1.2 * v_init), max(10.0, 1.2 * v_init) + 15.0)
            v_lead = v_cruise * rng.uniform(0.5, 1.1)
        s_lead = s_ego + gap + 0.5 * (EGO_LENGTH + llen)
        ls, lv = _lead_track(rng, cl, lambda s: envelope_fn(s, max(v_lead, 0.1)), s_lead, v_lead,
                             brake=(not stationary) and rng.random() < diff.lead_brake_prob,
                             stopped=stationary)
        lposes = np.array([_pose_on(cl, s) for s in ls])
        agents.append(AgentTrack(Pose2D(*lposes[0]), float(lv[0]), llen, lwid, Behavior.IDM,
                                 lposes, lv, route_s=float(ls[0])))
        lead = (ls, lv, llen)

    expert = _drive_expert(cl, env, start, v_init, lead)

    poly = corridor_polygon(cl, HALF_WIDTH)
    n_parked = int(rng.integers(0, diff.max_parked + 1))
    for _ in range(n_parked):
        for _try in range(10):
            plen, pwid = rng.uniform(4.0, 5.2), rng.uniform(1.8, 2.1)
            side = rng.choice([-1.0, 1.0])
            lat = side * (HALF_WIDTH + pwid / 2 + rng.uniform(0.4, 2.5))
            pose = _pose_on(cl, rng.uniform(s_ego - 5.0, s_ego + 60.0), lat)
            if rng.random() < 0.3:
                pose[2] = wrap_angle(pose[2] + math.pi)
            box = np.r_[pose, plen, pwid]
            if poly.contains(np.vstack([box_corners(box), pose[None, :2]])).any():
                continue
            others = np.array([np.r_[a.initial.as_array(), a.length, a.width] for a in agents
                               if a.behavior == Behavior.LOG_REPLAY]).reshape(-1, 5)
            if boxes_overlap_many(box, others).any():
                continue
            agents.append(AgentTrack(Pose2D(*pose), 0.0, plen, pwid, Behavior.LOG_REPLAY,
                                     np.repeat(pose[None], EPISODE_STEPS, axis=0),
                                     np.zeros(EPISODE_STEPS)))
            break

    # -- random placement in the world -------------------------------------
    theta = rng.uniform(-math.pi, math.pi)
    shift = rng.uniform(-500.0, 500.0, size=2)
    cl_w = Polyline(_transform(cl.points, theta, shift))
    poly_w = Polygon(_transform(poly.vertices, theta, shift))
    expert_w = _transform_poses(expert, theta, shift)
    for a in agents:
        a.poses = _transform_poses(a.poses, theta, shift)
        a.initial = Pose2D(*a.poses[0])
    return Scenario(
        id=scenario_id,
        road=Road(cl_w, poly_w, HALF_WIDTH),
        expert=expert_w,
        agents=agents,
        scene_type=kind,
        seed=seed,
        initial_speed=float(v_init),
    )


def generate_scenario(kind: SceneType | str, seed: int, difficulty: Difficulty | None = None) -> Scenario:
    """Rejection-sample a scenario whose expert is classified as ``kind`` and replays safely."""
    from ..simulator import expert_policy, rollout

    kind = SceneType.parse(kind) if isinstance(kind, str) else kind
    diff = difficulty or Difficulty()
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_ATTEMPTS):
        try:
            sc = _attempt(kind, rng, diff, f"{kind.value}-{seed}", seed)
        except ValueError:  # degenerate corridor polygon on tight arcs
            continue
        if classify_scene(sc.expert) != kind:
            continue
        res = rollout(sc, expert_policy(sc))
        if res.collided or res.offroad:
            continue
        return sc
    raise GenerationError(f"no valid {kind.value} scenario for seed {seed} after {MAX_ATTEMPTS} attempts")


def derive_seed(master: int, kind: SceneType, index: int) -> int:
    return int(np.random.SeedSequence([master, kind.code, index]).generate_state(1)[0])
