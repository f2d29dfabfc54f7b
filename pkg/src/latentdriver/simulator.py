"""Closed-loop episode simulation and arrival-rate metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import Polyline, Pose2D, box_corners, boxes_overlap_many
from .scenegen.types import DT, EPISODE_STEPS, Behavior, Scenario, SceneType

TAUS = (95, 90, 85, 80, 75)
STATIONARY_TOLERANCE = 1.0  # metres a parked ego may drift and still count as arrived


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class IDMParams:
    T: float = 1.5
    s0: float = 2.0
    a_max: float = 1.5
    b: float = 2.0
    delta: int = 4
    b_max: float = 8.0


DEFAULT_IDM = IDMParams()


def idm_accel(v: float, v0: float, gap: float | None = None, dv: float = 0.0,
              params: IDMParams = DEFAULT_IDM) -> float:
    """Intelligent Driver Model acceleration.

    ``gap`` is the bumper-to-bumper distance to the leader (None without one)
    and ``dv`` the approach rate ``v - v_leader``.
    """
    p = params
    if v0 <= 0:
        free = -p.b if v > 0 else 0.0
    else:
        free = p.a_max * (1.0 - (v / v0) ** p.delta)
    if gap is None:
        return free
    if gap <= 0:
        return -p.b_max
    s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
    return free - p.a_max * (s_star / gap) ** 2


@dataclass(frozen=True)
class EgoAction:
    dx: float
    dy: float
    dyaw: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dyaw)):
            raise ValueError(f"non-finite action {self}")
        if abs(self.dyaw) > math.pi:
            raise ValueError(f"|dyaw| must be <= pi, got {self.dyaw}")

    @classmethod
    def from_array(cls, a) -> "EgoAction":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dyaw])


@dataclass
class SimState:
    step: int
    ego: Pose2D
    ego_speed: float
    agent_poses: np.ndarray  # (n, 3)
    agent_speeds: np.ndarray  # (n,)
    agent_s: np.ndarray  # (n,) arc length along the road centerline (IDM agents)
    route_s: float = 0.0  # ego progress along the road centerline
    collided: bool = False
    offroad: bool = False
    collision_step: int | None = None
    offroad_step: int | None = None


def apply_ego_action(state: SimState, a: EgoAction) -> SimState:
    """Move the ego by an ego-frame displacement; speed follows from its length."""
    ego = state.ego.compose(a.dx, a.dy, a.dyaw)
    return replace(state, ego=ego, ego_speed=math.hypot(a.dx, a.dy) / DT)


@dataclass
class EpisodeResult:
    scenario_id: str
    scene_type: SceneType
    progress_ratio: float
    collided: bool
    offroad: bool
    collision_step: int | None
    offroad_step: int | None
    trace: np.ndarray  # (steps, 3)
    agent_trace: np.ndarray | None = None  # (steps, n_agents, 3)

    @property
    def safe(self) -> bool:
        return not (self.collided or self.offroad)


class Simulator:
    """Steps one scenario; ``agents`` selects log replay or IDM for movable agents."""

    def __init__(self, scenario: Scenario, agents: str = "replay", idm: IDMParams = DEFAULT_IDM):
        if agents not in ("replay", "idm"):
            raise ValueError(f"agents must be 'replay' or 'idm', got {agents!r}")
        self.scenario = scenario
        self.mode = agents
        self.idm = idm
        self.centerline = scenario.road.centerline
        self.polygon = scenario.road.polygon
        self.n_steps = len(scenario.expert)
        ag = scenario.agents
        self.extents = np.array([[a.length, a.width] for a in ag]).reshape(-1, 2)
        self.idm_mask = np.array([self.mode == "idm" and a.behavior == Behavior.IDM for a in ag], dtype=bool)
        self.v0 = np.array([a.speed for a in ag], dtype=np.float64)
        self.lateral = np.zeros(len(ag))
        for i, a in enumerate(ag):
            if self.idm_mask[i]:
                _, self.lateral[i] = self.centerline.project(a.initial.as_array()[:2])

    def reset(self) -> SimState:
        sc = self.scenario
        ego = Pose2D(*sc.expert[0])
        poses = np.array([a.pose_at(0) for a in sc.agents]).reshape(-1, 3)
        speeds = np.array([a.speed_at(0) for a in sc.agents], dtype=np.float64)
        agent_s = np.array([a.route_s for a in sc.agents], dtype=np.float64)
        s0, _ = self.centerline.project(sc.expert[0, :2])
        state = SimState(0, ego, sc.initial_speed, poses, speeds, agent_s, route_s=s0)
        return self._check_safety(state)

    def done(self, state: SimState) -> bool:
        return state.step >= self.n_steps - 1

    def ego_box(self, state: SimState) -> np.ndarray:
        e = state.ego
        return np.array([e.x, e.y, e.yaw, self.scenario.ego_length, self.scenario.ego_width])

    def agent_boxes(self, state: SimState) -> np.ndarray:
        return np.concatenate([state.agent_poses, self.extents], axis=1)

    def _check_safety(self, state: SimState) -> SimState:
        box = self.ego_box(state)
        if not state.collided and len(state.agent_poses):
            if boxes_overlap_many(box, self.agent_boxes(state)).any():
                state.collided, state.collision_step = True, state.step
        if not state.offroad:
            if not self.polygon.contains(box_corners(box)).all():
                state.offroad, state.offroad_step = True, state.step
        return state

    def _advance_agents(self, state: SimState, ego_next: Pose2D, ego_s: float):
        k = state.step + 1
        sc = self.scenario
        poses = np.array([a.pose_at(k) for a in sc.agents]).reshape(-1, 3)
        speeds = np.array([a.speed_at(k) for a in sc.agents], dtype=np.float64)
        agent_s = state.agent_s.copy()
        if self.idm_mask.any():
            idx = np.flatnonzero(self.idm_mask)
            # positions on the centerline for leader search: IDM agents use their
            # own arc length, everything else (ego included) is projected
            obj_s, obj_lat, obj_len, obj_v = [], [], [], []
            for j, a in enumerate(sc.agents):
                if self.idm_mask[j]:
                    obj_s.append(state.agent_s[j])
                    obj_lat.append(self.lateral[j])
                else:
                    s, lat = self.centerline.project(state.agent_poses[j, :2])
                    obj_s.append(s)
                    obj_lat.append(lat)
                obj_len.append(a.length)
                obj_v.append(state.agent_speeds[j])
            es, elat = self.centerline.project(np.array([state.ego.x, state.ego.y]),
                                               state.route_s - 5.0, state.route_s + 20.0)
            obj_s.append(es)
            obj_lat.append(elat)
            obj_len.append(sc.ego_length)
            obj_v.append(state.ego_speed)
            obj_s, obj_lat = np.array(obj_s), np.array(obj_lat)
            obj_len, obj_v = np.array(obj_len), np.array(obj_v)
            for j in idx:
                ds = obj_s - obj_s[j]
                cand = (ds > 0) & (np.abs(obj_lat - obj_lat[j]) < 2.0)
                cand[j] = False
                gap = dv = None
                if cand.any():
                    m = np.flatnonzero(cand)[np.argmin(ds[cand])]
                    gap = ds[m] - 0.5 * (obj_len[m] + obj_len[j])
                    dv = state.agent_speeds[j] - obj_v[m]
                v = state.agent_speeds[j]
                acc = idm_accel(v, self.v0[j], gap, dv or 0.0, self.idm)
                v_new = max(0.0, v + acc * DT)
                agent_s[j] = state.agent_s[j] + 0.5 * (v + v_new) * DT
                pt, hd = self.centerline.interpolate(agent_s[j])
                nx, ny = -math.sin(hd[0]), math.cos(hd[0])
                poses[j] = [pt[0, 0] + nx * self.lateral[j], pt[0, 1] + ny * self.lateral[j], hd[0]]
                speeds[j] = v_new
        return poses, speeds, agent_s

    def step(self, state: SimState, action: EgoAction) -> SimState:
        if self.done(state):
            raise EpisodeFinished(f"episode already ended at step {state.step}")
        moved = apply_ego_action(state, action)
        route_s, _ = self.centerline.project(np.array([moved.ego.x, moved.ego.y]),
                                             state.route_s - 2.0, state.route_s + 10.0)
        poses, speeds, agent_s = self._advance_agents(state, moved.ego, route_s)
        nxt = replace(moved, step=state.step + 1, agent_poses=poses, agent_speeds=speeds,
                      agent_s=agent_s, route_s=route_s)
        return self._check_safety(nxt)


def progress_ratio(trace, route: Polyline) -> float:
    """Furthest arc-length reached along ``route`` relative to the remaining route, in [0, 1]."""
    pts = np.atleast_2d(np.asarray(trace, dtype=np.float64))[:, :2]
    if len(pts) == 0:
        raise ValueError("empty trace")
    if route.length <= 0:
        raise ValueError("zero-length route")
    s = np.array([route.project(p)[0] for p in pts])
    start = s[0]
    remaining = route.length - start
    if remaining <= 1e-12:
        return 1.0
    return float(np.clip((s.max() - start) / remaining, 0.0, 1.0))


def episode_progress(scenario: Scenario, trace: np.ndarray, safe: bool) -> float:
    route = scenario.route
    if route is None:
        drift = np.linalg.norm(trace[:, :2] - trace[0, :2], axis=1).max()
        return 1.0 if (drift <= STATIONARY_TOLERANCE and safe) else 0.0
    return progress_ratio(trace, route)


Policy = Callable[[SimState, Simulator], EgoAction]


def rollout(scenario: Scenario, policy: Policy, agents: str = "replay",
            record_agents: bool = False) -> EpisodeResult:
    sim = Simulator(scenario, agents)
    state = sim.reset()
    trace = [state.ego.as_array()]
    agent_trace = [state.agent_poses.copy()]
    while not sim.done(state):
        state = sim.step(state, policy(state, sim))
        trace.append(state.ego.as_array())
        agent_trace.append(state.agent_poses.copy())
    return finish_episode(scenario, state, np.array(trace),
                          np.array(agent_trace) if record_agents else None)


def finish_episode(scenario: Scenario, state: SimState, trace: np.ndarray,
                   agent_trace: np.ndarray | None = None) -> EpisodeResult:
    safe = not (state.collided or state.offroad)
    return EpisodeResult(
        scenario_id=scenario.id,
        scene_type=scenario.scene_type,
        progress_ratio=episode_progress(scenario, trace, safe),
        collided=state.collided,
        offroad=state.offroad,
        collision_step=state.collision_step,
        offroad_step=state.offroad_step,
        trace=trace,
        agent_trace=agent_trace,
    )


def expert_policy(scenario: Scenario) -> Policy:
    actions = scenario.expert_actions()
    return lambda state, sim: EgoAction.from_array(actions[state.step])


def stationary_policy(state: SimState, sim: Simulator) -> EgoAction:
    return EgoAction(0.0, 0.0, 0.0)


# -- metrics ---------------------------------------------------------------

def arrival_rate(results: Sequence[EpisodeResult], tau: float) -> float:
    """Percent of episodes reaching ``tau`` percent of the route with no safety event."""
    if not results:
        raise ValueError("no episodes")
    ok = [r.safe and r.progress_ratio >= tau / 100.0 - 1e-12 for r in results]
    return 100.0 * sum(ok) / len(results)


def ar_range(results: Sequence[EpisodeResult], taus: Iterable[float] = TAUS) -> float:
    taus = list(taus)
    return sum(arrival_rate(results, t) for t in taus) / len(taus)


@dataclass
class MetricsReport:
    n_episodes: int
    ar: dict[int, float]
    ar_95_75: float
    mar: float
    offroad_rate: float
    collision_rate: float
    progress: float
    per_type: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {"episodes": float(self.n_episodes), "mAR[95:75]": self.mar,
               "AR[95:75]": self.ar_95_75, "OR": self.offroad_rate,
               "CR": self.collision_rate, "PR": self.progress}
        for t in TAUS:
            out[f"AR@{t}"] = self.ar[t]
        for name, d in self.per_type.items():
            out[f"{name}.episodes"] = float(d["n"])
            out[f"{name}.AR[95:75]"] = d["ar_95_75"]
        return out

    def to_kv(self) -> str:
        return "".join(f"{k}={v:.6f}\n" for k, v in self.as_dict().items())

    def table(self) -> str:
        head = f"{'type':<12}{'n':>6}" + "".join(f"{'AR@' + str(t):>9}" for t in TAUS) + f"{'AR[95:75]':>11}"
        rows = [head, "-" * len(head)]
        for name, d in self.per_type.items():
            rows.append(f"{name:<12}{d['n']:>6}" + "".join(f"{d['ar'][t]:>9.2f}" for t in TAUS)
                        + f"{d['ar_95_75']:>11.2f}")
        rows.append(f"{'all':<12}{self.n_episodes:>6}" + "".join(f"{self.ar[t]:>9.2f}" for t in TAUS)
                    + f"{self.ar_95_75:>11.2f}")
        rows.append("")
        rows.append(f"mAR[95:75]={self.mar:.2f}  AR[95:75]={self.ar_95_75:.2f}  "
                    f"OR={self.offroad_rate:.2f}  CR={self.collision_rate:.2f}  PR={self.progress:.2f}")
        return "\n".join(rows)


def aggregate(results: Sequence[EpisodeResult]) -> MetricsReport:
    if not results:
        raise ValueError("no episodes")
    per_type = {}
    for st in SceneType:
        sub = [r for r in results if r.scene_type == st]
        if not sub:
            warnings.warn(f"no {st.value} episodes; excluded from mAR", stacklevel=2)
            continue
        ar = {t: arrival_rate(sub, t) for t in TAUS}
        per_type[st.value] = {"n": len(sub), "ar": ar, "ar_95_75": sum(ar.values()) / len(TAUS)}
    ar = {t: arrival_rate(results, t) for t in TAUS}
    n = len(results)
    return MetricsReport(
        n_episodes=n,
        ar=ar,
        ar_95_75=sum(ar.values()) / len(TAUS),
        mar=float(np.mean([d["ar_95_75"] for d in per_type.values()])),
        offroad_rate=100.0 * sum(r.offroad for r in results) / n,
        collision_rate=100.0 * sum(r.collided for r in results) / n,
        progress=100.0 * math.fsum(r.progress_ratio for r in results) / n,  # order-independent sum
        per_type=per_type,
    )

