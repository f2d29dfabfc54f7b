"""Scenario data model shared by the generator, simulator and encoder."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..geometry import Polygon, Polyline, Pose2D, path_length

DT = 0.1
EPISODE_STEPS = 80
MAX_AGENTS = 128
EGO_LENGTH = 4.8
EGO_WIDTH = 2.0
STATIONARY_ROUTE_LENGTH = 3.0


class SceneType(str, enum.Enum):
    STATIONARY = "stationary"
    STRAIGHT = "straight"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    U_TURN = "u_turn"

    @classmethod
    def parse(cls, text: str) -> "SceneType":
        key = text.strip().lower().replace("-", "_")
        alias = {"turnl": "turn_left", "turnr": "turn_right", "uturn": "u_turn",
                 "left": "turn_left", "right": "turn_right"}
        return cls(alias.get(key, key))

    @property
    def code(self) -> int:
        return list(SceneType).index(self)

    @classmethod
    def from_code(cls, code: int) -> "SceneType":
        return list(SceneType)[code]


class Behavior(str, enum.Enum):
    LOG_REPLAY = "log-replay"
    IDM = "idm"


@dataclass
class AgentTrack:
    """A background vehicle; ``poses``/``speeds`` hold the logged track."""

    initial: Pose2D
    speed: float
    length: float
    width: float
    behavior: Behavior = Behavior.LOG_REPLAY
    poses: np.ndarray | None = None  # (steps, 3)
    speeds: np.ndarray | None = None  # (steps,)
    route_s: float = 0.0  # arc length of the initial pose along the road centerline

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("agent speed must be non-negative")
        if not (self.length > 0 and self.width > 0):
            raise ValueError("agent extents must be positive")

    def pose_at(self, step: int) -> np.ndarray:
        if self.poses is None:
            return self.initial.as_array()
        return self.poses[min(step, len(self.poses) - 1)]

    def speed_at(self, step: int) -> float:
        if self.speeds is None:
            return self.speed
        return float(self.speeds[min(step, len(self.speeds) - 1)])


@dataclass
class Road:
    centerline: Polyline
    polygon: Polygon
    half_width: float = 3.5


@dataclass
class Scenario:
    id: str
    road: Road
    expert: np.ndarray  # (EPISODE_STEPS, 3) world poses at 10 Hz
    agents: list[AgentTrack] = field(default_factory=list)
    scene_type: SceneType = SceneType.STRAIGHT
    seed: int = 0
    initial_speed: float = 0.0
    ego_length: float = EGO_LENGTH
    ego_width: float = EGO_WIDTH

    def __post_init__(self):
        self.expert = np.asarray(self.expert, dtype=np.float64)
        if self.expert.ndim != 2 or self.expert.shape[1] != 3:
            raise ValueError("expert trajectory must be (steps, 3)")
        if len(self.agents) > MAX_AGENTS:
            raise ValueError(f"at most {MAX_AGENTS} agents per scenario")

    @property
    def ego_extent(self) -> tuple[float, float]:
        return self.ego_length, self.ego_width

    @cached_property
    def route_length(self) -> float:
        return path_length(self.expert[:, :2])

    @cached_property
    def route(self) -> Polyline | None:
        """Expert path used for progress; None for near-stationary experts."""
        if self.route_length < STATIONARY_ROUTE_LENGTH:
            return None
        pts = self.expert[:, :2]
        keep = [0]
        for i in range(1, len(pts)):
            if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-6:
                keep.append(i)
        return Polyline(pts[keep])

    def expert_actions(self) -> np.ndarray:
        """Ego-frame deltas between consecutive expert poses, (steps-1, 3)."""
        from ..geometry import relative_pose

        return np.array([relative_pose(self.expert[i], self.expert[i + 1])
                         for i in range(len(self.expert) - 1)])
