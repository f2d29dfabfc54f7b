"""Ego-frame vectorized observations and the set-transformer scene encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnum import LayerNorm, Linear, Module, Parameter, Tensor, TransformerLayer, concat
from .diffnum.nn import normal_embedding
from .diffnum import tensor as T
from .geometry import to_local, wrap_angle
from .scenegen.types import Scenario
from .simulator import SimState

N_ATTR = 6
KIND_EGO, KIND_AGENT, KIND_ROUTE = 0.0, 1.0, 2.0
FOV_LENGTH = 80.0
FOV_WIDTH = 20.0
ROUTE_SEGMENT = 5.0
ROUTE_AHEAD = 60.0
N_MAX = 64

# fixed per-attribute scaling applied before the learned embedding
FEATURE_SCALE = np.array([1.0, 1 / 20.0, 1 / 20.0, 1.0, 1 / 10.0, 1 / 5.0])


@dataclass
class Observation:
    """``features`` (n_max, 6) with zero-filled invalid rows; ``mask`` marks valid rows."""

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != N_ATTR:
            raise ValueError(f"features must be (n, {N_ATTR}), got {self.features.shape}")
        if self.mask.shape != self.features.shape[:1]:
            raise ValueError("mask length does not match features")
        if not self.mask[0]:
            raise ValueError("slot 0 (ego) must be valid")

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def valid(self) -> np.ndarray:
        return self.features[self.mask]


def in_fov(xy: np.ndarray, length: float = FOV_LENGTH, width: float = FOV_WIDTH) -> np.ndarray:
    xy = np.atleast_2d(xy)
    return (np.abs(xy[:, 0]) <= length / 2) & (np.abs(xy[:, 1]) <= width / 2)


def route_segments(scenario: Scenario, route_s: float, ahead: float = ROUTE_AHEAD,
                   seg: float = ROUTE_SEGMENT) -> np.ndarray:
    """Centerline chunks ahead of ``route_s`` as (midpoint x, y, chord heading), world frame."""
    cl = scenario.road.centerline
    end = min(cl.length, route_s + ahead)
    n = int(np.floor((end - route_s) / seg + 1e-9))
    if n <= 0:
        return np.zeros((0, 3))
    s = route_s + seg * np.arange(n + 1)
    pts, _ = cl.interpolate(s)
    a, b = pts[:-1], pts[1:]
    mid = 0.5 * (a + b)
    hd = np.arctan2(b[:, 1] - a[:, 1], b[:, 0] - a[:, 0])
    return np.column_stack([mid, hd])


def build_observation(state: SimState, scenario: Scenario, n_max: int = N_MAX,
                      fov: tuple[float, float] = (FOV_LENGTH, FOV_WIDTH)) -> Observation:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    ego = state.ego
    rows, keys = [], []
    if len(state.agent_poses):
        local = to_local(state.agent_poses[:, :2], ego.as_array())
        lengths = np.array([a.length for a in scenario.agents])
        for i in np.flatnonzero(in_fov(local, *fov)):
            x, y = local[i]
            rows.append([KIND_AGENT, x, y, wrap_angle(state.agent_poses[i, 2] - ego.yaw),
                         state.agent_speeds[i], lengths[i]])
            keys.append((float(np.hypot(x, y)), 0, int(i)))
    segs = route_segments(scenario, state.route_s)
    if len(segs):
        local = to_local(segs[:, :2], ego.as_array())
        hw = scenario.road.half_width
        for i in np.flatnonzero(in_fov(local, *fov)):
            x, y = local[i]
            rows.append([KIND_ROUTE, x, y, wrap_angle(segs[i, 2] - ego.yaw), ROUTE_SEGMENT, hw])
            keys.append((float(np.hypot(x, y)), 1, int(i)))
    order = sorted(range(len(rows)), key=lambda j: keys[j])[: n_max - 1]
    order.sort(key=lambda j: (keys[j][1], keys[j][2]))  # stable slot layout: agents, then route
    feats = np.zeros((n_max, N_ATTR))
    mask = np.zeros(n_max, dtype=bool)
    feats[0] = [KIND_EGO, 0.0, 0.0, 0.0, state.ego_speed, scenario.ego_length]
    mask[0] = True
    for slot, j in enumerate(order, start=1):
        feats[slot] = rows[j]
        mask[slot] = True
    return Observation(feats, mask)


def stack_observations(obs: list[Observation], trim: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Batch observations to (B, n, 6) and (B, n); ``trim`` drops columns that are padding everywhere.

    Trimming is exact because masked slots never influence valid outputs.
    """
    feats = np.stack([o.features for o in obs])
    mask = np.stack([o.mask for o in obs])
    if trim:
        used = np.flatnonzero(mask.any(axis=0))
        n = int(used.max()) + 1 if len(used) else 1
        feats, mask = feats[:, :n], mask[:, :n]
    return feats, mask


class SceneEncoder(Module):
    """Per-segment embedding, a learned class token, bidirectional pre-norm layers."""

    def __init__(self, d_model: int, n_layers: int, n_heads: int, rng: np.random.Generator):
        self.d_model = d_model
        self.embed = Linear(N_ATTR, d_model, rng)
        self.cls = Parameter(normal_embedding(rng, 1, d_model))
        self.layers = [TransformerLayer(d_model, n_heads, rng) for _ in range(n_layers)]
        self.ln_out = LayerNorm(d_model)

    def __call__(self, features, mask) -> tuple[Tensor, np.ndarray]:
        """Encode (B, n, 6) features; returns tokens (B, n+1, D) with the class token first and the key mask."""
        feats = np.asarray(features, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if feats.ndim == 2:
            feats, mask = feats[None], mask[None]
        b, n, _ = feats.shape
        x = self.embed(Tensor(feats * FEATURE_SCALE))
        cls = T.broadcast_to(self.cls.reshape(1, 1, self.d_model), (b, 1, self.d_model))
        x = concat([cls, x], axis=1)
        keep = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)
        attn_mask = keep[:, None, None, :]
        for layer in self.layers:
            x = layer(x, attn_mask)
        x = self.ln_out(x) * Tensor(keep[..., None].astype(np.float64))
        return x, keep

    def encode(self, obs: Observation) -> tuple[np.ndarray, np.ndarray]:
        """Single observation to (class token (D,), env tokens (n_max, D)), as arrays."""
        with T.no_grad():
            x, _ = self(obs.features, obs.mask)
        return x.data[0, 0], x.data[0, 1:]
