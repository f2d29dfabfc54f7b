"""Scene categorization from the expert path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import heading_difference, max_menger_curvature, net_heading_change, path_length
from .types import SceneType


@dataclass(frozen=True)
class SceneThresholds:
    stationary_length: float = 3.0
    kappa_low: float = 0.03
    kappa_mid: float = 0.1
    kappa_uturn: float = 0.18
    delta_turn: float = 0.2
    window: int = 5


DEFAULT_THRESHOLDS = SceneThresholds()


def classify_kappa_delta(kappa: float, delta: float, net_turn: float = 1.0,
                         th: SceneThresholds = DEFAULT_THRESHOLDS) -> SceneType:
    """Three-way curvature/heading rule, with turns split by the sign of ``net_turn``."""
    if kappa >= th.kappa_uturn:
        return SceneType.U_TURN
    if (th.kappa_low < kappa < th.kappa_uturn and delta > th.delta_turn) or \
            (th.kappa_mid < kappa < th.kappa_uturn):
        return SceneType.TURN_LEFT if net_turn >= 0 else SceneType.TURN_RIGHT
    return SceneType.STRAIGHT


def scene_features(trajectory, th: SceneThresholds = DEFAULT_THRESHOLDS) -> dict[str, float]:
    pts = np.asarray(trajectory, dtype=np.float64)[:, :2]
    return {
        "length": path_length(pts),
        "kappa": max_menger_curvature(pts, th.window),
        "delta": heading_difference(pts),
        "net_turn": net_heading_change(pts),
    }


def classify_scene(trajectory, th: SceneThresholds = DEFAULT_THRESHOLDS) -> SceneType:
    """Label an expert trajectory (n, 2) or (n, 3) with one of the five scene types."""
    pts = np.asarray(trajectory, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("trajectory needs at least two points")
    f = scene_features(pts, th)
    if f["length"] < th.stationary_length:
        return SceneType.STATIONARY
    return classify_kappa_delta(f["kappa"], f["delta"], f["net_turn"], th)
