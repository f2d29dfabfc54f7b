"""Synthetic scenarios: data model, scene classification, generation, storage."""

from .classify import DEFAULT_THRESHOLDS, SceneThresholds, classify_kappa_delta, classify_scene, scene_features
from .generate import Difficulty, GenerationError, derive_seed, generate_scenario
from .io import (
    ScenarioFormatError,
    deserialize,
    load_scenario,
    load_split,
    read_manifest,
    save_scenario,
    serialize,
    write_dataset,
)
from .types import (
    DT,
    EGO_LENGTH,
    EGO_WIDTH,
    EPISODE_STEPS,
    AgentTrack,
    Behavior,
    Road,
    Scenario,
    SceneType,
)

DEFAULT_MIX = {
    SceneType.STATIONARY: 0.25,
    SceneType.STRAIGHT: 0.59,
    SceneType.TURN_LEFT: 0.07,
    SceneType.TURN_RIGHT: 0.08,
    SceneType.U_TURN: 0.01,
}


def counts_for(total: int, mix: dict = DEFAULT_MIX) -> dict[SceneType, int]:
    """Integer per-type counts summing to ``total`` (largest remainder)."""
    raw = {k: total * v for k, v in mix.items()}
    counts = {k: int(v) for k, v in raw.items()}
    short = total - sum(counts.values())
    for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=True)[:short]:
        counts[k] += 1
    return counts


def generate_dataset(counts: dict[SceneType, int], seed: int, difficulty: Difficulty | None = None) -> list[Scenario]:
    out = []
    for kind in SceneType:
        for i in range(counts.get(kind, 0)):
            out.append(generate_scenario(kind, derive_seed(seed, kind, i), difficulty))
    return out
