"""scikit-learn style wrappers around the planner and the scene classifier."""

from __future__ import annotations

from dataclasses import fields
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .model import LatentDriver, ModelConfig
from .scenegen.classify import SceneThresholds, classify_scene
from .scenegen.types import Scenario, SceneType
from .simulator import TAUS, ar_range
from .trainer import SampleBank, TrainConfig, evaluate_closed_loop, fit

_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name != "seed"]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("seed", "log_every")]


def check_scenarios(X) -> list[Scenario]:
    """Accept one scenario or a non-empty sequence of them."""
    if isinstance(X, Scenario):
        return [X]
    try:
        items = list(X)
    except TypeError as exc:
        raise TypeError(f"expected Scenario or a sequence of Scenario, got {type(X).__name__}") from exc
    if not items:
        raise ValueError("empty scenario list")
    bad = [type(x).__name__ for x in items if not isinstance(x, Scenario)]
    if bad:
        raise TypeError(f"non-Scenario items: {sorted(set(bad))}")
    return items


def check_trajectory(traj, min_points: int = 2) -> np.ndarray:
    """Validate a single (n, 2) or (n, 3) trajectory of finite values."""
    arr = np.asarray(traj, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(f"trajectory must be (n, 2) or (n, 3), got {arr.shape}")
    if len(arr) < min_points:
        raise ValueError(f"trajectory needs at least {min_points} points")
    if not np.isfinite(arr).all():
        raise ValueError("trajectory contains non-finite values")
    return arr


class LatentDriverPlanner(BaseEstimator):
    """Fit on expert scenarios, act in closed loop.

    ``predict`` returns the executed ego actions, shape (n, steps - 1, 3);
    ``score`` is the safe-arrival rate averaged over the 95..75 % thresholds,
    as a fraction.
    """

    def __init__(self, d_model=256, enc_layers=4, enc_heads=4, n_queries=32, adapter_layers=4,
                 adapter_heads=4, lwm_layers=8, lwm_heads=8, context=2, modes=6, planner_layers=3,
                 planner_heads=4, intermediate=1, n_max=64, use_lwm=True, action_source="intermediate",
                 detach_latent=False, batch_size=256, epochs=10, lr=2e-4, world_weight=0.001,
                 max_steps=0, grad_clip=0.0, agents="replay", random_state=0):
        self.d_model = d_model
        self.enc_layers = enc_layers
        self.enc_heads = enc_heads
        self.n_queries = n_queries
        self.adapter_layers = adapter_layers
        self.adapter_heads = adapter_heads
        self.lwm_layers = lwm_layers
        self.lwm_heads = lwm_heads
        self.context = context
        self.modes = modes
        self.planner_layers = planner_layers
        self.planner_heads = planner_heads
        self.intermediate = intermediate
        self.n_max = n_max
        self.use_lwm = use_lwm
        self.action_source = action_source
        self.detach_latent = detach_latent
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.world_weight = world_weight
        self.max_steps = max_steps
        self.grad_clip = grad_clip
        self.agents = agents
        self.random_state = random_state

    def _configs(self) -> tuple[TrainConfig, ModelConfig]:
        p = self.get_params()
        mc = ModelConfig(**{k: p[k] for k in _MODEL_KEYS}, seed=int(self.random_state))
        tc = TrainConfig(**{k: p[k] for k in _TRAIN_KEYS}, seed=int(self.random_state))
        return tc, mc

    def fit(self, X, y=None):
        scenarios = check_scenarios(X)
        tc, mc = self._configs()
        bank = SampleBank(scenarios, mc.context, mc.n_max)
        result = fit(bank, tc, mc)
        self.model_ = result.model
        self.history_ = result.history
        self.n_samples_ = len(bank)
        return self

    @classmethod
    def from_model(cls, model: LatentDriver, **params) -> "LatentDriverPlanner":
        """Wrap an already trained network (e.g. one loaded from a checkpoint)."""
        cfg = model.config
        est = cls(**{k: getattr(cfg, k) for k in _MODEL_KEYS}, random_state=cfg.seed, **params)
        est.model_ = model
        return est

    def rollout(self, X, seed: int | None = None):
        check_is_fitted(self, "model_")
        scenarios = check_scenarios(X)
        seed = self.random_state if seed is None else seed
        return evaluate_closed_loop(self.model_, scenarios, seed, self.agents)

    def evaluate(self, X, seed: int | None = None):
        return self.rollout(X, seed)[0]

    def predict(self, X) -> np.ndarray:
        _, results = self.rollout(X)
        from .geometry import relative_pose

        return np.stack([
            np.array([relative_pose(r.trace[i], r.trace[i + 1]) for i in range(len(r.trace) - 1)])
            for r in results])

    def score(self, X, y=None) -> float:
        _, results = self.rollout(X)
        return ar_range(results, TAUS) / 100.0


class SceneClassifier(ClassifierMixin, BaseEstimator):
    """Label expert trajectories by scene type from path length, curvature and heading change."""

    def __init__(self, stationary_length=3.0, kappa_low=0.03, kappa_mid=0.1, kappa_uturn=0.18,
                 delta_turn=0.2, window=5):
        self.stationary_length = stationary_length
        self.kappa_low = kappa_low
        self.kappa_mid = kappa_mid
        self.kappa_uturn = kappa_uturn
        self.delta_turn = delta_turn
        self.window = window

    def fit(self, X, y=None):
        """Stateless rule; fitting only validates inputs and records the label set."""
        self._trajectories(X)
        self.classes_ = np.array([t.value for t in SceneType])
        self.thresholds_ = SceneThresholds(**self.get_params())
        return self

    @staticmethod
    def _trajectories(X) -> list[np.ndarray]:
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = [X]
        return [check_trajectory(x.expert if isinstance(x, Scenario) else x) for x in X]

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "thresholds_")
        return np.array([classify_scene(t, self.thresholds_).value for t in self._trajectories(X)])


def fit_planner(scenarios: Sequence[Scenario], **params) -> LatentDriverPlanner:
    return LatentDriverPlanner(**params).fit(scenarios)
