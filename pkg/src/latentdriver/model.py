"""The joint planner/world-model network with its training and inference passes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .diffnum import Module, Tensor, no_grad
from .diffnum import checkpoint as ckpt
from .diffnum import tensor as T
from .encoder import N_MAX, SceneEncoder
from .planner import MixtureAction, Planner, assign_labels, gmm_nll, sample_action
from .scenegen.types import EGO_LENGTH, EGO_WIDTH
from .worldmodel import Adapter, GaussianState, LatentWorldModel, kl_gaussian

ACTION_SOURCES = ("intermediate", "ground_truth")


@dataclass
class ModelConfig:
    d_model: int = 256
    enc_layers: int = 4
    enc_heads: int = 4
    n_queries: int = 32
    adapter_layers: int = 4
    adapter_heads: int = 4
    lwm_layers: int = 8
    lwm_heads: int = 8
    context: int = 2
    modes: int = 6
    planner_layers: int = 3
    planner_heads: int = 4
    intermediate: int = 1
    n_max: int = N_MAX
    use_lwm: bool = True
    action_source: str = "intermediate"
    detach_latent: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.action_source not in ACTION_SOURCES:
            raise ValueError(f"action_source must be one of {ACTION_SOURCES}")
        if not 1 <= self.intermediate < self.planner_layers:
            raise ValueError("need 1 <= intermediate < planner_layers")
        for f in ("d_model", "enc_layers", "n_queries", "adapter_layers", "lwm_layers", "context", "modes", "n_max"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")

    def to_meta(self) -> dict[str, str]:
        return {f"model.{k}": str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            raw = meta.get(f"model.{f.name}")
            if raw is None:
                continue
            if f.type in ("bool", bool):
                kw[f.name] = raw == "True"
            elif f.type in ("int", int):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


@dataclass
class TrainOutput:
    l_world: Tensor
    l_gmm: Tensor
    total: Tensor
    layer_losses: list[Tensor]
    mixtures: list[MixtureAction]
    lwm_actions: np.ndarray | None  # the exact action array tokenized for the world model


class LatentDriver(Module):
    def __init__(self, config: ModelConfig | None = None):
        self.config = cfg = config or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        self.encoder = SceneEncoder(cfg.d_model, cfg.enc_layers, cfg.enc_heads, rng)
        self.adapter = Adapter(cfg.d_model, cfg.n_queries, cfg.adapter_layers, cfg.adapter_heads, rng)
        self.lwm = LatentWorldModel(cfg.d_model, cfg.n_queries, cfg.context, cfg.lwm_layers, cfg.lwm_heads, rng)
        self.planner = Planner(cfg.d_model, cfg.planner_heads, cfg.modes, cfg.planner_layers, cfg.intermediate, rng)
        self.name_parameters()

    # -- shared pieces -------------------------------------------------------

    def _latent_context(self, tokens: Tensor, keep: np.ndarray, latent: Tensor | None):
        if latent is None:
            return tokens, keep[:, None, None, :]
        b, m = latent.shape[:2]
        ctx = T.concat([tokens, latent], axis=1)
        mask = np.concatenate([keep, np.ones((b, m), dtype=bool)], axis=1)
        return ctx, mask[:, None, None, :]

    # -- training ------------------------------------------------------------

    def forward_train(self, features, masks, target, prev_actions=None, rng: np.random.Generator | None = None,
                      world_weight: float = 0.001, extent=(EGO_LENGTH, EGO_WIDTH)) -> TrainOutput:
        """One teacher-forced pass over observation windows.

        ``features`` (B, C, n, 6) and ``masks`` (B, C, n) hold C consecutive
        observations ending at the decision step; ``target`` (B, 3) is the
        expert action at that step. ``prev_actions`` (B, C, 3) are the expert
        actions leading into each observation and are only consumed when the
        world model is configured to read ground-truth actions.
        """
        cfg = self.config
        feats = np.asarray(features, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        b, c, n, _ = feats.shape
        if c > cfg.context:
            raise ValueError(f"window of {c} exceeds context {cfg.context}")
        tokens, keep = self.encoder(feats.reshape(b * c, n, 6), masks.reshape(b * c, n))
        q1, early = self.planner.first(tokens, keep[:, None, None, :])
        last = np.arange(b) * c + (c - 1)
        tokens_t, keep_t = tokens[last], keep[last]

        l_world = Tensor(0.0)
        latent = None
        lwm_actions = None
        if cfg.use_lwm:
            s_hat = self.adapter.adapt_state(tokens[:, 1:], keep[:, 1:])
            s_hat = GaussianState(s_hat.mean.reshape(b, c, cfg.n_queries, cfg.d_model),
                                  s_hat.log_std.reshape(b, c, cfg.n_queries, cfg.d_model))
            states = s_hat.sample(rng) if rng is not None else s_hat.mean
            if cfg.action_source == "intermediate":
                lwm_actions = sample_action(early[-1]).reshape(b, c, 3)
            else:
                if prev_actions is None:
                    raise ValueError("ground-truth action source needs prev_actions")
                lwm_actions = np.asarray(prev_actions, dtype=np.float64).reshape(b, c, 3)
            s_bar = self.lwm(self.adapter.adapt_action(Tensor(lwm_actions)), states)
            if c > 1:
                pred = GaussianState(s_bar.mean[:, :-1], s_bar.log_std[:, :-1])
                post = GaussianState(s_hat.mean[:, 1:], s_hat.log_std[:, 1:])
                l_world = kl_gaussian(post, pred) * (1.0 / b)
            nxt = s_bar.index((slice(None), -1))
            latent = nxt.sample(rng) if rng is not None else nxt.mean
            if cfg.detach_latent:
                latent = latent.detach()

        ctx, ctx_mask = self._latent_context(tokens_t, keep_t, latent)
        first_t = [MixtureAction(m.logits[last], m.mu[last], m.sigma[last], m.rho[last], m.mu_yaw[last])
                   for m in early]
        rest = self.planner.rest(q1[last], first_t[-1], ctx, ctx_mask)
        mixtures = first_t + rest
        tgt = np.asarray(target, dtype=np.float64).reshape(b, 3)
        layer_losses = [gmm_nll(m, tgt, assign_labels(m, tgt, extent)) for m in mixtures]
        l_gmm = sum(layer_losses[1:], layer_losses[0]) * (1.0 / len(layer_losses))
        total = l_world * world_weight + l_gmm
        return TrainOutput(l_world, l_gmm, total, layer_losses, mixtures, lwm_actions)

    # -- inference -----------------------------------------------------------

    def plan(self, features, masks, memory: "PlanMemory", rng: np.random.Generator | None = None):
        """Decide the current action for a batch of episodes.

        Returns ``(a_intermediate (B, 3), final mixture, a_final (B, 3))`` and
        appends the current latent to ``memory``; the caller records the
        executed action with ``memory.push_action``.
        """
        cfg = self.config
        with no_grad():
            feats = np.asarray(features, dtype=np.float64)
            keep_in = np.asarray(masks, dtype=bool)
            tokens, keep = self.encoder(feats, keep_in)
            q1, early = self.planner.first(tokens, keep[:, None, None, :])
            a_mid = sample_action(early[-1])
            latent = None
            if cfg.use_lwm:
                s_hat = self.adapter.adapt_state(tokens[:, 1:], keep[:, 1:])
                s_now = s_hat.sample(rng).data
                hist = memory.latents[-(cfg.context - 1):] if cfg.context > 1 else []
                states = np.stack(hist + [s_now], axis=1)
                acts = memory.lwm_actions(a_mid, cfg.action_source, len(hist) + 1)
                s_bar = self.lwm.predict_next(self.adapter.adapt_action(Tensor(acts)), Tensor(states))
                latent = s_bar.sample(rng)
                memory.latents.append(s_now)
                del memory.latents[:-cfg.context]
            ctx, ctx_mask = self._latent_context(tokens, keep, latent)
            final = self.planner.rest(q1, early[-1], ctx, ctx_mask)[-1]
            return a_mid, final, sample_action(final)

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = self.config.to_meta()
        meta.update(extra_meta or {})
        Path(path).write_bytes(ckpt.dumps(self.state_dict(), meta))

    @classmethod
    def load(cls, path) -> tuple["LatentDriver", dict[str, str]]:
        state, meta = ckpt.loads(Path(path).read_bytes())
        model = cls(ModelConfig.from_meta(meta))
        model.load_state_dict(state)
        return model, meta


class PlanMemory:
    """Per-batch rollout history: executed actions and recent latent samples."""

    def __init__(self, initial_actions: np.ndarray):
        # action assumed to have led into the first observation
        self.executed = [np.asarray(initial_actions, dtype=np.float64)]
        self.latents: list[np.ndarray] = []

    def push_action(self, actions: np.ndarray) -> None:
        self.executed.append(np.asarray(actions, dtype=np.float64))
        del self.executed[:-8]

    def lwm_actions(self, current: np.ndarray, source: str, steps: int) -> np.ndarray:
        """Action inputs (B, steps, 3) aligned with the latent window."""
        if source == "intermediate":
            # each step's token is the action taken from that step: executed for
            # history, the fresh estimate for the current step
            hist = self.executed[1:][-(steps - 1):] if steps > 1 else []
            seq = hist + [current]
        else:
            seq = self.executed[-steps:]
        return np.stack(seq, axis=1)
