"""Latent-state adapter and the autoregressive latent world model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnum import MLP, CrossAttentionBlock, LayerNorm, Module, Parameter, Tensor, TransformerLayer
from .diffnum import tensor as T
from .diffnum.nn import normal_embedding

LOG_STD_MIN, LOG_STD_MAX = -6.0, 2.0
N_ACTION_TOKENS = 3


def draw_normal(rng, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal noise; a sequence of generators supplies one leading row each."""
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError(f"{len(rng)} generators for a batch of {shape[0]}")
        return np.stack([r.standard_normal(shape[1:]) for r in rng])
    return rng.standard_normal(shape)


@dataclass
class GaussianState:
    """Diagonal Gaussian over M latent tokens: ``mean`` and ``log_std`` (..., M, D)."""

    mean: Tensor
    log_std: Tensor

    @property
    def std(self) -> Tensor:
        return T.exp(self.log_std)

    def sample(self, rng: np.random.Generator | None = None, eps: np.ndarray | None = None) -> Tensor:
        """Reparameterized draw ``mean + std * eps``; ``rng=None`` and ``eps=None`` returns the mean."""
        if eps is None:
            if rng is None:
                return self.mean
            eps = draw_normal(rng, self.mean.shape)
        return self.mean + self.std * Tensor(eps)

    def detach(self) -> "GaussianState":
        return GaussianState(self.mean.detach(), self.log_std.detach())

    def index(self, idx) -> "GaussianState":
        return GaussianState(self.mean[idx], self.log_std[idx])


class GaussianHead(Module):
    """Two MLPs emitting mean and clamped log-std."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.mean = MLP([d, d, d], rng)
        self.log_std = MLP([d, d, d], rng)

    def __call__(self, x: Tensor) -> GaussianState:
        return GaussianState(self.mean(x), T.clamp(self.log_std(x), LOG_STD_MIN, LOG_STD_MAX))


def kl_gaussian(p: GaussianState, q: GaussianState, axis=None) -> Tensor:
    """KL(p || q) for diagonal Gaussians, summed over ``axis`` (all axes by default)."""
    if p.mean.shape != q.mean.shape:
        raise T.ShapeError("kl_gaussian", p.mean.shape, q.mean.shape)
    var_p = T.exp(p.log_std * 2.0)
    var_q = T.exp(q.log_std * 2.0)
    diff = p.mean - q.mean
    elem = (q.log_std - p.log_std) + (var_p + diff * diff) / (var_q * 2.0) - 0.5
    return T.tsum(elem, axis=axis)


class Adapter(Module):
    """Learnable latent queries read the scene tokens; per-dimension action tokenizer."""

    def __init__(self, d_model: int, n_queries: int, n_layers: int, n_heads: int, rng: np.random.Generator):
        self.d_model = d_model
        self.n_queries = n_queries
        self.queries = Parameter(normal_embedding(rng, n_queries, d_model))
        self.blocks = [CrossAttentionBlock(d_model, n_heads, rng) for _ in range(n_layers)]
        self.ln_out = LayerNorm(d_model)
        self.head = GaussianHead(d_model, rng)
        # one independent linear map R -> R^D per action dimension (x, y, yaw)
        self.action_weight = Parameter(normal_embedding(rng, N_ACTION_TOKENS, d_model, std=1.0))
        self.action_bias = Parameter(np.zeros((N_ACTION_TOKENS, d_model)))

    def adapt_state(self, env_tokens: Tensor, env_mask: np.ndarray) -> GaussianState:
        """``env_tokens`` (B, n, D) with key mask (B, n) -> distribution over (B, M, D)."""
        b = env_tokens.shape[0]
        q = T.broadcast_to(self.queries.reshape(1, self.n_queries, self.d_model), (b, self.n_queries, self.d_model))
        mask = np.asarray(env_mask, dtype=bool)[:, None, None, :]
        for blk in self.blocks:
            q = blk(q, env_tokens, mask)
        return self.head(self.ln_out(q))

    def adapt_action(self, actions) -> Tensor:
        """Actions (..., 3) -> tokens (..., 3, D); token i depends only on action dimension i."""
        a = T.as_tensor(actions)
        if a.shape[-1] != N_ACTION_TOKENS:
            raise T.ShapeError("adapt_action", a.shape, detail="last axis must be 3")
        return a.reshape(*a.shape, 1) * self.action_weight + self.action_bias


class LatentWorldModel(Module):
    """Causal transformer over interleaved (action, state) token groups.

    Each step contributes 3 action tokens followed by M state tokens. The
    position embedding is the sum of a per-step temporal embedding and a
    per-slot spatial embedding. Step indices are right-aligned so the newest
    step always carries temporal index ``context - 1``.
    """

    def __init__(self, d_model: int, n_queries: int, context: int, n_layers: int, n_heads: int,
                 rng: np.random.Generator):
        self.d_model = d_model
        self.n_queries = n_queries
        self.context = context
        self.group = N_ACTION_TOKENS + n_queries
        self.temporal = Parameter(normal_embedding(rng, context, d_model))
        self.spatial = Parameter(normal_embedding(rng, self.group, d_model))
        self.layers = [TransformerLayer(d_model, n_heads, rng) for _ in range(n_layers)]
        self.ln_out = LayerNorm(d_model)
        self.head = GaussianHead(d_model, rng)

    def position_embedding(self, t: int) -> Tensor:
        steps = np.arange(self.context - t, self.context)
        temp = T.embedding(self.temporal, np.repeat(steps, self.group))
        spat = T.embedding(self.spatial, np.tile(np.arange(self.group), t))
        return temp + spat

    def causal_mask(self, t: int) -> np.ndarray:
        n = t * self.group
        return np.tril(np.ones((n, n), dtype=bool))

    def __call__(self, action_tokens: Tensor, states: Tensor, return_weights: bool = False):
        """``action_tokens`` (B, t, 3, D), ``states`` (B, t, M, D) -> s̄ for steps 2..t+1, (B, t, M, D)."""
        b, t = states.shape[:2]
        if t < 1:
            raise ValueError("world model needs at least one step")
        if t > self.context:
            raise ValueError(f"sequence of {t} steps exceeds the context of {self.context}")
        if action_tokens.shape[:2] != (b, t) or action_tokens.shape[2] != N_ACTION_TOKENS:
            raise T.ShapeError("lwm", action_tokens.shape, states.shape)
        x = T.concat([action_tokens, states], axis=2).reshape(b, t * self.group, self.d_model)
        x = x + self.position_embedding(t)
        mask = self.causal_mask(t)
        weights = []
        for layer in self.layers:
            if return_weights:
                x, w = layer(x, mask, return_weights=True)
                weights.append(w)
            else:
                x = layer(x, mask)
        x = self.ln_out(x).reshape(b, t, self.group, self.d_model)
        out = self.head(x[:, :, N_ACTION_TOKENS:])
        return (out, weights) if return_weights else out

    def predict_next(self, action_tokens: Tensor, states: Tensor) -> GaussianState:
        """Distribution of the latent state following the last step, (B, M, D)."""
        return self(action_tokens, states).index((slice(None), -1))
