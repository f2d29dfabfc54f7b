"""Mixture action heads, stacked planning blocks, label assignment and the mixture NLL."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffnum import MLP, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, Tensor, FeedForward
from .diffnum import tensor as T
from .diffnum.nn import normal_embedding
from .geometry import rotated_iou_batch

SIGMA_MIN = 1e-4
RHO_MAX = 1.0 - 1e-6
ACTION_CLAMP = 5.0  # metres per step on dx, dy
POS_IOU, NEG_IOU = 0.7, 0.3
POSITIVE, IGNORE, NEGATIVE = 1, 0, -1
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MixtureAction:
    """K-component action mixture, batched over the leading axis.

    ``logits`` (B, K); ``mu`` (B, K, 2); ``sigma`` (B, K, 2); ``rho`` (B, K);
    ``mu_yaw`` (B, K). Yaw uses a Laplace with unit scale.
    """

    logits: Tensor
    mu: Tensor
    sigma: Tensor
    rho: Tensor
    mu_yaw: Tensor

    @property
    def probs(self) -> np.ndarray:
        return T.softmax(self.logits.detach(), axis=-1).data

    @property
    def means(self) -> np.ndarray:
        """Component expectations (B, K, 3) as (dx, dy, dyaw)."""
        return np.concatenate([self.mu.data, self.mu_yaw.data[..., None]], axis=-1)

    @classmethod
    def from_raw(cls, g: Tensor, l: Tensor) -> "MixtureAction":
        """Map raw head outputs ``g`` (B, K, 6) and ``l`` (B, K, 1) to constrained parameters."""
        sigma = T.softplus(g[..., 3:5]) + SIGMA_MIN
        rho = T.tanh(g[..., 5]) * RHO_MAX
        return cls(g[..., 0], g[..., 1:3], sigma, rho, l[..., 0])

    @classmethod
    def from_arrays(cls, probs, mu, sigma, rho, mu_yaw) -> "MixtureAction":
        """Build directly from constrained parameters (no batch axis required)."""
        p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        return cls(Tensor(np.log(p)), Tensor(np.asarray(mu, dtype=np.float64).reshape(p.shape + (2,))),
                   Tensor(np.asarray(sigma, dtype=np.float64).reshape(p.shape + (2,))),
                   Tensor(np.asarray(rho, dtype=np.float64).reshape(p.shape)),
                   Tensor(np.asarray(mu_yaw, dtype=np.float64).reshape(p.shape)))


def select_component(logits: np.ndarray) -> np.ndarray:
    """argmax over components; ``np.argmax`` already resolves ties to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)


def sample_action(mix: MixtureAction, clamp: bool = True) -> np.ndarray:
    """Expected action of the most probable component, (B, 3)."""
    k = select_component(mix.logits.data)
    means = mix.means
    out = np.take_along_axis(means, k[..., None, None], axis=-2)[..., 0, :]
    if clamp:
        out = out.copy()
        out[..., :2] = np.clip(out[..., :2], -ACTION_CLAMP, ACTION_CLAMP)
        out[..., 2] = np.clip(out[..., 2], -math.pi, math.pi)
    return out


def action_boxes(actions: np.ndarray, extent: tuple[float, float]) -> np.ndarray:
    """Next-pose ego boxes (..., 5) in the current ego frame."""
    a = np.asarray(actions, dtype=np.float64)
    ext = np.broadcast_to(np.asarray(extent, dtype=np.float64), a.shape[:-1] + (2,))
    return np.concatenate([a, ext], axis=-1)


def assign_labels(mix_or_means, target: np.ndarray, extent: tuple[float, float]) -> np.ndarray:
    """Per-component labels (B, K) in {POSITIVE, IGNORE, NEGATIVE}.

    A component is positive when its IoU with the target box exceeds 0.7 or it
    has the largest IoU; negative below 0.3; otherwise ignored.
    """
    means = mix_or_means.means if isinstance(mix_or_means, MixtureAction) else np.asarray(mix_or_means)
    squeeze = means.ndim == 2
    if squeeze:
        means = means[None]
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    b, k, _ = means.shape
    pred = action_boxes(means, extent)
    gt = np.broadcast_to(action_boxes(tgt, extent)[:, None], pred.shape)
    iou = rotated_iou_batch(pred.reshape(-1, 5), gt.reshape(-1, 5)).reshape(b, k)
    labels = np.full((b, k), IGNORE, dtype=np.int8)
    labels[iou < NEG_IOU] = NEGATIVE
    labels[iou > POS_IOU] = POSITIVE
    labels[np.arange(b), np.argmax(iou, axis=1)] = POSITIVE
    return labels[0] if squeeze else labels


def component_nll(mix: MixtureAction, target) -> Tensor:
    """Negative log-likelihood of ``target`` (B, 3) under every component, (B, K)."""
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    logp = T.log_softmax(mix.logits, axis=-1)
    d = Tensor(tgt[:, None, :2]) - mix.mu
    z = d / mix.sigma
    zx, zy = z[..., 0], z[..., 1]
    one_m_r2 = 1.0 - mix.rho * mix.rho
    quad = (zx * zx - mix.rho * zx * zy * 2.0 + zy * zy) / (one_m_r2 * 2.0)
    log_norm = T.log(mix.sigma[..., 0]) + T.log(mix.sigma[..., 1]) + T.log(one_m_r2) * 0.5 + LOG_2PI
    gauss = quad + log_norm
    lap = T.tabs(Tensor(tgt[:, None, 2]) - mix.mu_yaw) + math.log(2.0)
    return gauss + lap - logp


def gmm_nll(mix: MixtureAction, target, labels: np.ndarray) -> Tensor:
    """Mean NLL over positive components, then over the batch."""
    labels = np.atleast_2d(labels)
    pos = (labels == POSITIVE).astype(np.float64)
    counts = pos.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("every sample needs at least one positive component")
    nll = component_nll(mix, target)
    per_sample = T.tsum(nll * Tensor(pos / counts[:, None]), axis=1)
    return T.tmean(per_sample)


class PlanningBlock(Module):
    """Query refinement: self-attention, cross-attention to the context, feed-forward, mixture heads."""

    def __init__(self, d: int, n_heads: int, n_modes: int, rng: np.random.Generator):
        self.fuse_self = Linear(2 * d, d, rng)
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.fuse_cross = Linear(2 * d, d, rng)
        self.ln_q = LayerNorm(d)
        self.ln_kv = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, rng)
        self.ln_head = LayerNorm(d)
        self.head_g = MLP([d, d, 6], rng)
        self.head_l = MLP([d, d, 1], rng)

    def __call__(self, q: Tensor, q_pe: Tensor, context: Tensor, mask) -> tuple[Tensor, MixtureAction]:
        h = self.ln_self(self.fuse_self(T.concat([q, q_pe], axis=-1)))
        q = q + self.self_attn(h, h)
        hq = self.ln_q(self.fuse_cross(T.concat([q, q_pe], axis=-1)))
        q = q + self.cross_attn(hq, self.ln_kv(context), mask)
        q = q + self.ff(self.ln_ff(q))
        h = self.ln_head(q)
        return q, MixtureAction.from_raw(self.head_g(h), self.head_l(h))


def mixture_features(mix: MixtureAction) -> np.ndarray:
    """Detached per-component summary fed to the next block's position embedding, (B, K, 7)."""
    p = mix.probs[..., None]
    return np.concatenate([mix.means, np.log(mix.sigma.data), mix.rho.data[..., None], p], axis=-1)


class Planner(Module):
    """J stacked planning blocks; blocks after ``intermediate`` may read latent world-model tokens."""

    def __init__(self, d_model: int, n_heads: int, n_modes: int, n_layers: int, intermediate: int,
                 rng: np.random.Generator):
        if not 1 <= intermediate < n_layers:
            raise ValueError("need 1 <= intermediate < layers")
        self.d_model = d_model
        self.n_modes = n_modes
        self.n_layers = n_layers
        self.intermediate = intermediate
        self.q_pe0 = Parameter(normal_embedding(rng, n_modes, d_model))
        self.pe_mlp = MLP([7, d_model, d_model], rng)
        self.blocks = [PlanningBlock(d_model, n_heads, n_modes, rng) for _ in range(n_layers)]

    def initial_queries(self, b: int) -> tuple[Tensor, Tensor]:
        q = Tensor(np.zeros((b, self.n_modes, self.d_model)))
        pe = T.broadcast_to(self.q_pe0.reshape(1, self.n_modes, self.d_model), (b, self.n_modes, self.d_model))
        return q, pe

    def run(self, layers: range, q: Tensor, prev: MixtureAction | None, context: Tensor, mask) -> tuple[Tensor, list[MixtureAction]]:
        """Apply blocks ``layers`` (0-based) starting from queries ``q`` and the previous mixture."""
        outs = []
        for j in layers:
            if prev is None:
                pe = self.initial_queries(q.shape[0])[1]
            else:
                pe = self.pe_mlp(Tensor(mixture_features(prev)))
            q, prev = self.blocks[j](q, pe, context, mask)
            outs.append(prev)
        return q, outs

    def first(self, context: Tensor, mask) -> tuple[Tensor, list[MixtureAction]]:
        q, _ = self.initial_queries(context.shape[0])
        return self.run(range(self.intermediate), q, None, context, mask)

    def rest(self, q: Tensor, prev: MixtureAction, context: Tensor, mask) -> list[MixtureAction]:
        return self.run(range(self.intermediate, self.n_layers), q, prev, context, mask)[1]
