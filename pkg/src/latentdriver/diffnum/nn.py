"""Layers built on the tape: linear maps, normalization, attention blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor owned by a module."""

    __slots__ = ("learnable",)

    def __init__(self, data, name: str | None = None, learnable: bool = True):
        super().__init__(data, requires_grad=learnable, name=name)
        self.learnable = learnable


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def normal_embedding(rng: np.random.Generator, *shape: int, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Module:
    """Minimal container: parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.learnable]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise T.ShapeError("load_state_dict", p.shape, arr.shape, detail=name)
            p.data = arr.copy()

    def name_parameters(self) -> None:
        """Stamp each parameter with its dotted path."""
        for name, p in self.named_parameters():
            p.name = name


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise T.ShapeError("linear", x.shape, self.weight.shape)
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear -> GELU -> ... -> Linear."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.gelu(x)
        return x


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 d_query: int | None = None, d_kv: int | None = None):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_model = d_model
        self.q_proj = Linear(d_query or d_model, d_model, rng)
        self.k_proj = Linear(d_kv or d_model, d_model, rng)
        self.v_proj = Linear(d_kv or d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, _ = x.shape
        h = self.n_heads
        x = x.reshape(*lead, n, h, self.d_model // h)
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes)

    def _merge(self, x: Tensor) -> Tensor:
        *lead, h, n, dh = x.shape
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes).reshape(*lead, n, h * dh)

    def __call__(self, xq: Tensor, xkv: Tensor, mask=None, return_weights: bool = False):
        """``mask``: bool broadcastable to (batch, heads, Lq, Lk); True attends."""
        q = self._split(self.q_proj(xq))
        k = self._split(self.k_proj(xkv))
        v = self._split(self.v_proj(xkv))
        res = T.attention(q, k, v, mask, return_weights=return_weights)
        if return_weights:
            out, w = res
            return self.out_proj(self._merge(out)), w
        return self.out_proj(self._merge(res))


class FeedForward(Module):
    def __init__(self, d: int, rng: np.random.Generator, mult: int = 4):
        self.fc1 = Linear(d, mult * d, rng)
        self.fc2 = Linear(mult * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerLayer(Module):
    """Pre-norm self-attention block; causal or bidirectional via the mask."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff = FeedForward(d, rng)

    def __call__(self, x: Tensor, mask=None, return_weights: bool = False):
        h = self.ln1(x)
        if return_weights:
            a, w = self.attn(h, h, mask, return_weights=True)
        else:
            a, w = self.attn(h, h, mask), None
        x = x + a
        x = x + self.ff(self.ln2(x))
        return (x, w) if return_weights else x


class CrossAttentionBlock(Module):
    """Queries self-attend, then read from a context set, then a feed-forward."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.ln_q = LayerNorm(d)
        self.ln_kv = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, rng)

    def __call__(self, q: Tensor, context: Tensor, mask=None) -> Tensor:
        h = self.ln_self(q)
        q = q + self.self_attn(h, h)
        q = q + self.cross_attn(self.ln_q(q), self.ln_kv(context), mask)
        return q + self.ff(self.ln_ff(q))
