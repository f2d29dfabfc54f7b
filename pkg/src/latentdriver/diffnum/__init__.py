"""Small reverse-mode differentiable numerics on numpy float64 arrays."""

from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    attention,
    broadcast_to,
    clamp,
    concat,
    div,
    embedding,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    softplus,
    stack,
    sub,
    tabs,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .nn import (
    MLP,
    CrossAttentionBlock,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    TransformerLayer,
)
from .optim import Adam, AdamState, clip_grad_norm, cosine_lr
from .checkpoint import CheckpointError
