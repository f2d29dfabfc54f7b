import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import check_input_grads, check_module_grads, rel_error
from latentdriver.diffnum import (
    Adam,
    CheckpointError,
    Linear,
    MultiHeadAttention,
    Parameter,
    ShapeError,
    Tensor,
    TransformerLayer,
    cosine_lr,
    no_grad,
)
from latentdriver.diffnum import checkpoint as ckpt
from latentdriver.diffnum import tensor as T

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_softmax_of_equal_logits_is_uniform():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=0, rtol=0)


def test_identity_matmul():
    a = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_layer_norm_matches_hand_computation():
    out = T.layer_norm(Tensor([1.0, 2.0, 3.0]), eps=0.0).data
    # mean 2, population variance 2/3
    expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / math.sqrt(2.0 / 3.0)
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_shape_mismatch_names_operation():
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_gradients_accumulate_until_zeroed():
    x = Tensor(2.0, requires_grad=True)
    (x * x).backward()
    (x * x).backward()
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    (x * x).backward()
    assert x.grad == pytest.approx(4.0)


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = T.tsum(x * 3.0)
    assert not y.requires_grad


def test_softmax_nll_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 5))
    labels = rng.integers(0, 5, size=4)
    onehot = np.eye(5)[labels]

    def loss(z):
        return -T.tsum(T.log_softmax(z, axis=-1) * Tensor(onehot)) * 0.25

    assert check_input_grads(loss, [logits]) < 1e-4


def test_attention_gradient_on_toy_input():
    rng = np.random.default_rng(2)
    q, k, v = rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    w = rng.normal(size=(2, 3))

    def f(q, k, v):
        return T.tsum(T.attention(q, k, v) * Tensor(w))

    assert check_input_grads(f, [q, k, v]) < 1e-4


@pytest.mark.parametrize("op", ["exp", "tanh", "softplus", "gelu", "log", "layer_norm", "softmax"])
def test_elementwise_gradients(op):
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 2.0, size=(3, 4)) if op == "log" else rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    fn = getattr(T, op)
    assert check_input_grads(lambda t: T.tsum(fn(t) * Tensor(w)), [x]) < 1e-4


def test_broadcast_and_index_gradients():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 1, 4)), rng.normal(size=(5, 4))
    idx = np.array([0, 2, 2, 1])

    def f(a, b):
        c = (a * b + b) / (T.exp(a) + 1.0)
        return T.tsum(c[idx]) + T.tsum(T.concat([a[0], b[:1]], axis=0))

    assert check_input_grads(f, [a, b]) < 1e-4


def test_masked_attention_ignores_masked_keys():
    rng = np.random.default_rng(5)
    q, k, v = rng.normal(size=(1, 2, 4)), rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 3, 4))
    mask = np.array([True, True, False])
    full = T.attention(q, k[:, :2], v[:, :2]).data
    masked = T.attention(q, k, v, mask).data
    assert np.allclose(full, masked, atol=1e-12)
    assert np.array_equal(T.attention(q, k, v, np.zeros(3, bool)).data, np.zeros((1, 2, 4)))


def test_transformer_layer_gradients():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        layer = TransformerLayer(8, 2, rng)
        x = rng.normal(size=(2, 5, 8))
        mask = np.tril(np.ones((5, 5), bool))
        w = rng.normal(size=(2, 5, 8))
        assert check_module_grads(layer, lambda: T.tsum(layer(Tensor(x), mask) * Tensor(w)), rng) < 1e-4


def test_multihead_attention_cross_shapes():
    rng = np.random.default_rng(6)
    mha = MultiHeadAttention(8, 4, rng, d_query=6, d_kv=5)
    out = mha(Tensor(rng.normal(size=(2, 3, 6))), Tensor(rng.normal(size=(2, 7, 5))))
    assert out.shape == (2, 3, 8)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=-1) - 1.0) <= 1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=finite))
def test_layer_norm_rows_have_zero_mean(x):
    y = T.layer_norm(Tensor(x)).data
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-9)


def test_forward_and_backward_are_deterministic():
    def run():
        rng = np.random.default_rng(11)
        layer = TransformerLayer(8, 2, rng)
        x = Tensor(rng.normal(size=(2, 4, 8)))
        out = layer(x)
        T.tsum(out * out).backward()
        return out.data, layer.ff.fc1.weight.grad

    (a1, g1), (a2, g2) = run(), run()
    assert np.array_equal(a1, a2) and np.array_equal(g1, g2)


# -- optimizer ------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([1.0]))
    p.grad = np.array([1.0])
    Adam([p], lr=0.1).step()
    assert p.data[0] == pytest.approx(0.9, abs=1e-6)


def test_adam_zero_gradient_leaves_parameter():
    p = Parameter(np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    Adam([p], lr=0.1).step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_identical_params_stay_identical():
    a, b = Parameter(np.array([0.3])), Parameter(np.array([0.3]))
    opt = Adam([a, b], lr=0.05)
    for g in (0.5, -1.0, 2.0):
        a.grad = np.array([g])
        b.grad = np.array([g])
        opt.step()
    assert np.array_equal(a.data, b.data)
    assert opt.state.step == 3


def test_cosine_schedule():
    assert cosine_lr(0, 100, 2e-4) == 2e-4
    assert cosine_lr(100, 100, 2e-4) == 0.0
    assert cosine_lr(50, 100, 2e-4) == pytest.approx(1e-4, rel=1e-12)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0)


# -- checkpoints -------------------------------------------------------------------

def test_checkpoint_round_trip_is_exact():
    rng = np.random.default_rng(7)
    layer = Linear(4, 3, rng)
    blob = ckpt.dumps(layer.state_dict(), {"note": "x=1"})
    state, meta = ckpt.loads(blob)
    assert meta == {"note": "x=1"}
    other = Linear(4, 3, np.random.default_rng(8))
    other.load_state_dict(state)
    assert all(np.array_equal(other.state_dict()[k], v) for k, v in layer.state_dict().items())


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXXXXXX" + b[8:], "magic"),
    (lambda b: b[:8] + (99).to_bytes(4, "little") + b[12:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_checkpoint_rejects_corruption(mutate, msg):
    blob = ckpt.dumps({"w": np.ones((2, 2))})
    with pytest.raises(CheckpointError, match=msg):
        ckpt.loads(mutate(blob))


def test_load_state_dict_rejects_shape_mismatch():
    layer = Linear(2, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        layer.load_state_dict({"weight": np.ones((3, 2)), "bias": np.zeros(2)})


def test_rel_error_helper():
    assert rel_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
