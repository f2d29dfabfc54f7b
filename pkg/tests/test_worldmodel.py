import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import check_input_grads, check_module_grads, kl_oracle
from latentdriver.diffnum import Tensor
from latentdriver.diffnum import tensor as T
from latentdriver.worldmodel import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    Adapter,
    GaussianState,
    LatentWorldModel,
    draw_normal,
    kl_gaussian,
)

D, M = 8, 4


def adapter(seed=0, layers=2):
    return Adapter(D, M, layers, 2, np.random.default_rng(seed))


def lwm(seed=0, layers=2, context=2):
    return LatentWorldModel(D, M, context, layers, 2, np.random.default_rng(seed))


def gauss(mean, std) -> GaussianState:
    return GaussianState(Tensor(np.asarray(mean, float)), Tensor(np.log(np.asarray(std, float))))


# -- KL --------------------------------------------------------------------------

def test_kl_examples():
    assert kl_gaussian(gauss([1.0], [1.0]), gauss([0.0], [1.0])).item() == pytest.approx(0.5, abs=1e-12)
    assert kl_gaussian(gauss([0.0], [2.0]), gauss([0.0], [1.0])).item() == pytest.approx(1.5 - math.log(2), abs=1e-12)
    assert kl_gaussian(gauss([0.0], [2.0]), gauss([0.0], [1.0])).item() == pytest.approx(0.8069, abs=1e-3)


def test_kl_matches_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m1, m2 = rng.normal(size=(2, 3, 5))
        s1, s2 = np.exp(rng.uniform(-3, 1, size=(2, 3, 5)))
        got = kl_gaussian(gauss(m1, s1), gauss(m2, s2)).item()
        assert abs(got - kl_oracle(m1, s1, m2, s2)) <= 1e-9 * max(1.0, abs(got))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 6), elements=st.floats(-10, 10)),
       arrays(np.float64, (2, 6), elements=st.floats(LOG_STD_MIN, LOG_STD_MAX)))
def test_kl_non_negative_and_zero_on_self(means, log_stds):
    p = GaussianState(Tensor(means[0]), Tensor(log_stds[0]))
    q = GaussianState(Tensor(means[1]), Tensor(log_stds[1]))
    assert kl_gaussian(p, q).item() >= -1e-12
    assert kl_gaussian(p, p).item() == 0.0


def test_kl_axis_and_shape_errors():
    p = gauss(np.zeros((2, 3)), np.ones((2, 3)))
    assert kl_gaussian(p, p, axis=-1).shape == (2,)
    with pytest.raises(T.ShapeError):
        kl_gaussian(p, gauss(np.zeros(3), np.ones(3)))


@pytest.mark.parametrize("seed", range(5))
def test_kl_gradients(seed):
    rng = np.random.default_rng(seed)
    args = [rng.normal(size=(2, 3)), rng.uniform(-1, 1, (2, 3)), rng.normal(size=(2, 3)), rng.uniform(-1, 1, (2, 3))]

    def f(m1, l1, m2, l2):
        return kl_gaussian(GaussianState(m1, l1), GaussianState(m2, l2))

    assert check_input_grads(f, args) < 1e-4


# -- sampling ----------------------------------------------------------------------

def test_reparameterized_sample_gradients():
    rng = np.random.default_rng(1)
    mean = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    log_std = Tensor(rng.normal(size=(3, 4)) * 0.3, requires_grad=True)
    eps = rng.normal(size=(3, 4))
    T.tsum(GaussianState(mean, log_std).sample(eps=eps)).backward()
    assert np.allclose(mean.grad, 1.0)
    assert np.allclose(log_std.grad, np.exp(log_std.data) * eps, atol=1e-12)


def test_sample_without_noise_is_mean():
    g = gauss(np.ones(3), np.ones(3))
    assert g.sample() is g.mean


def test_draw_normal_per_row_generators():
    rows = draw_normal([np.random.default_rng(i) for i in range(3)], (3, 2))
    assert np.array_equal(rows[1], np.random.default_rng(1).standard_normal(2))
    with pytest.raises(ValueError):
        draw_normal([np.random.default_rng(0)], (2, 2))


# -- adapter -----------------------------------------------------------------------

def test_adapter_shapes_and_clamp():
    ad = adapter()
    rng = np.random.default_rng(2)
    env = Tensor(rng.normal(size=(2, 7, D)) * 30)
    mask = np.ones((2, 7), bool)
    s = ad.adapt_state(env, mask)
    assert s.mean.shape == (2, M, D) and s.log_std.shape == (2, M, D)
    std = s.std.data
    assert np.all(std >= math.exp(LOG_STD_MIN) - 1e-15) and np.all(std <= math.exp(LOG_STD_MAX) + 1e-12)


def test_adapter_default_shapes():
    ad = Adapter(256, 32, 4, 4, np.random.default_rng(0))
    s = ad.adapt_state(Tensor(np.random.default_rng(1).normal(size=(1, 10, 256))), np.ones((1, 10), bool))
    assert s.mean.shape == (1, 32, 256)
    assert ad.adapt_action(np.zeros(3)).shape == (3, 256)


def test_adapter_is_not_constant():
    ad = adapter(3)
    rng = np.random.default_rng(3)
    a = ad.adapt_state(Tensor(rng.normal(size=(1, 5, D))), np.ones((1, 5), bool)).mean.data
    b = ad.adapt_state(Tensor(rng.normal(size=(1, 5, D))), np.ones((1, 5), bool)).mean.data
    assert np.abs(a - b).max() > 1e-6


def test_action_tokens_are_linear_per_dimension():
    ad = adapter()
    bias = ad.action_bias.data
    assert np.array_equal(ad.adapt_action(np.zeros(3)).data, bias)
    one = ad.adapt_action(np.array([0.7, 0.0, 0.0])).data - bias
    two = ad.adapt_action(np.array([1.4, 0.0, 0.0])).data - bias
    assert np.abs(two - 2 * one).max() < 1e-12
    # the y and yaw tokens ignore dx
    assert np.abs(one[1:]).max() == 0.0
    with pytest.raises(T.ShapeError):
        ad.adapt_action(np.zeros(2))


@pytest.mark.parametrize("seed", range(5))
def test_adapter_gradients(seed):
    rng = np.random.default_rng(seed)
    ad = adapter(seed, layers=1)
    env = rng.normal(size=(2, 5, D))
    mask = np.ones((2, 5), bool)
    mask[1, 3:] = False
    acts = rng.normal(size=(2, 3))
    w1, w2, w3 = rng.normal(size=(2, M, D)), rng.normal(size=(2, M, D)), rng.normal(size=(2, 3, D))

    def loss():
        s = ad.adapt_state(Tensor(env), mask)
        return (T.tsum(s.mean * Tensor(w1)) + T.tsum(s.log_std * Tensor(w2))
                + T.tsum(ad.adapt_action(acts) * Tensor(w3)))

    assert check_module_grads(ad, loss, rng) < 1e-4


# -- world model ---------------------------------------------------------------------

def lwm_inputs(rng, b=2, t=2):
    return Tensor(rng.normal(size=(b, t, 3, D))), Tensor(rng.normal(size=(b, t, M, D)))


def test_lwm_shapes():
    model = lwm()
    a, s = lwm_inputs(np.random.default_rng(0))
    out = model(a, s)
    assert out.mean.shape == (2, 2, M, D)
    assert model.predict_next(a, s).mean.shape == (2, M, D)


def test_lwm_default_shapes():
    model = LatentWorldModel(256, 32, 2, 8, 8, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    nxt = model.predict_next(Tensor(rng.normal(size=(1, 2, 3, 256))), Tensor(rng.normal(size=(1, 2, 32, 256))))
    assert nxt.mean.shape == (1, 32, 256) and nxt.log_std.shape == (1, 32, 256)


def test_lwm_rejects_long_sequence():
    model = lwm(context=2)
    a, s = lwm_inputs(np.random.default_rng(0), t=3)
    with pytest.raises(ValueError, match="context"):
        model(a, s)


def test_lwm_is_causal():
    model = lwm(1)
    rng = np.random.default_rng(1)
    a, s = lwm_inputs(rng)
    base = model(a, s)
    s2 = s.data.copy()
    s2[:, 1] += rng.normal(size=(2, M, D))
    moved = model(a, Tensor(s2))
    # the first-step prediction cannot see the second step
    assert np.array_equal(base.mean.data[:, 0], moved.mean.data[:, 0])
    assert np.abs(base.mean.data[:, 1] - moved.mean.data[:, 1]).max() > 1e-6


def test_attention_weights_lower_triangular():
    model = lwm(2)
    a, s = lwm_inputs(np.random.default_rng(2))
    _, weights = model(a, s, return_weights=True)
    n = 2 * (3 + M)
    upper = np.triu(np.ones((n, n), bool), k=1)
    for w in weights:
        assert w.shape[-2:] == (n, n)
        assert np.all(w[..., upper] == 0.0)
        assert np.allclose(w.sum(-1), 1.0)


def test_lwm_deterministic():
    a = Tensor(np.zeros((1, 1, 3, D)))
    s = Tensor(np.zeros((1, 1, M, D)))
    x, y = lwm(5)(a, s), lwm(5)(a, s)
    assert np.array_equal(x.mean.data, y.mean.data) and np.array_equal(x.log_std.data, y.log_std.data)


def test_position_embedding_is_additive():
    model = lwm(6, context=3)
    pe = model.position_embedding(2).data
    g = 3 + M
    for k in range(2 * g):
        step, slot = divmod(k, g)
        assert np.array_equal(pe[k], model.temporal.data[1 + step] + model.spatial.data[slot])


def test_spatial_swap_with_token_swap():
    # spatial slots are shared by every step, so the tokens are swapped in both steps;
    # with one layer the final position sees the swapped pair as an unordered set
    model = lwm(7, layers=1)
    rng = np.random.default_rng(7)
    a, s = lwm_inputs(rng, b=1)
    base = model(a, s).mean.data[:, 1, -1]
    i, j = 3 + 0, 3 + 2
    sp = model.spatial.data
    sp[[i, j]] = sp[[j, i]]
    s2 = s.data.copy()
    s2[:, :, [0, 2]] = s2[:, :, [2, 0]]
    swapped = model(a, Tensor(s2)).mean.data[:, 1, -1]
    assert np.abs(base - swapped).max() < 1e-9


def test_right_aligned_steps():
    model = lwm(8, context=2)
    rng = np.random.default_rng(8)
    a, s = lwm_inputs(rng, b=1)
    one = model(Tensor(a.data[:, 1:]), Tensor(s.data[:, 1:])).mean.data
    pe = model.position_embedding(1).data
    assert np.array_equal(pe, model.position_embedding(2).data[3 + M:])
    assert one.shape == (1, 1, M, D)


@pytest.mark.parametrize("seed", range(5))
def test_lwm_gradients(seed):
    rng = np.random.default_rng(seed)
    model = lwm(seed, layers=1)
    a, s = rng.normal(size=(2, 2, 3, D)), rng.normal(size=(2, 2, M, D))
    w1, w2 = rng.normal(size=(2, 2, M, D)), rng.normal(size=(2, 2, M, D))

    def loss():
        out = model(Tensor(a), Tensor(s))
        return T.tsum(out.mean * Tensor(w1)) + T.tsum(out.log_std * Tensor(w2))

    assert check_module_grads(model, loss, rng) < 1e-4

    def wrt_inputs(at, st):
        out = model(at, st)
        return T.tsum(out.mean * Tensor(w1))

    assert check_input_grads(wrt_inputs, [a, s]) < 1e-4
