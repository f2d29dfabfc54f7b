import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import bivariate_logpdf, check_input_grads, check_module_grads, laplace_logpdf
from latentdriver.diffnum import Tensor
from latentdriver.diffnum import tensor as T
from latentdriver.planner import (
    ACTION_CLAMP,
    IGNORE,
    NEGATIVE,
    POSITIVE,
    RHO_MAX,
    SIGMA_MIN,
    MixtureAction,
    PlanningBlock,
    Planner,
    assign_labels,
    component_nll,
    gmm_nll,
    sample_action,
    select_component,
)
from latentdriver.scenegen.types import EGO_LENGTH, EGO_WIDTH

EXT = (EGO_LENGTH, EGO_WIDTH)


def single(p=1.0, mu=(0.0, 0.0), sigma=(1.0, 1.0), rho=0.0, mu_yaw=0.0, k=1):
    probs = [p] + [(1 - p) / (k - 1)] * (k - 1) if k > 1 else [p]
    mus = [mu] + [(50.0 + i, 0.0) for i in range(k - 1)]
    return MixtureAction.from_arrays(probs, mus, [sigma] * k, [rho] * k, [mu_yaw] + [0.0] * (k - 1))


def first_positive(k=1):
    lab = np.full((1, k), NEGATIVE)
    lab[0, 0] = POSITIVE
    return lab


def oracle_nll(mix: MixtureAction, target, labels) -> float:
    """Direct per-sample density evaluation, averaged like the loss."""
    probs = mix.probs
    mu, sig, rho, myaw = mix.mu.data, mix.sigma.data, mix.rho.data, mix.mu_yaw.data
    tgt = np.atleast_2d(target)
    per = []
    for b in range(len(tgt)):
        vals = []
        for k in np.flatnonzero(labels[b] == POSITIVE):
            lp = bivariate_logpdf(tgt[b, 0], tgt[b, 1], mu[b, k, 0], mu[b, k, 1], sig[b, k, 0], sig[b, k, 1], rho[b, k])
            vals.append(-math.log(probs[b, k]) - lp - laplace_logpdf(tgt[b, 2], myaw[b, k]))
        per.append(sum(vals) / len(vals))
    return sum(per) / len(per)


# -- action selection -------------------------------------------------------------

def test_sample_action_examples():
    mix = MixtureAction.from_arrays([0.1, 0.9], [(1, 1), (2, 3)], [(1, 1)] * 2, [0, 0], [0.5, -0.2])
    assert sample_action(mix)[0] == pytest.approx([2, 3, -0.2])
    tie = MixtureAction.from_arrays([0.5, 0.5], [(1, 1), (2, 3)], [(1, 1)] * 2, [0, 0], [0.5, -0.2])
    assert sample_action(tie)[0] == pytest.approx([1, 1, 0.5])
    wide = MixtureAction.from_arrays([0.1, 0.9], [(1, 1), (2, 3)], [(9, 9)] * 2, [0.7, 0.7], [0.5, -0.2])
    assert np.array_equal(sample_action(wide), sample_action(mix))


def test_sample_action_clamps():
    mix = MixtureAction.from_arrays([1.0], [(40.0, -9.0)], [(1, 1)], [0], [5.0])
    a = sample_action(mix)[0]
    assert a == pytest.approx([ACTION_CLAMP, -ACTION_CLAMP, math.pi])
    assert sample_action(mix, clamp=False)[0] == pytest.approx([40.0, -9.0, 5.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.integers(-160, 160).map(lambda v: v / 8)),
       st.integers(-800, 800).map(lambda v: v / 8))
def test_selection_shift_invariant_and_probs_normalized(logits, c):
    assert np.array_equal(select_component(logits), select_component(logits + c))
    mix = MixtureAction(Tensor(logits), Tensor(np.zeros((3, 6, 2))), Tensor(np.ones((3, 6, 2))),
                        Tensor(np.zeros((3, 6))), Tensor(np.zeros((3, 6))))
    assert np.all(np.abs(mix.probs.sum(-1) - 1) <= 1e-12)


def test_from_raw_bounds():
    rng = np.random.default_rng(0)
    g = Tensor(rng.normal(size=(4, 6, 6)) * 50)
    mix = MixtureAction.from_raw(g, Tensor(rng.normal(size=(4, 6, 1))))
    assert np.all(mix.sigma.data >= SIGMA_MIN)
    assert np.all(np.abs(mix.rho.data) <= RHO_MAX)


# -- labels -----------------------------------------------------------------------

def test_label_examples():
    tgt = np.array([1.0, 0.0, 0.0])
    assert assign_labels(np.array([[1.0, 0.0, 0.0]]), tgt, EXT)[0] == POSITIVE
    means = np.array([[1.0, 0.0, 0.0], [101.0, 0.0, 0.0]])
    assert list(assign_labels(means, tgt, EXT)) == [POSITIVE, NEGATIVE]
    # lateral shift s of a 4.8 x 2 box: overlap 4.8 (2 - s); IoU 0.5 at overlap 6.4, so s = 2/3
    means = np.array([[1.0, 0.0, 0.0], [1.0, 2.0 / 3.0, 0.0]])
    labels = assign_labels(means, tgt, EXT)
    assert labels[0] == POSITIVE and labels[1] == IGNORE


def test_best_component_always_positive():
    tgt = np.array([0.0, 0.0, 0.0])
    means = np.array([[30.0, 0.0, 0.0], [40.0, 0.0, 0.0]])
    assert list(assign_labels(means, tgt, EXT)) == [POSITIVE, NEGATIVE]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 6, 3), elements=st.floats(-20, 20)), arrays(np.float64, (4, 3), elements=st.floats(-20, 20)))
def test_every_sample_has_a_positive(means, target):
    labels = assign_labels(means, target, EXT)
    assert np.all((labels == POSITIVE).sum(axis=1) >= 1)
    assert set(np.unique(labels)) <= {POSITIVE, IGNORE, NEGATIVE}


# -- NLL ---------------------------------------------------------------------------

def test_nll_examples():
    z = np.zeros(3)
    assert gmm_nll(single(), z, first_positive()).item() == pytest.approx(math.log(2 * math.pi) + math.log(2), abs=1e-12)
    assert gmm_nll(single(), z, first_positive()).item() == pytest.approx(2.5310, abs=1e-3)
    half = gmm_nll(single(rho=0.5), z, first_positive()).item()
    assert half == pytest.approx(math.log(2 * math.pi) + 0.5 * math.log(0.75) + math.log(2), abs=1e-12)
    assert half == pytest.approx(2.3872, abs=1e-3)
    two = gmm_nll(single(p=0.5, k=2), z, first_positive(2)).item()
    assert two - gmm_nll(single(), z, first_positive()).item() == pytest.approx(math.log(2), abs=1e-12)


def test_nll_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        b, k = 3, 4
        probs = rng.dirichlet(np.ones(k), size=b)
        mix = MixtureAction.from_arrays(probs, rng.normal(size=(b, k, 2)), np.exp(rng.uniform(-2, 1, (b, k, 2))),
                                        rng.uniform(-0.95, 0.95, (b, k)), rng.normal(size=(b, k)))
        tgt = rng.normal(size=(b, 3))
        labels = rng.choice([POSITIVE, IGNORE, NEGATIVE], size=(b, k))
        labels[:, 0] = POSITIVE
        got = gmm_nll(mix, tgt, labels).item()
        assert abs(got - oracle_nll(mix, tgt, labels)) <= 1e-9 * max(1.0, abs(got))


def test_nll_needs_a_positive():
    with pytest.raises(ValueError):
        gmm_nll(single(), np.zeros(3), np.full((1, 1), NEGATIVE))


def test_nll_monotone_in_distance():
    vals = [gmm_nll(single(mu=(d, 0.0), sigma=(0.5, 0.8), rho=0.3), np.zeros(3), first_positive()).item()
            for d in np.linspace(3.0, 0.0, 40)]
    assert np.all(np.diff(vals) < 0)


def test_component_nll_shape():
    mix = single(p=0.5, k=3)
    assert component_nll(mix, np.zeros((1, 3))).shape == (1, 3)


@pytest.mark.parametrize("seed", range(5))
def test_nll_gradients(seed):
    rng = np.random.default_rng(seed)
    b, k = 2, 3
    tgt = rng.normal(size=(b, 3))
    labels = np.array([[POSITIVE, IGNORE, POSITIVE], [NEGATIVE, POSITIVE, IGNORE]])
    g, l = rng.normal(size=(b, k, 6)), rng.normal(size=(b, k, 1))
    g[..., 5] *= 0.5  # keep rho away from saturation

    def f(gt, lt):
        return gmm_nll(MixtureAction.from_raw(gt, lt), tgt, labels)

    assert check_input_grads(f, [g, l]) < 1e-4


# -- planning blocks -------------------------------------------------------------------

D, K = 8, 3


def context(rng, b=2, n=5):
    return Tensor(rng.normal(size=(b, n, D))), np.ones((b, 1, 1, n), bool)


@pytest.mark.parametrize("seed", range(5))
def test_block_gradients(seed):
    rng = np.random.default_rng(seed)
    blk = PlanningBlock(D, 2, K, rng)
    q, pe = rng.normal(size=(2, K, D)), rng.normal(size=(2, K, D))
    ctx, mask = context(rng)
    w = [rng.normal(size=(2, K, s)) for s in (D, 1, 2, 2, 1, 1)]

    def loss():
        q2, mix = blk(Tensor(q), Tensor(pe), ctx, mask)
        parts = [q2, mix.logits[..., None], mix.mu, mix.sigma, mix.rho[..., None], mix.mu_yaw[..., None]]
        return sum((T.tsum(p * Tensor(wi)) for p, wi in zip(parts[1:], w[1:])), T.tsum(parts[0] * Tensor(w[0])))

    assert check_module_grads(blk, loss, rng) < 1e-4


def test_planner_layers_and_modes():
    rng = np.random.default_rng(1)
    pl = Planner(D, 2, 6, 3, 1, rng)
    ctx, mask = context(rng)
    q, early = pl.first(ctx, mask)
    assert len(early) == 1 and early[0].mu.shape == (2, 6, 2)
    rest = pl.rest(q, early[-1], ctx, mask)
    assert len(rest) == 2 and all(m.logits.shape == (2, 6) for m in rest)
    with pytest.raises(ValueError):
        Planner(D, 2, 6, 3, 3, rng)


def test_initial_queries_are_zero():
    pl = Planner(D, 2, K, 3, 1, np.random.default_rng(0))
    q, pe = pl.initial_queries(2)
    assert np.all(q.data == 0) and pe.shape == (2, K, D)


def test_masked_latents_match_keys_only():
    rng = np.random.default_rng(2)
    pl = Planner(D, 2, K, 3, 1, rng)
    ctx, mask = context(rng)
    q, early = pl.first(ctx, mask)
    keys_only = pl.rest(q, early[-1], ctx, mask)
    latent = Tensor(rng.normal(size=(2, 4, D)) * 10)
    full = T.concat([ctx, latent], axis=1)
    hidden = np.concatenate([mask, np.zeros((2, 1, 1, 4), bool)], axis=-1)
    masked = pl.rest(q, early[-1], full, hidden)
    for a, b in zip(keys_only, masked):
        assert np.abs(a.mu.data - b.mu.data).max() < 1e-9
        assert np.abs(a.logits.data - b.logits.data).max() < 1e-9
    seen = pl.rest(q, early[-1], full, np.ones((2, 1, 1, 9), bool))
    assert np.abs(seen[0].mu.data - keys_only[0].mu.data).max() > 1e-8
