import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moe_oco.learners import (
    EG,
    SQUINT,
    LearnerState,
    clip_gradient,
    cumulative_regret,
    eg_step,
    init_state,
    regret_records,
    squint_step,
    step,
)


def test_clip_gradient_basics():
    g, G = clip_gradient([0.0, 0.0], 0.0)
    np.testing.assert_array_equal(g, [0.5, 0.5])
    assert G == 0.0
    g, G = clip_gradient([-2.0, 1.0, 0.0], 0.0)
    assert G == 2.0
    np.testing.assert_allclose(g, [0.0, 0.75, 0.5])
    # an earlier, larger bound is kept
    g, G = clip_gradient([1.0], 4.0)
    assert G == 4.0 and g[0] == pytest.approx(0.625)
    with pytest.raises(ValueError):
        clip_gradient([np.inf], 1.0)


@settings(max_examples=300)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6), st.floats(0, 1e6))
def test_clip_gradient_range(raw, G):
    g, G_new = clip_gradient(raw, G)
    assert np.all((g >= 0) & (g <= 1))
    assert G_new >= G and G_new >= max(abs(v) for v in raw)


def reference_squint(prior, grads, discount=1.0):
    """Slow SQUINT: plain loops, potential by quadrature, weights in arbitrary precision."""
    n = len(prior)
    R = [mp.mpf(0)] * n
    V = [mp.mpf(0)] * n
    G = 0.0
    alpha = [mp.mpf(p) for p in prior]
    history = [list(alpha)]
    for raw in grads:
        G = max(G, max(abs(v) for v in raw))
        g = [mp.mpf(0.5) if G == 0 else (mp.mpf(v) / G + 1) / 2 for v in raw]
        mix = sum(a * gi for a, gi in zip(alpha, g))
        for i in range(n):
            r = mix - g[i]
            R[i] = discount * R[i] + r
            V[i] = discount ** 2 * V[i] + r * r
        xi = [mp.quad(lambda e, Ri=R[i], Vi=V[i]: mp.exp(e * Ri - e * e * Vi), [0, 0.5]) for i in range(n)]
        z = sum(p * x for p, x in zip(prior, xi))
        alpha = [p * x / z for p, x in zip(prior, xi)]
        history.append(list(alpha))
    return np.array([[float(a) for a in row] for row in history])


@pytest.mark.parametrize("discount", [1.0, 0.9])
def test_squint_against_slow_reference(discount):
    rng = np.random.default_rng(5)
    grads = rng.normal(scale=3.0, size=(25, 3))
    prior = np.array([0.5, 0.3, 0.2])
    expect = reference_squint(prior, grads, discount)
    state = init_state(3, discount=discount, prior=prior)
    got = [state.alpha]
    for raw in grads:
        state = squint_step(state, raw)
        got.append(state.alpha)
    np.testing.assert_allclose(np.array(got), expect, rtol=1e-9)


def test_eg_against_hand_computation():
    grads = np.array([[1.0, -1.0, 0.0], [2.0, 0.0, -2.0], [0.5, 0.5, 0.5]])
    state = init_state(3, kind=EG)
    G, S = 0.0, np.zeros(3)
    for t, raw in enumerate(grads, start=1):
        G = max(G, np.abs(raw).max())
        S = S + (raw / G + 1) / 2
        w = np.exp(-S * math.sqrt(math.log(3) / t))
        state = eg_step(state, raw)
        np.testing.assert_allclose(state.alpha, w / w.sum(), rtol=1e-13)


def test_discounted_statistics_recursion():
    rng = np.random.default_rng(0)
    state = init_state(2, discount=0.8)
    R = np.zeros(2)
    V = np.zeros(2)
    for raw in rng.normal(size=(10, 2)):
        g, _ = clip_gradient(raw, state)
        r = state.alpha @ g - g
        R, V = 0.8 * R + r, 0.64 * V + r * r
        state = squint_step(state, raw)
    np.testing.assert_allclose(state.R, R, rtol=1e-13)
    np.testing.assert_allclose(state.V, V, rtol=1e-13)


def test_pre_order_first_step_keeps_prior():
    state = init_state(3, update_order="pre", prior=[0.2, 0.3, 0.5])
    nxt = squint_step(state, [1.0, 0.0, -1.0])
    # the potential at R = V = 0 is the same for every expert
    np.testing.assert_allclose(nxt.alpha, [0.2, 0.3, 0.5], rtol=1e-14)
    assert nxt.R[0] < 0 < nxt.R[2]


@pytest.mark.parametrize("kind", [SQUINT, EG])
def test_dominant_expert_takes_over(kind):
    state = init_state(4, kind=kind)
    for _ in range(2000):
        state = step(state, [0.0, 1.0, 1.0, 1.0])
    assert state.alpha[0] > 0.95


def test_single_expert_squint():
    state = init_state(1)
    for raw in ([3.0], [-1.0], [0.0]):
        state = step(state, raw)
        assert state.alpha.tolist() == [1.0]
    with pytest.raises(ValueError):
        init_state(1, kind=EG)


def test_invalid_state_parameters():
    with pytest.raises(ValueError):
        init_state(3, discount=0.0)
    with pytest.raises(ValueError):
        init_state(3, discount=1.01)
    with pytest.raises(ValueError):
        init_state(2, prior=[1.0, 0.0])
    with pytest.raises(ValueError):
        init_state(2, update_order="sideways")


@pytest.mark.parametrize("kind", [SQUINT, EG])
def test_json_round_trip_continues_identically(kind):
    rng = np.random.default_rng(3)
    a = init_state(3, kind=kind, discount=0.99)
    for raw in rng.normal(size=(7, 3)):
        a = step(a, raw)
    b = LearnerState.from_json(a.to_json())
    for raw in rng.normal(size=(7, 3)):
        a, b = step(a, raw), step(b, raw)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    assert b.kind == kind


def test_batched_state_matches_individual_runs():
    rng = np.random.default_rng(11)
    grads = rng.uniform(-5, 5, size=(30, 4, 3))
    batch = init_state(3, batch_shape=(4,))
    singles = [init_state(3) for _ in range(4)]
    for raw in grads:
        batch = squint_step(batch, raw)
        singles = [squint_step(s, r) for s, r in zip(singles, raw)]
    np.testing.assert_allclose(batch.alpha, np.array([s.alpha for s in singles]), rtol=1e-14)


def test_cumulative_regret_against_loop():
    rng = np.random.default_rng(2)
    alphas = rng.dirichlet(np.ones(3), size=40)
    losses = rng.normal(size=(40, 3))
    expect = np.zeros(3)
    for a, g in zip(alphas, losses):
        expect = expect + (a @ g - g)
    np.testing.assert_allclose(cumulative_regret(alphas, losses), expect, rtol=1e-12, atol=1e-12)
    rec = regret_records(alphas, losses)
    np.testing.assert_allclose(rec[-1].cumulative_regret_vs_each, expect, rtol=1e-12)
