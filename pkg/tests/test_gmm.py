import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from moe_oco.gmm import (
    AgentState,
    ExpertPrediction,
    GaussianMode,
    WeightVector,
    build_moe,
    gaussian_pdf_first_step,
    moe_pdf,
    wrap_angle,
)

from conftest import random_alpha, random_experts, random_prediction


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_lands_in_half_open_interval(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    # same direction as the input
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)


def test_wrap_angle_array_matches_scalar():
    thetas = np.linspace(-20, 20, 401)
    np.testing.assert_array_equal(wrap_angle(thetas), [wrap_angle(float(t)) for t in thetas])
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_agent_state_rejects_nan_and_wraps():
    s = AgentState(1.0, 2.0, 3 * math.pi)
    assert s.theta == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        AgentState(float("nan"), 0.0, 0.0)


def test_first_step_density_matches_scipy(rng):
    for _ in range(20):
        mean = rng.normal(size=(4, 3))
        prec = rng.uniform(0.1, 5.0, size=(4, 3))
        mode = GaussianMode(mean, prec, 1.0)
        x = mean[0] + rng.normal(scale=0.5, size=3)
        x[2] = mean[0, 2] + rng.uniform(-1, 1)
        expect = multivariate_normal(mean[0], np.diag(1.0 / prec[0])).pdf(x)
        assert gaussian_pdf_first_step(mode, x) == pytest.approx(expect, rel=1e-12)


def test_heading_residual_is_wrapped():
    mean = np.array([[0.0, 0.0, math.pi - 0.05]])
    mode = GaussianMode(mean, np.ones((1, 3)), 1.0)
    across = gaussian_pdf_first_step(mode, [0.0, 0.0, -math.pi + 0.05])
    near = gaussian_pdf_first_step(mode, [0.0, 0.0, math.pi - 0.15])
    assert across == pytest.approx(near, rel=1e-12)


def test_expert_prediction_validation():
    means = np.zeros((2, 3, 3))
    with pytest.raises(ValueError):
        ExpertPrediction([0.5, 0.6], means)
    with pytest.raises(ValueError):
        ExpertPrediction([0.5, 0.5], means, np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        ExpertPrediction([1.0], means)
    ok = ExpertPrediction([0.5, 0.5], means)
    assert not ok.has_covariance and ok.n_modes == 2 and ok.horizon == 3


def test_from_modes_round_trip(rng):
    p = random_prediction(rng, 3, 4)
    q = ExpertPrediction.from_modes(p.modes)
    np.testing.assert_array_equal(p.weights, q.weights)
    np.testing.assert_array_equal(p.means, q.means)
    np.testing.assert_array_equal(p.precisions, q.precisions)


def test_weight_vector_constructors():
    np.testing.assert_allclose(WeightVector.uniform(4).alpha, 0.25)
    np.testing.assert_array_equal(WeightVector.one_hot(3, 1).alpha, [0, 1, 0])
    with pytest.raises(ValueError):
        WeightVector([0.5, 0.4])
    with pytest.raises(ValueError):
        WeightVector([1.5, -0.5])


def test_build_moe_weights_and_order(rng):
    experts = random_experts(rng, 3, 2)
    a = random_alpha(rng, 3)
    moe = build_moe(experts, a)
    assert moe.n_components == 6
    assert moe.weights.sum() == pytest.approx(1.0, abs=1e-12)
    for c, (i, j) in enumerate(moe.source):
        assert moe.weights[c] == pytest.approx(a[i] * experts[i].weights[j], rel=1e-15)
        np.testing.assert_array_equal(moe.means[c], experts[i].means[j])


def test_moe_pdf_is_alpha_weighted_sum(rng):
    for _ in range(10):
        experts = random_experts(rng, 4, 3)
        a = random_alpha(rng, 4)
        x = rng.normal(size=3)
        brute = 0.0
        for ai, e in zip(a, experts):
            for mode in e.modes:
                brute += ai * mode.weight * gaussian_pdf_first_step(mode, x)
        assert moe_pdf(build_moe(experts, a), x) == pytest.approx(brute, rel=1e-12)


def test_one_hot_moe_equals_single_expert(rng):
    experts = random_experts(rng, 3, 2)
    x = rng.normal(size=3)
    single = sum(m.weight * gaussian_pdf_first_step(m, x) for m in experts[2].modes)
    assert moe_pdf(build_moe(experts, WeightVector.one_hot(3, 2)), x) == pytest.approx(single, rel=1e-14)


def test_build_moe_rejects_mismatches(rng):
    a = random_prediction(rng, 2, 3)
    b = random_prediction(rng, 2, 4)
    with pytest.raises(ValueError):
        build_moe([a, b], [0.5, 0.5])
    with pytest.raises(ValueError):
        build_moe([a], [0.5, 0.5])
    c = random_prediction(rng, 3, 3)
    with pytest.raises(ValueError):
        build_moe([a, c], [0.5, 0.5])
    assert build_moe([a, c], [0.5, 0.5], allow_ragged=True).n_components == 5


def test_moe_without_covariance_has_no_density(rng):
    a = random_prediction(rng, 2, 3, with_precision=False)
    b = random_prediction(rng, 2, 3)
    moe = build_moe([a, b], [0.5, 0.5])
    assert moe.precisions is None
    with pytest.raises(ValueError):
        moe_pdf(moe, [0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_moe_density_integrates_like_a_mixture(n, L, seed):
    # the density of a mixture is a convex combination: bounded by the extremes of its components
    r = np.random.default_rng(seed)
    experts = random_experts(r, n, L)
    a = random_alpha(r, n)
    x = r.normal(size=3)
    moe = build_moe(experts, a)
    comp = [gaussian_pdf_first_step(m, x) for e in experts for m in e.modes]
    assert min(comp) * (1 - 1e-12) <= moe_pdf(moe, x) <= max(comp) * (1 + 1e-12)
