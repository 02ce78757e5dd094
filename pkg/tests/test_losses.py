import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from moe_oco.gmm import build_moe, moe_pdf
from moe_oco.losses import (
    SmoothingConfig,
    first_step_displacement,
    hard_min_frde,
    probability_loss,
    sliding_window_average,
    soft_min_frde,
    soft_topk_min,
    topk_indices,
)

from conftest import random_alpha, random_experts


def central_difference(f, a, h):
    """Directional derivatives along e_i, perturbing off the simplex (the losses extend linearly)."""
    out = np.empty(a.size)
    for i in range(a.size):
        e = np.zeros(a.size)
        e[i] = h
        out[i] = (f(a + e) - f(a - e)) / (2 * h)
    return out


def multivariate_normal_diag(mu, prec, x):
    """Component densities via scipy, heading residual wrapped by hand."""
    out = []
    for m, h in zip(mu, prec):
        shifted = np.array(x, dtype=float)
        shifted[2] = m[2] + (shifted[2] - m[2] + math.pi) % (2 * math.pi) - math.pi
        out.append(multivariate_normal(m, np.diag(1.0 / h)).pdf(shifted))
    return np.array(out)


def _unnormalised_moe_value(experts, x, k, beta, tau):
    def f(a):
        w = np.concatenate([ai * e.weights for ai, e in zip(a, experts)])
        d = first_step_displacement(np.concatenate([e.means for e in experts]), x)
        return soft_topk_min(w, d, k, beta, tau)[0]
    return f


def test_probability_loss_is_negative_mixture_density(rng):
    experts = random_experts(rng, 3, 2)
    a = random_alpha(rng, 3)
    x = rng.normal(size=3)
    ev = probability_loss(experts, a, x)
    assert ev.value == pytest.approx(-moe_pdf(build_moe(experts, a), x), rel=1e-12)
    assert ev.value == pytest.approx(float(a @ ev.gradient), rel=1e-14)


def test_probability_gradient_finite_differences(rng):
    for _ in range(30):
        n, L = rng.integers(2, 6), rng.integers(1, 5)
        experts = random_experts(rng, n, L)
        a = random_alpha(rng, n)
        x = rng.normal(scale=1.5, size=3)

        means = np.concatenate([e.means for e in experts])
        prec = np.concatenate([e.precisions for e in experts])
        dens = multivariate_normal_diag(means[:, 0], prec[:, 0], x)

        def f(v):
            w = np.concatenate([vi * e.weights for vi, e in zip(v, experts)])
            return -float(np.dot(w, dens))

        fd = central_difference(f, a, 1e-6)
        g = probability_loss(experts, a, x).gradient
        assert np.max(np.abs(g - fd)) / np.abs(fd).max() < 1e-6


def test_soft_min_gradient_finite_differences(rng):
    for _ in range(30):
        n, L = rng.integers(2, 6), rng.integers(1, 5)
        experts = random_experts(rng, n, L)
        a = random_alpha(rng, n)
        x = rng.normal(scale=1.5, size=3)
        k = int(rng.integers(1, n * L + 1))
        cfg = SmoothingConfig(softmin_beta=10.0, softsort_tau=0.1, k=k)
        g = soft_min_frde(experts, a, x, cfg).gradient
        fd = central_difference(_unnormalised_moe_value(experts, x, k, 10.0, 0.1), a, 1e-6)
        scale = max(np.abs(fd).max(), 1e-8)
        assert np.max(np.abs(g - fd)) / scale < 1e-4


def test_soft_topk_min_limits():
    w = np.array([0.5, 0.3, 0.15, 0.05])
    d = np.array([4.0, 1.0, 0.5, 0.1])
    # k covers every component and the sort is sharp: value is a softmin over all of d
    v, _ = soft_topk_min(w, d, 4, beta=1e4, tau=1e-5)
    assert v == pytest.approx(0.1, abs=1e-3)
    v, _ = soft_topk_min(w, d, 2, beta=1e4, tau=1e-5)
    assert v == pytest.approx(1.0, abs=1e-3)
    # a single selected row leaves nothing for the softmin to choose between
    v, _ = soft_topk_min(w, d, 1, beta=1e-6, tau=1e-5)
    assert v == pytest.approx(4.0, abs=1e-3)


def brute_force_min_frde(experts, a, x, k):
    comps = []
    idx = 0
    for ai, e in zip(a, experts):
        for j in range(e.n_modes):
            mu = e.means[j, 0]
            comps.append((-(ai * e.weights[j]), idx, math.hypot(x[0] - mu[0], x[1] - mu[1])))
            idx += 1
    comps.sort()
    return min(c[2] for c in comps[:k])


def test_hard_min_frde_brute_force(rng):
    for _ in range(50):
        n, L = rng.integers(2, 5), rng.integers(1, 4)
        experts = random_experts(rng, n, L)
        a = random_alpha(rng, n)
        x = rng.normal(size=3)
        k = int(rng.integers(1, n * L + 1))
        assert hard_min_frde(experts, a, x, k) == brute_force_min_frde(experts, a, x, k)


def test_topk_indices_tie_rule():
    np.testing.assert_array_equal(topk_indices([0.2, 0.4, 0.2, 0.2], 3), [1, 0, 2])
    with pytest.raises(ValueError):
        topk_indices([0.5, 0.5], 3)


def test_heading_only_counts_when_asked():
    means = np.zeros((1, 2, 3))
    x = np.array([3.0, 4.0, 2.0])
    assert first_step_displacement(means, x)[0] == pytest.approx(5.0)
    assert first_step_displacement(means, x, include_heading=True)[0] == pytest.approx(math.sqrt(29.0))


def test_smoothing_config_validation():
    with pytest.raises(ValueError):
        SmoothingConfig(softmin_beta=0)
    with pytest.raises(ValueError):
        SmoothingConfig(k=0)
    with pytest.raises(ValueError):
        SmoothingConfig(k=5).validate_for(4)


def test_sliding_window_average_against_loop(rng):
    v = rng.normal(size=137)
    for window in (1, 5, 50, 500):
        expect = [v[max(0, t - window + 1):t + 1].mean() for t in range(v.size)]
        np.testing.assert_allclose(sliding_window_average(v, window), expect, rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        sliding_window_average(v, 0)
