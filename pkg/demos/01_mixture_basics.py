"""
Building a mixture of experts by hand
=====================================

Two experts predict where a car will be.  Each one emits a small Gaussian
mixture; the mixture of experts is the union of their modes with weights
scaled by a probability vector over the experts.
"""

import numpy as np

from moe_oco.gmm import ExpertPrediction, build_moe, moe_pdf
from moe_oco.losses import probability_loss, soft_min_frde, hard_min_frde, SmoothingConfig

rng = np.random.default_rng(0)
K = 4  # prediction horizon

# the car drives straight along x at 4 m per step
truth = np.column_stack([4.0 * np.arange(1, K + 1), np.zeros(K), np.zeros(K)])

# expert A: one mode close to the truth, one lane-change decoy
means_a = np.stack([truth + rng.normal(scale=0.2, size=(K, 3)), truth + [0.0, 3.5, 0.0]])
a = ExpertPrediction([0.7, 0.3], means_a, np.full((2, K, 3), 10.0))

# expert B: blurrier and a little off
means_b = np.stack([truth + [1.5, -0.8, 0.0], truth + [-1.0, -3.5, 0.0]])
b = ExpertPrediction([0.5, 0.5], means_b, np.full((2, K, 3), 1.0))

alpha = np.array([0.5, 0.5])
moe = build_moe([a, b], alpha)
print("component weights:", moe.weights)           # alpha_i * p_ij, expert-major
print("density at the truth:", moe_pdf(moe, truth[0]))

# the probability loss is linear in alpha: its gradient is minus each expert's density
ev = probability_loss([a, b], alpha, truth[0])
print("probability loss:", ev.value, "gradient:", ev.gradient)

# minFRDE over the top-3 modes and its smooth stand-in
print("hard minFRDE_3:", hard_min_frde([a, b], alpha, truth[0], k=3))
print("soft minFRDE_3:", soft_min_frde([a, b], alpha, truth[0], SmoothingConfig(k=3)).value)

# sharpening both temperatures closes the gap
print("sharp soft   :", soft_min_frde([a, b], alpha, truth[0], SmoothingConfig(1e4, 1e-4, 3)).value)
