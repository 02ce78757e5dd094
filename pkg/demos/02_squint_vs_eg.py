"""
SQUINT against exponentiated gradient
=====================================

Same synthetic stream, two learners.  Expert 0 is ten times sharper than
expert 1 and thirty times sharper than expert 2.  We count the steps each
learner needs before it puts 90% of its weight on expert 0.
"""

import numpy as np
from dataclasses import replace

from moe_oco.presets import get_preset
from moe_oco.simulation import generate_scenario, run_experiment

preset = get_preset("squint-vs-eg", seed=0)
records = list(generate_scenario(preset.scenario))   # shared by both learners

runs = {}
for kind in ("squint", "eg"):
    runs[kind] = run_experiment(records, replace(preset.learner, kind=kind), preset.loss, preset.metric)

for kind, res in runs.items():
    hit = np.flatnonzero(res.alpha[:, 0] >= 0.9)
    print(f"{kind:>6}: alpha_0 >= 0.9 after {hit[0] if hit.size else 'never'} steps, "
          f"final alpha {np.round(res.alpha[-1], 4)}")

# smoothed negative log-likelihood over the last 1000 steps
for label in ("NLL_moe", "NLL_expert0", "NLL_expert1", "NLL_expert2"):
    print(label, runs["squint"].metrics[label].smoothed[-1000:].mean())

# regret against the best expert on the clipped losses shrinks per step
reg = runs["squint"].clipped_regret().max(axis=1)
for T in (500, 1000, 2000, 5000):
    print(f"regret/T at T={T}: {reg[T - 1] / T:.5f}")
