"""
Tracking the best expert through distribution shifts
====================================================

The nonstationary preset changes which expert is best at steps 5000, 9000
and 15000.  Discounting lets old evidence fade.  The discount sets how much
history is kept: about 1 / (1 - lambda) steps.  Here we compare lambda =
0.9999 (memory ~10000 steps, longer than every regime) with 0.999.
"""

import numpy as np
from dataclasses import replace

from moe_oco.presets import get_preset
from moe_oco.simulation import generate_scenario, run_experiment

preset = get_preset("nonstationary-convex", seed=0)
records = list(generate_scenario(preset.scenario))

for lam in (0.9999, 0.999):
    res = run_experiment(records, replace(preset.learner, discount=lam), preset.loss, preset.metric)
    print(f"lambda = {lam}")
    for regime in preset.scenario.regimes[1:]:
        b = regime.start_step
        best = int(np.argmin(regime.expert_quality))
        hit = np.flatnonzero(res.alpha[b:, best] > 0.9)
        lag = hit[0] if hit.size else None
        print(f"  shift at {b}: expert {best} passes 0.9 after {lag} steps")

# the weights around the first shift, every 500 steps
print(np.round(res.alpha[4500:7001:500], 3))
