"""
Portfolio rebalancing with a fixed fee
======================================

Wealth is split between a risky and a risk-free asset. Moving 10% of one into
the other costs 1. The impulse learner separates "do nothing" from "rebalance";
the flat baseline treats all three choices alike.
"""

# %%
import numpy as np

from licra.envs.merton import MertonEnv
from licra.qlearn import LearnSchedule, train, train_flat_baseline

schedule = LearnSchedule(epsilon_decay=0.995)
rows = []
for seed in range(4):
    a = train(MertonEnv(), None, schedule, 2000, 75, seed).diagnostics
    b = train_flat_baseline(MertonEnv(), None, schedule, 2000, 75, seed).diagnostics
    rows.append((seed, a.returns[-100:].mean(), b.returns[-100:].mean(),
                 a.interventions[-100:].mean(), b.interventions[-100:].mean()))

print("seed  impulse return  flat return  impulse moves  flat moves")
for seed, ra, rb, ia, ib in rows:
    print(f"{seed:>4}  {ra:14.3f}  {rb:11.3f}  {ia:13.2f}  {ib:10.2f}")

# %%
# Returns are terminal utility 2 sqrt(W_T) minus fees over the final 100 episodes.
print("mean gap:", np.mean([r[1] - r[2] for r in rows]).round(3))
