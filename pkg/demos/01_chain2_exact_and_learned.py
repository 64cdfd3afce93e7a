"""
Solving a two-state chain exactly and by learning
=================================================

State 0 pays nothing; a single intervention costing 0.2 moves it to the
absorbing state 1, which pays 1 per step. With discount 0.9 the intervention
is worth it once: v*(0) = -0.2 + 0.9 * 10 = 8.8 and v*(1) = 10.
"""

# %%
# Exact solution: value iteration on the impulse-control operator.
import numpy as np

from licra.envs.instances import chain2
from licra.exact import extract_policy, value_iteration
from licra.qlearn import LearnSchedule, train

mdp, cost = chain2()
vi = value_iteration(mdp, cost)
policy = extract_policy(mdp, cost, vi.values)
print("v* =", np.round(vi.values, 10), "after", vi.iterations, "iterations")
print("intervene where:", policy.intervene.astype(int))

# %%
# The residuals shrink by the discount factor each sweep.
r = np.array(vi.residuals)
print("residual ratios (first five):", np.round(r[1:6] / r[:5], 6))

# %%
# Two-table Q-learning from sampled transitions. The learner keeps one table
# for the null action and one for interventions; exploration first picks a
# branch, then an intervention.
result = train(mdp, cost, LearnSchedule(), episodes=1000, horizon=200, seed=1, oracle=vi.values)
print("learned values:", np.round(result.q.values(), 3))
print("sup-norm gap every 200 episodes:", np.round(result.diagnostics.sup_norm[::200], 3))
print("same policy as the exact one:", result.policy.same_as(policy))
