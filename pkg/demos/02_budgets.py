"""
Limiting the number of interventions
====================================

A budget of n interventions joins the state as a counter z. In soft mode an
overdrawn budget turns every later reward into a large penalty; in hard mode the
interventions simply become unavailable.
"""

# %%
import numpy as np

from licra import rng
from licra.budget import BudgetSpec, augment_env, augment_mdp, check_budget_satisfaction, stratum_values
from licra.envs.base import TabularEnv
from licra.envs.instances import make_chain
from licra.exact import extract_policy, value_iteration

mdp, cost = make_chain("chain(4)")
print("unconstrained v*:", np.round(value_iteration(mdp, cost).values, 3))

# %%
# Values per budget level: row z + 1 holds v*(., z). More budget never hurts.
for n in (0, 1, 3):
    aug, acost = augment_mdp(mdp, cost, BudgetSpec(n))
    v = value_iteration(aug, acost).values
    print(f"n = {n}:")
    print(np.round(stratum_values(v, mdp.n_states)[1:], 3))

# %%
# The exact policy of the product model never overdraws, and neither does an
# always-intervene policy behind the hard mask.
aug, acost = augment_mdp(mdp, cost, BudgetSpec(2))
policy = extract_policy(aug, acost, value_iteration(aug, acost).values)
soft = augment_env(TabularEnv(mdp, cost), BudgetSpec(2))
hard = augment_env(TabularEnv(mdp, cost), BudgetSpec(2, mode="hard"))
print("soft, exact policy:", check_budget_satisfaction(policy, soft, 2, 5000, 30, rng.stream(0, "demo")))
print("hard, always intervene:", check_budget_satisfaction(lambda s: 1, hard, 2, 5000, 30, rng.stream(1, "demo")))
