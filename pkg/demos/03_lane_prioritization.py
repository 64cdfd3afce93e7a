"""
Which penalty zones get protected as interventions get dearer
=============================================================

A vehicle drifts along a lane with three slow-speed zones whose penalties grow
1, 2, 4. Pushing the accelerator costs K + a^2. The "contested" preset keeps the
speed cap close to the minimum speed, so staying fast enough takes repeated
pushes and a high K forces the policy to choose.
"""

# %%
from dataclasses import replace

from licra.config import LANE_PRESETS
from licra.envs.lane import LaneParams, expected_audit, lane_discretize
from licra.exact import extract_policy, value_iteration

for preset in ("default", "contested"):
    print(f"preset {preset}")
    for K in (0.1, 1.0, 10.0):
        params = replace(LaneParams(), K=K, **LANE_PRESETS[preset])
        mdp, cost, grid = lane_discretize(params)
        policy = extract_policy(mdp, cost, value_iteration(mdp, cost).values)
        audit = expected_audit(params, mdp, grid, policy)
        zones = ", ".join(f"{x:.2f}" for x in audit.violations)
        print(f"  K = {K:>4}: interventions {audit.interventions:6.2f}, slow steps per zone ({zones})")

# %%
# At K = 10 the contested lane gives up the cheapest zone first: zone 1 absorbs
# the slow steps while zones 2 and 3 stay clean.
