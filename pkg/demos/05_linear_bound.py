"""
Linear approximation: where the learned weights land
====================================================

With indicator features, the step size counted per active feature makes
stochastic approximation settle on the projected fixed point under the
sampling distribution D. We compare that point with the best approximation
Pi Q* and with the factor (1 - gamma^2)^-1/2.
"""

# %%
import numpy as np

from licra.linear import projected_fixed_point, train_fa, verify_error_bound
from licra.verify import FA_SCHEDULE, fa_instances

for k, (mdp, cost, feats) in enumerate(fa_instances(6)):
    res = train_fa(mdp, cost, feats, FA_SCHEDULE, 400_000, seed=k, step_rule="features")
    D = res.sampling_distribution()
    phi = feats.matrix(mdp.n_states)
    r_fp = projected_fixed_point(mdp, cost, phi, D)
    chk = verify_error_bound(mdp, cost, feats, res.weights, D)
    print(f"{mdp.name}: |learned - fixed point| = {np.max(np.abs(phi @ (res.weights.r - r_fp))):.3f}, "
          f"error {chk.lhs:.3f} vs bound {chk.rhs:.3f} -> {'holds' if chk.holds else 'violated'}")

# %%
# The learner tracks the fixed point closely, yet the fixed point itself often
# sits outside the bound: the max over branches inside the target keeps the
# projected operator from contracting in the D-weighted norm.
