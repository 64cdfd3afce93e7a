import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from licra import rng as rngmod
from licra.budget import (
    BudgetSpec,
    ProductSizeError,
    augment_env,
    augment_mdp,
    augmented_index,
    auto_delta,
    check_budget_satisfaction,
    split_index,
    stratum_values,
)
from licra.envs.base import TabularEnv, rollout
from licra.envs.instances import chain2, make_chain, random_mdp
from licra.exact import extract_policy, value_iteration
from licra.mdp import NULL, CostSpec


def solve(mdp, cost):
    v = value_iteration(mdp, cost, tol=1e-11).values
    return v, extract_policy(mdp, cost, v)


class TestAugmentMdp:
    def test_chain2_strata(self, frozen):
        mdp, cost = chain2()
        aug, acost = augment_mdp(mdp, cost, BudgetSpec(1))
        v, _ = solve(aug, acost)
        strata = stratum_values(v, 2)
        for z, row in frozen["chain2_budget1_strata"].items():
            np.testing.assert_allclose(strata[int(z) + 1], row, rtol=1e-9, atol=1e-8)

    def test_auto_delta(self, frozen):
        mdp, _ = chain2()
        assert auto_delta(float(np.abs(mdp.reward).max()), mdp.gamma) == pytest.approx(frozen["chain2_budget1_delta"])

    @pytest.mark.parametrize("name", ["chain2", "chain(4)", "random(11, 3, 2)", "random(5, 5, 1)"])
    def test_zero_budget_never_intervenes(self, name):
        mdp, cost = make_chain(name)
        aug, acost = augment_mdp(mdp, cost, BudgetSpec(0))
        _, pol = solve(aug, acost)
        live = np.arange(mdp.n_states, aug.n_states)
        assert not pol.intervene[live].any()

    def test_slack_budget_keeps_value(self):
        mdp, cost = chain2()
        v_star, _ = solve(mdp, cost)
        aug, acost = augment_mdp(mdp, cost, BudgetSpec(3))
        v, _ = solve(aug, acost)
        for z in (1, 2, 3):
            np.testing.assert_allclose(stratum_values(v, 2)[z + 1], v_star, atol=1e-8)

    def test_chain2_one_intervention_per_trajectory(self):
        mdp, cost = chain2()
        aug, acost = augment_mdp(mdp, cost, BudgetSpec(1))
        _, pol = solve(aug, acost)
        # chain2 is deterministic, so each start state has exactly one optimal trajectory
        for s0 in range(2):
            i, k = augmented_index(2, s0, 1), 0
            for _ in range(50):
                b = int(pol(i))
                k += b != NULL
                i = int(np.argmax(aug.transition[b, i]))
            assert k == (1 if s0 == 0 else 0)

    @pytest.mark.parametrize("mode", ["soft", "hard"])
    def test_monotone_in_budget(self, mode):
        mdp, cost = make_chain("random(11, 3, 2)")
        aug, acost = augment_mdp(mdp, cost, BudgetSpec(3, mode=mode))
        strata = stratum_values(solve(aug, acost)[0], 3)
        assert np.all(np.diff(strata, axis=0) >= -1e-9)

    def test_hard_mode_unavailable_runs_null(self):
        mdp, cost = chain2()
        aug, _ = augment_mdp(mdp, cost, BudgetSpec(1, mode="hard"))
        i = augmented_index(2, 0, 0)
        np.testing.assert_array_equal(aug.transition[1, i], aug.transition[NULL, i])

    def test_initial_on_full_budget(self):
        mdp, cost = chain2()
        aug, _ = augment_mdp(mdp, cost, BudgetSpec(2))
        assert aug.initial[augmented_index(2, 0, 2)] == 0.5 and aug.initial[:6].sum() == 0

    def test_charge_by_cost(self):
        mdp, _ = chain2()
        aug, _ = augment_mdp(mdp, CostSpec.fixed(2.5), BudgetSpec(4, charge="cost"))
        i = augmented_index(2, 0, 4)
        assert aug.transition[1, i, augmented_index(2, 1, 1)] == 1.0

    def test_product_size(self):
        mdp, cost = random_mdp(0, 2000, 1)
        with pytest.raises(ProductSizeError) as exc:
            augment_mdp(mdp, cost, BudgetSpec(5))
        assert exc.value.n_states == 7 * 2000

    @given(st.integers(1, 50), st.integers(0, 20), st.data())
    def test_index_round_trip(self, n, budget, data):
        s = data.draw(st.integers(0, n - 1))
        z = data.draw(st.integers(-1, budget))
        assert split_index(n, augmented_index(n, s, z)) == (s, z)

    @pytest.mark.parametrize("bad", [dict(n=-1), dict(n=1, mode="strict"), dict(n=1, delta=0.0),
                                     dict(n=1, charge=0)])
    def test_spec_validation(self, bad):
        with pytest.raises(ValueError):
            BudgetSpec(**bad)


class TestAugmentEnv:
    def test_slack_budget_matches_unwrapped(self):
        mdp, cost = make_chain("chain(4)")
        policy = lambda s: 1 if s % 2 else NULL  # noqa: E731
        base = rollout(TabularEnv(mdp, cost), lambda s: policy(s), 20, 10, rngmod.stream(0, "r"))
        env = augment_env(TabularEnv(mdp, cost), BudgetSpec(10))
        wrapped = rollout(env, lambda i: policy(i % 4), 20, 10, rngmod.stream(0, "r"))
        assert np.array_equal(base.returns, wrapped.returns)

    def test_never_policy_identical(self):
        mdp, cost = random_mdp(2, 5, 2)
        a = rollout(TabularEnv(mdp, cost), lambda s: NULL, 30, 10, rngmod.stream(1, "r"))
        b = rollout(augment_env(TabularEnv(mdp, cost), BudgetSpec(10)), lambda s: NULL, 30, 10,
                    rngmod.stream(1, "r"))
        assert np.array_equal(a.returns, b.returns) and np.array_equal(a.lengths, b.lengths)

    def test_soft_overdraft_pays_delta(self):
        mdp, cost = chain2()
        env = augment_env(TabularEnv(mdp, cost), BudgetSpec(3), delta=50.0)
        env.reset(rngmod.stream(0, "r"))
        rewards = [env.step(1).reward for _ in range(10)]
        assert rewards[4:] == [-50.0] * 6
        assert all(r != -50.0 for r in rewards[:4])

    def test_hard_mask(self):
        mdp, cost = chain2()
        env = augment_env(TabularEnv(mdp, cost), BudgetSpec(2, mode="hard"))
        env.reset(rngmod.stream(0, "r"))
        steps = [env.step(1) for _ in range(6)]
        assert sum(s.intervened for s in steps) == 2 and steps[-1].info["z"] == 0

    def test_auto_delta_needs_bound(self):
        class Bare:
            n_actions, n_states, gamma = 1, None, 0.9

        with pytest.raises(ValueError):
            augment_env(Bare(), BudgetSpec(1))

    def test_non_integer_observations(self):
        from licra.envs.lane import LaneEnv

        env = augment_env(LaneEnv(), BudgetSpec(1), delta=5.0)
        obs = env.reset(rngmod.stream(0, "r"))
        assert isinstance(obs, tuple) and obs[1] == 1


class TestSatisfaction:
    def setup_method(self):
        mdp, cost = make_chain("chain(4)")
        self.mdp, self.cost = mdp, cost

    def env(self, n, mode="soft"):
        return augment_env(TabularEnv(self.mdp, self.cost), BudgetSpec(n, mode=mode))

    def test_never(self):
        assert check_budget_satisfaction(lambda s: NULL, self.env(1), 1, 200, 20, rngmod.stream(0, "s")) == 0.0

    def test_always(self):
        assert check_budget_satisfaction(lambda s: 1, self.env(2), 2, 200, 20, rngmod.stream(0, "s")) == 1.0

    def test_always_under_hard_mask(self):
        assert check_budget_satisfaction(lambda s: 1, self.env(2, "hard"), 2, 200, 20,
                                         rngmod.stream(0, "s")) == 0.0

    def test_exact_policy(self):
        aug, acost = augment_mdp(self.mdp, self.cost, BudgetSpec(2))
        _, pol = solve(aug, acost)
        assert check_budget_satisfaction(pol, self.env(2), 2, 2000, 30, rngmod.stream(0, "s")) == 0.0
