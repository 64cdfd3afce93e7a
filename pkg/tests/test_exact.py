import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import single_state
from licra import rng as rngmod
from licra.envs.instances import SUITE, chain2, make_chain, random_mdp
from licra.exact import (
    ImpulsePolicy,
    NonConvergenceError,
    bellman_apply,
    classical_value_iteration,
    evaluate_policy,
    extract_policy,
    intervention_operator,
    never_intervene_threshold,
    occupancy,
    policy_from_blocks,
    policy_to_blocks,
    value_iteration,
)
from licra.mdp import NULL, CostSpec, TabularMdp
from licra.verify import random_cost, random_instance


class TestInterventionOperator:
    def test_no_discount(self):
        mdp = single_state(reward_act=1.0, gamma=0.0)
        assert intervention_operator(mdp, CostSpec.fixed(0.5), np.array([123.0]), 0, 1) == 0.5

    def test_absorbing(self, frozen):
        mdp = single_state(reward_null=0.0, reward_act=0.0, gamma=0.9)
        got = intervention_operator(mdp, CostSpec.fixed(1.0), np.array([10.0]), 0, 1)
        assert got == frozen["intervention_operator_absorbing"]

    def test_hand_dot_product(self):
        mdp, cost = random_mdp(7, 3, 2)
        v = rngmod.stream(0, "v").normal(size=3)
        for s in range(3):
            for a in (1, 2):
                by_hand = mdp.reward[a, s] - cost.kappa + mdp.gamma * sum(
                    mdp.transition[a, s, t] * v[t] for t in range(3))
                assert abs(intervention_operator(mdp, cost, v, s, a) - by_hand) < 1e-12

    def test_null_rejected(self):
        mdp, cost = chain2()
        with pytest.raises(ValueError):
            intervention_operator(mdp, cost, np.zeros(2), 0, NULL)


class TestBellman:
    def test_expensive_cost_equals_null_operator(self):
        mdp, _ = random_mdp(3, 5, 2)
        cost = CostSpec.fixed(never_intervene_threshold(mdp) * 1.01)
        v = rngmod.stream(1, "v").uniform(-1, 1, 5) / (1 - mdp.gamma)
        null_only = mdp.reward[NULL] + mdp.gamma * mdp.transition[NULL] @ v
        assert np.max(np.abs(bellman_apply(mdp, cost, v) - null_only)) < 1e-12

    def test_zero_cost_is_classical_max(self):
        mdp, _ = random_mdp(4, 6, 3)
        v = rngmod.stream(2, "v").normal(size=6)
        classical = np.max(mdp.reward + mdp.gamma * mdp.transition @ v, axis=0)
        assert np.max(np.abs(bellman_apply(mdp, CostSpec.zero(), v) - classical)) < 1e-12

    def test_fixed_point(self):
        mdp, cost = chain2()
        v = value_iteration(mdp, cost, tol=1e-13).values
        assert np.max(np.abs(bellman_apply(mdp, cost, v) - v)) < 1e-10

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_contraction(self, seed):
        mdp, cost = random_instance(seed)
        g = rngmod.stream(seed, "pair")
        scale = 1.0 / (1.0 - mdp.gamma)
        v, w = g.uniform(-scale, scale, (2, mdp.n_states))
        lhs = np.max(np.abs(bellman_apply(mdp, cost, v) - bellman_apply(mdp, cost, w)))
        assert lhs <= mdp.gamma * np.max(np.abs(v - w)) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone(self, seed):
        mdp, cost = random_instance(seed)
        v = rngmod.stream(seed, "v").normal(size=mdp.n_states)
        w = v + rngmod.stream(seed, "w").uniform(0, 1, mdp.n_states)
        assert np.all(bellman_apply(mdp, cost, w) >= bellman_apply(mdp, cost, v) - 1e-12)


class TestValueIteration:
    def test_geometric_series(self, frozen):
        mdp = single_state(reward_null=1.0, reward_act=0.0, gamma=0.5)
        res = value_iteration(mdp, CostSpec.fixed(1.0), tol=1e-14)
        assert abs(res.values[0] - frozen["one_state_value"]) < 1e-12

    def test_chain2_hand_solution(self, frozen):
        mdp, cost = chain2()
        v = value_iteration(mdp, cost, tol=1e-12).values
        np.testing.assert_allclose(v, frozen["chain2_values"], atol=1e-9)

    def test_residual_ratios(self):
        mdp, cost = make_chain("chain(4)")
        r = np.array(value_iteration(mdp, cost, tol=1e-9).residuals)
        assert np.all(r[1:] <= (mdp.gamma + 1e-12) * r[:-1] + 1e-15)

    def test_non_convergence(self):
        mdp, cost = chain2(gamma=0.999)
        with pytest.raises(NonConvergenceError) as exc:
            value_iteration(mdp, cost, tol=1e-12, max_iters=10)
        assert exc.value.iterations == 10 and exc.value.residual > 0

    @pytest.mark.parametrize("name", SUITE)
    def test_matches_classical_without_cost(self, name):
        mdp, _ = make_chain(name)
        a = value_iteration(mdp, CostSpec.zero(), tol=1e-13).values
        b = classical_value_iteration(mdp, CostSpec.zero(), tol=1e-13)
        assert np.max(np.abs(a - b)) < 1e-10


class TestPolicy:
    def test_chain2(self, frozen):
        mdp, cost = chain2()
        pol = extract_policy(mdp, cost, value_iteration(mdp, cost).values)
        assert pol.intervene.tolist() == frozen["chain2_intervene"]
        assert pol(0) == 1 and pol(1) == NULL

    def test_dominating_cost(self):
        mdp, _ = random_mdp(9, 8, 3)
        cost = CostSpec.fixed(never_intervene_threshold(mdp) + 1e-6)
        assert not extract_policy(mdp, cost, value_iteration(mdp, cost).values).intervene.any()

    def test_null_dominated_without_cost(self):
        # the null action wastes a step at reward -1; the intervention pays 1
        P = np.ones((2, 3, 3)) / 3
        R = np.vstack([-np.ones(3), np.ones(3)])
        mdp = TabularMdp(P, R, 0.8)
        pol = extract_policy(mdp, CostSpec.zero(), value_iteration(mdp, CostSpec.zero()).values)
        assert pol.intervene.all()

    def test_tie_goes_to_null(self):
        # both branches identical and free: intervening gains exactly nothing
        P = np.ones((3, 1, 1))
        mdp = TabularMdp(P, np.ones((3, 1)), 0.5)
        pol = extract_policy(mdp, CostSpec.zero(), value_iteration(mdp, CostSpec.zero()).values)
        assert not pol.intervene[0] and pol.action[0] == 1

    def test_lowest_intervention_wins_ties(self):
        P = np.ones((3, 1, 1))
        mdp = TabularMdp(P, np.array([[0.0], [1.0], [1.0]]), 0.5)
        pol = extract_policy(mdp, CostSpec.zero(), value_iteration(mdp, CostSpec.zero()).values)
        assert pol.intervene[0] and pol.action[0] == 1

    def test_blocks_round_trip(self):
        pol = ImpulsePolicy(np.array([True, False, True]), np.array([2, 1, 1]))
        back = policy_from_blocks(policy_to_blocks(pol))
        assert back.same_as(pol)


class TestEvaluate:
    def test_never_policy_is_null_system(self):
        mdp, cost = random_mdp(5, 4, 2)
        v = evaluate_policy(mdp, cost, ImpulsePolicy.never(4))
        expected = np.linalg.solve(np.eye(4) - mdp.gamma * mdp.transition[NULL], mdp.reward[NULL])
        assert np.max(np.abs(v - expected)) < 1e-12

    @pytest.mark.parametrize("name", SUITE)
    def test_optimal_policy_value(self, name):
        mdp, cost = make_chain(name)
        v = value_iteration(mdp, cost, tol=1e-12).values
        pol = extract_policy(mdp, cost, v)
        assert np.max(np.abs(evaluate_policy(mdp, cost, pol) - v)) < 1e-8

    def test_monte_carlo(self):
        # discounted returns from state 0, with the horizon cut where gamma^t is negligible
        mdp, cost = random_mdp(12, 4, 2, gamma=0.7)
        g = rngmod.stream(3, "policy")
        pol = ImpulsePolicy(g.random(4) < 0.5, g.integers(1, 3, 4))
        exact = evaluate_policy(mdp, cost, pol)[0]
        act = pol.executed()
        eff = mdp.reward - cost.table(mdp)
        cdf = np.cumsum(mdp.transition, axis=2)
        episodes, horizon = 40_000, 60
        sim = rngmod.stream(4, "mc")
        s = np.zeros(episodes, dtype=np.int64)
        total = np.zeros(episodes)
        for t in range(horizon):
            b = act[s]
            total += mdp.gamma ** t * eff[b, s]
            u = sim.random(episodes)
            s = np.minimum((u[:, None] >= cdf[b, s]).sum(axis=1), 3)
        se = total.std(ddof=1) / np.sqrt(episodes)
        assert abs(total.mean() - exact) < 3 * se + mdp.gamma ** horizon * 10


def test_occupancy_counts_steps():
    mdp, cost = chain2()
    occ = occupancy(mdp, ImpulsePolicy.never(2), 7)
    assert occ.sum() == pytest.approx(7.0)


def test_random_cost_forms_are_minimally_bounded():
    g = rngmod.stream(0, "costs")
    forms = {random_cost(g, 5).form for _ in range(200)}
    assert len(forms) >= 4
