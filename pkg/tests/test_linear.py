import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from licra import rng as rngmod
from licra.envs.base import TabularEnv
from licra.envs.instances import chain2, make_chain, random_mdp
from licra.exact import optimal_q, value_iteration
from licra.linear import (
    DivergenceError,
    FeatureMap,
    RankDeficientError,
    WeightVector,
    aggregation,
    fa_update,
    mean_update,
    one_hot,
    polynomial,
    projected_fixed_point,
    q_hat,
    radial,
    train_fa,
    verify_error_bound,
    weights_from_blocks,
    weights_to_blocks,
)
from licra.mdp import NULL, CostSpec, TransitionSample
from licra.qlearn import LearnSchedule, QTable, q_update_sampled, train

SCHED = LearnSchedule()
EXPLORE = LearnSchedule(epsilon0=1.0, epsilon_min=1.0)


class TestQHat:
    def test_zero_weights(self):
        f = radial([[0.0], [1.0]], 0.5, 3)
        assert all(q_hat(f, np.zeros(f.dim), 0.3, b) == 0.0 for b in range(3))

    def test_one_hot_is_lookup(self):
        f = one_hot(4, 3)
        r = np.arange(12.0)
        assert all(q_hat(f, r, s, b) == r[s * 3 + b] for s in range(4) for b in range(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_dot_product(self, seed):
        g = rngmod.stream(seed, "fa")
        f = polynomial(2, 2)
        r = g.normal(size=f.dim)
        x = float(g.uniform(-2, 2))
        by_hand = sum(r[b * 3 + i] * x ** i for i in range(3) for b in (1,))
        assert abs(q_hat(f, r, x, 1) - by_hand) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            q_hat(one_hot(2, 2), np.zeros(3), 0, 0)


class TestUpdate:
    def test_one_hot_matches_tabular(self):
        g = rngmod.stream(0, "upd")
        f = one_hot(3, 3)
        q = QTable.zeros(3, 2)
        r = WeightVector(np.zeros(9))
        for _ in range(200):
            s, b, s2 = int(g.integers(3)), int(g.integers(3)), int(g.integers(3))
            smp = TransitionSample(s, b, float(g.normal()), 0.3 if b else 0.0, s2, b != NULL)
            visits = q.n_null[s] if b == NULL else q.n_act[s, b - 1]
            step = SCHED.alpha(visits)
            q_update_sampled(q, smp, SCHED, 0.9)
            r = fa_update(r, f, smp, 0.9, step)
            assert np.max(np.abs(r.r.reshape(3, 3) - q.branches().T)) < 1e-12

    def test_zero_step(self):
        r = WeightVector(np.array([1.0, -2.0, 0.5, 4.0]))
        out = fa_update(r, one_hot(2, 2), TransitionSample(0, 1, 1.0, 0.2, 1, True), 0.9, 0.0)
        assert np.array_equal(out.r, r.r) and out.steps == 1

    def test_input_untouched(self):
        r = WeightVector(np.zeros(4))
        fa_update(r, one_hot(2, 2), TransitionSample(0, 1, 1.0, 0.2, 1, True), 0.9, 0.5)
        assert not r.r.any()

    def test_mean_update_vanishes_at_fixed_point(self):
        mdp, cost = random_mdp(101, 6, 2)
        f = aggregation([0, 0, 1, 1, 2, 2], 3)
        phi = f.matrix(6)
        D = rngmod.stream(1, "D").dirichlet(np.ones(18))
        r_star = projected_fixed_point(mdp, cost, phi, D)
        assert np.max(np.abs(mean_update(r_star, phi, mdp, cost, D))) < 1e-10

    def test_mean_update_monte_carlo(self):
        # sampled pairs from D with sampled next states average to the exact mean update
        mdp, cost = random_mdp(102, 6, 2)
        f = aggregation([0, 1, 1, 2, 2, 2], 3)
        phi = f.matrix(6)
        D = np.full(18, 1 / 18)
        r_star = projected_fixed_point(mdp, cost, phi, D)
        g = rngmod.stream(2, "mc")
        n = 200_000
        z = g.integers(0, 18, n)
        s, b = z // 3, z % 3
        cdf = np.cumsum(mdp.transition, axis=2)
        s2 = np.minimum((g.random(n)[:, None] >= cdf[b, s]).sum(axis=1), 5)
        q = (phi @ r_star).reshape(6, 3)
        td = (mdp.reward - cost.table(mdp))[b, s] + mdp.gamma * q.max(axis=1)[s2] - q[s, b]
        est = (phi[z] * td[:, None]).mean(axis=0)
        se = (phi[z] * td[:, None]).std(axis=0) / math.sqrt(n)
        assert np.all(np.abs(est) < 4 * se + 1e-12)


class TestTrainFA:
    def test_one_hot_chain2(self, frozen):
        mdp, cost = chain2()
        res = train_fa(mdp, cost, one_hot(2, 2), SCHED, 200_000, 0, horizon=200, step_rule="visits")
        v = res.weights.r.reshape(2, 2).max(axis=1)
        assert np.max(np.abs(v - frozen["chain2_values"])) < 0.05

    def test_one_hot_bitwise_tabular(self):
        mdp, cost = make_chain("chain(4)")
        tab = train(mdp, cost, SCHED, 100, 50, 4)
        fa = train_fa(mdp, cost, one_hot(4, 2), SCHED, 5000, 4, horizon=50, step_rule="visits")
        assert np.array_equal(fa.weights.r.reshape(4, 2), tab.q.branches().T)

    def test_aggregation_converges_to_fixed_point(self):
        mdp, cost = random_mdp(104, 6, 2)
        f = aggregation([0, 0, 1, 1, 2, 2], 3)
        res = train_fa(mdp, cost, f, EXPLORE, 400_000, 1, horizon=200, step_rule="features")
        assert np.all(np.isfinite(res.weights.r))
        r_fp = projected_fixed_point(mdp, cost, f.matrix(6), res.sampling_distribution())
        assert np.max(np.abs(res.weights.r - r_fp)) < 0.1

    def test_zero_steps(self):
        mdp, cost = chain2()
        r0 = np.array([1.0, 2.0, 3.0, 4.0])
        res = train_fa(mdp, cost, one_hot(2, 2), SCHED, 0, 0, r0=r0)
        assert np.array_equal(res.weights.r, r0)

    def test_divergence(self):
        mdp, cost = chain2()
        with pytest.raises(DivergenceError):
            train_fa(mdp, cost, one_hot(2, 2), SCHED, 10_000, 0, bound=1.0)

    def test_features_rule_needs_indicators(self):
        mdp, cost = chain2()
        with pytest.raises(ValueError, match="indicator"):
            train_fa(mdp, cost, radial([[0.0], [1.0]], 0.5, 2), SCHED, 100, 0, step_rule="features")

    def test_env_path_matches_compiled(self):
        mdp, cost = random_mdp(3, 4, 2)
        f = one_hot(4, 3)
        a = train_fa(mdp, cost, f, SCHED, 2000, 5, horizon=40, step_rule="visits")
        b = train_fa(TabularEnv(mdp, cost), None, f, SCHED, 2000, 5, horizon=40, step_rule="visits")
        assert np.allclose(a.weights.r, b.weights.r, atol=1e-12)

    def test_blocks_round_trip(self):
        f = aggregation([0, 1, 1], 2)
        w = WeightVector(np.array([0.1, -3.5, 2e-8, 7.0]), 12)
        back = weights_from_blocks(weights_to_blocks(w, f))
        assert np.array_equal(back.r, w.r) and back.steps == 12


class TestBound:
    def test_representable(self):
        mdp, cost = random_mdp(5, 5, 2)
        q_star = optimal_q(mdp, cost, tol=1e-13).T.reshape(-1)
        chk = verify_error_bound(mdp, cost, one_hot(5, 3), q_star, np.full(15, 1 / 15))
        assert chk.rhs < 1e-12 and chk.lhs <= 1e-8 and chk.holds

    def test_coarse_chain2(self):
        mdp, cost = chain2()
        f = aggregation([0, 0], 2)
        res = train_fa(mdp, cost, f, EXPLORE, 200_000, 0, horizon=200, step_rule="features")
        chk = verify_error_bound(mdp, cost, f, res.weights, res.sampling_distribution())
        assert chk.holds and chk.lhs < chk.rhs

    def test_no_discount_factor_is_one(self):
        mdp, cost = random_mdp(6, 4, 1, gamma=0.0)
        f = aggregation([0, 0, 1, 1], 2)
        D = np.full(8, 1 / 8)
        r = projected_fixed_point(mdp, cost, f.matrix(4), D)
        chk = verify_error_bound(mdp, cost, f, r, D)
        assert chk.rhs == pytest.approx(chk.projection_error) and chk.holds

    def test_rank_deficient(self):
        mdp, cost = chain2()
        twice = FeatureMap(2, 2, lambda s, b: np.array([1.0, 1.0]), ("a", "b"), "custom")
        with pytest.raises(RankDeficientError):
            verify_error_bound(mdp, cost, twice, np.zeros(2), np.full(4, 0.25))

    def test_nonpositive_weights(self):
        mdp, cost = chain2()
        with pytest.raises(ValueError):
            verify_error_bound(mdp, cost, one_hot(2, 2), np.zeros(4), np.array([0.5, 0.5, 0.0, 0.0]))


def test_value_iteration_consistent_with_pairs():
    mdp, cost = random_mdp(7, 5, 2)
    v = value_iteration(mdp, cost).values
    q = optimal_q(mdp, cost, v)
    assert np.max(np.abs(q.max(axis=0) - v)) < 1e-9
