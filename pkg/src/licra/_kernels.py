"""Compiled inner loops for the tabular and linear learners.

The helpers ``choose_branch``, ``choose_flat`` and ``tabular_update`` are the only
implementations of those rules: the Python environment loops call them too.

Random numbers are pre-drawn by the caller: per step two agent uniforms
(explore?, which?) and one environment uniform, plus one environment uniform per
episode start.
"""

from __future__ import annotations

import numpy as np
from numba import njit

EXPLORE_UNIFORM = 0
EXPLORE_BRANCH = 1

OK = 0
DIVERGED = 1


@njit(cache=True)
def choose_branch(q_null_s, q_act_row, eps, u1, u2, explore_mode, allow, tie):
    m = q_act_row.shape[0]
    if not allow:
        return 0
    if u1 < eps:
        if explore_mode == EXPLORE_UNIFORM:
            return min(int(u2 * (m + 1)), m)
        if u2 < 0.5:
            return 0
        return min(1 + int((u2 - 0.5) * 2.0 * m), m)
    best = 0
    best_v = q_act_row[0]
    for a in range(1, m):
        if q_act_row[a] > best_v:
            best = a
            best_v = q_act_row[a]
    if q_null_s >= best_v - tie:
        return 0
    return best + 1


@njit(cache=True)
def choose_flat(q_row, eps, u1, u2):
    n_b = q_row.shape[0]
    if u1 < eps:
        return min(int(u2 * n_b), n_b - 1)
    best = 0
    for b in range(1, n_b):
        if q_row[b] > q_row[best]:
            best = b
    return best


@njit(cache=True)
def state_value(q_act, q_null, s):
    v = q_null[s]
    for a in range(q_act.shape[1]):
        if q_act[s, a] > v:
            v = q_act[s, a]
    return v


@njit(cache=True)
def tabular_update(q_act, q_null, n_act, n_null, s, b, reward, cost, s2, terminal, gamma, alpha0, omega):
    boot = 0.0 if terminal else state_value(q_act, q_null, s2)
    target = reward - cost + gamma * boot
    if b == 0:
        alpha = alpha0 / (1.0 + n_null[s]) ** omega
        n_null[s] += 1
        td = target - q_null[s]
        q_null[s] = q_null[s] + alpha * td
    else:
        alpha = alpha0 / (1.0 + n_act[s, b - 1]) ** omega
        n_act[s, b - 1] += 1
        td = target - q_act[s, b - 1]
        q_act[s, b - 1] = q_act[s, b - 1] + alpha * td
    return td


@njit(cache=True)
def flat_update(q, n, s, b, reward, cost, s2, terminal, gamma, alpha0, omega):
    boot = 0.0
    if not terminal:
        boot = q[s2, 0]
        for j in range(1, q.shape[1]):
            if q[s2, j] > boot:
                boot = q[s2, j]
    target = reward - cost + gamma * boot
    alpha = alpha0 / (1.0 + n[s, b]) ** omega
    n[s, b] += 1
    td = target - q[s, b]
    q[s, b] = q[s, b] + alpha * td
    return td


@njit(cache=True)
def draw(cdf_row, u):
    for j in range(cdf_row.shape[0]):
        if u < cdf_row[j]:
            return j
    return cdf_row.shape[0] - 1


@njit(cache=True)
def run_licra(cdf, init_cdf, reward, cost, gamma, horizon, agent_u, env_u, eps, alpha0, omega, explore_mode, tie,
              q_act, q_null, n_act, n_null, oracle, returns, interventions, sup_norm):
    n_ep = agent_u.shape[0]
    n_s = q_null.shape[0]
    for ep in range(n_ep):
        s = draw(init_cdf, env_u[ep, 0])
        total = 0.0
        count = 0
        for t in range(horizon):
            b = choose_branch(q_null[s], q_act[s], eps[ep], agent_u[ep, t, 0], agent_u[ep, t, 1],
                              explore_mode, True, tie)
            s2 = draw(cdf[b, s], env_u[ep, t + 1])
            r = reward[b, s]
            c = cost[b, s]
            tabular_update(q_act, q_null, n_act, n_null, s, b, r, c, s2, False, gamma, alpha0, omega)
            total += r - c
            if b != 0:
                count += 1
            s = s2
        returns[ep] = total
        interventions[ep] = count
        if oracle.shape[0] == n_s:
            gap = 0.0
            for i in range(n_s):
                d = abs(state_value(q_act, q_null, i) - oracle[i])
                if d > gap:
                    gap = d
            sup_norm[ep] = gap


@njit(cache=True)
def run_flat(cdf, init_cdf, reward, cost, gamma, horizon, agent_u, env_u, eps, alpha0, omega,
             q, n, oracle, returns, interventions, sup_norm):
    n_ep = agent_u.shape[0]
    n_s = q.shape[0]
    for ep in range(n_ep):
        s = draw(init_cdf, env_u[ep, 0])
        total = 0.0
        count = 0
        for t in range(horizon):
            b = choose_flat(q[s], eps[ep], agent_u[ep, t, 0], agent_u[ep, t, 1])
            s2 = draw(cdf[b, s], env_u[ep, t + 1])
            r = reward[b, s]
            c = cost[b, s]
            flat_update(q, n, s, b, r, c, s2, False, gamma, alpha0, omega)
            total += r - c
            if b != 0:
                count += 1
            s = s2
        returns[ep] = total
        interventions[ep] = count
        if oracle.shape[0] == n_s:
            gap = 0.0
            for i in range(n_s):
                v = q[i, 0]
                for j in range(1, q.shape[1]):
                    if q[i, j] > v:
                        v = q[i, j]
                d = abs(v - oracle[i])
                if d > gap:
                    gap = d
            sup_norm[ep] = gap


@njit(cache=True)
def linear_value(phi, r, z):
    acc = 0.0
    for j in range(r.shape[0]):
        acc += phi[z, j] * r[j]
    return acc


@njit(cache=True)
def fa_branch_values(phi, r, s, n_b, out):
    for b in range(n_b):
        out[b] = linear_value(phi, r, s * n_b + b)


@njit(cache=True)
def fa_step(phi, r, z, target, step):
    td = target - linear_value(phi, r, z)
    g = step * td
    for j in range(r.shape[0]):
        r[j] = r[j] + g * phi[z, j]
    return td


@njit(cache=True)
def run_fa(cdf, init_cdf, reward, cost, gamma, horizon, n_steps, agent_u, env_u, eps, alpha0, omega, explore_mode,
           tie, step_rule, phi, r, visits, fvisits, t0, bound, oracle, returns, interventions, td_abs, sup_norm):
    n_ep = agent_u.shape[0]
    n_b = cost.shape[0]
    n_s = cost.shape[1]
    qb = np.empty(n_b)
    qn = np.empty(n_b)
    t_global = t0
    for ep in range(n_ep):
        s = draw(init_cdf, env_u[ep, 0])
        total = 0.0
        count = 0
        err = 0.0
        steps_here = 0
        for t in range(horizon):
            if t_global >= n_steps:
                break
            fa_branch_values(phi, r, s, n_b, qb)
            b = choose_branch(qb[0], qb[1:], eps[ep], agent_u[ep, t, 0], agent_u[ep, t, 1], explore_mode, True, tie)
            s2 = draw(cdf[b, s], env_u[ep, t + 1])
            rew = reward[b, s]
            c = cost[b, s]
            fa_branch_values(phi, r, s2, n_b, qn)
            boot = qn[0]
            for j in range(1, n_b):
                if qn[j] > boot:
                    boot = qn[j]
            z = s * n_b + b
            if step_rule == 1:
                step = alpha0 / (1.0 + visits[z]) ** omega
            elif step_rule == 2:
                active = 0
                for j in range(1, r.shape[0]):
                    if abs(phi[z, j]) > abs(phi[z, active]):
                        active = j
                step = alpha0 / (1.0 + fvisits[active]) ** omega
                fvisits[active] += 1
            else:
                step = alpha0 / (1.0 + t_global) ** omega
            visits[z] += 1
            td = fa_step(phi, r, z, rew - c + gamma * boot, step)
            for j in range(r.shape[0]):
                if not abs(r[j]) <= bound:
                    return DIVERGED, t_global
            err += abs(td)
            total += rew - c
            if b != 0:
                count += 1
            s = s2
            t_global += 1
            steps_here += 1
        returns[ep] = total
        interventions[ep] = count
        td_abs[ep] = err / max(steps_here, 1)
        if oracle.shape[0] == n_s:
            gap = 0.0
            for i in range(n_s):
                fa_branch_values(phi, r, i, n_b, qb)
                v = qb[0]
                for j in range(1, n_b):
                    if qb[j] > v:
                        v = qb[j]
                d = abs(v - oracle[i])
                if d > gap:
                    gap = d
            sup_norm[ep] = gap
    return OK, t_global
