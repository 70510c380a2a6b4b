"""Hot loops: trajectory sampling, TD critics, online actor-critic, traffic.

Every kernel takes its random numbers as pre-drawn arrays so the compiled
and interpreted paths consume identical inputs.  Nothing here touches a
random generator.
"""
import math

import numpy as np

from ._jit import njit

MODE_LAGRANGE = 0
MODE_NEUTRAL = 1
MODE_SHARPE = 2


@njit
def sample_index(cum, u):
    """Smallest k with u < cum[k]; the last index absorbs round-off."""
    n = cum.shape[0]
    for k in range(n - 1):
        if u < cum[k]:
            return k
    return n - 1


@njit
def softmax_into(logits, out):
    m = logits[0]
    for k in range(1, logits.shape[0]):
        if logits[k] > m:
            m = logits[k]
    s = 0.0
    for k in range(logits.shape[0]):
        out[k] = math.exp(logits[k] - m)
        s += out[k]
    for k in range(logits.shape[0]):
        out[k] /= s


@njit
def sample_path(p_cum, r_mean, noise_scale, probs_cum, x0, u_act, u_next, eps):
    """Roll a fixed tabular policy forward for ``len(u_act)`` steps."""
    m = u_act.shape[0]
    states = np.empty(m, np.int64)
    actions = np.empty(m, np.int64)
    rewards = np.empty(m)
    nexts = np.empty(m, np.int64)
    x = x0
    for i in range(m):
        a = sample_index(probs_cum[x], u_act[i])
        y = sample_index(p_cum[x, a], u_next[i])
        states[i] = x
        actions[i] = a
        rewards[i] = r_mean[x, a] + noise_scale[x, a] * eps[i]
        nexts[i] = y
        x = y
    return states, actions, rewards, nexts


@njit
def td_discounted_pass(states, rewards, nexts, phi_v, phi_u, v, u, gamma,
                       z_scale, z_power, step0):
    """Discounted TD(0) for value and square value, updating v, u in place.

    The m-th transition (0-based) uses step z_scale * (step0 + m + 1)**-z_power.
    Both TD errors are formed from the pre-update weights.
    """
    k2 = v.shape[0]
    k3 = u.shape[0]
    g2 = gamma * gamma
    for i in range(states.shape[0]):
        x = states[i]
        y = nexts[i]
        r = rewards[i]
        vx = 0.0
        vy = 0.0
        for j in range(k2):
            vx += v[j] * phi_v[x, j]
            vy += v[j] * phi_v[y, j]
        ux = 0.0
        uy = 0.0
        for j in range(k3):
            ux += u[j] * phi_u[x, j]
            uy += u[j] * phi_u[y, j]
        delta = r + gamma * vy - vx
        eps = r * r + 2.0 * gamma * r * vy + g2 * uy - ux
        z = z_scale * (step0 + i + 1.0) ** (-z_power)
        for j in range(k2):
            v[j] += z * delta * phi_v[x, j]
        for j in range(k3):
            u[j] += z * eps * phi_u[x, j]
    return step0 + states.shape[0]


@njit
def discounted_returns(rewards, gamma):
    """Discounted sum of each row of a 2-d reward array (Horner scheme)."""
    n, m = rewards.shape
    out = np.empty(n)
    for e in range(n):
        acc = 0.0
        for i in range(m - 1, -1, -1):
            acc = rewards[e, i] + gamma * acc
        out[e] = acc
    return out


@njit
def _clip(val, lo, hi):
    if val < lo:
        return lo
    if val > hi:
        return hi
    return val


@njit
def average_ac_loop(p_cum, r_mean, noise_scale, feats, phi_v, phi_u, x0,
                    theta, lam, v, u, rho, eta,
                    sched, k_avg, mode, alpha, box_lo, box_hi, lam_max, eps_var,
                    u_act, u_next, eps, n0, record_every):
    """Online average-reward actor-critic on a tabular MDP.

    ``sched`` is a (3, 2) array of (scale, power) rows for the lambda, actor
    and critic steps.  ``theta``, ``v``, ``u`` are updated in place.  Returns
    the recorded history and the final (state, lambda, rho, eta).
    """
    n_steps = u_act.shape[0]
    n_act = feats.shape[1]
    k1 = theta.shape[0]
    k2 = v.shape[0]
    k3 = u.shape[0]
    n_rec = n_steps // record_every
    hist = np.empty((n_rec, k1 + 4))
    logits = np.empty(n_act)
    probs = np.empty(n_act)
    mean_feat = np.empty(k1)
    x = x0
    rec = 0
    for i in range(n_steps):
        n = n0 + i + 1.0
        z1 = sched[0, 0] * n ** (-sched[0, 1])
        z2 = sched[1, 0] * n ** (-sched[1, 1])
        z3 = sched[2, 0] * n ** (-sched[2, 1])
        z4 = min(1.0, k_avg * z3)
        for a in range(n_act):
            s = 0.0
            for j in range(k1):
                s += theta[j] * feats[x, a, j]
            logits[a] = s
        softmax_into(logits, probs)
        c = 0.0
        a_sel = n_act - 1
        for a in range(n_act - 1):
            c += probs[a]
            if u_act[i] < c:
                a_sel = a
                break
        y = sample_index(p_cum[x, a_sel], u_next[i])
        r = r_mean[x, a_sel] + noise_scale[x, a_sel] * eps[i]

        rho = (1.0 - z4) * rho + z4 * r
        eta = (1.0 - z4) * eta + z4 * r * r
        vx = 0.0
        vy = 0.0
        for j in range(k2):
            vx += v[j] * phi_v[x, j]
            vy += v[j] * phi_v[y, j]
        ux = 0.0
        uy = 0.0
        for j in range(k3):
            ux += u[j] * phi_u[x, j]
            uy += u[j] * phi_u[y, j]
        delta = r - rho + vy - vx
        epsilon = r * r - eta + uy - ux
        for j in range(k2):
            v[j] += z3 * delta * phi_v[x, j]
        for j in range(k3):
            u[j] += z3 * epsilon * phi_u[x, j]

        for j in range(k1):
            s = 0.0
            for a in range(n_act):
                s += probs[a] * feats[x, a, j]
            mean_feat[j] = s
        var = eta - rho * rho
        if mode == MODE_LAGRANGE:
            coef = (1.0 + 2.0 * lam * rho) * delta - lam * epsilon
            step = True
        elif mode == MODE_NEUTRAL:
            coef = delta
            step = True
        else:
            step = var > eps_var
            coef = 0.0
            if step:
                coef = (delta - rho * (epsilon - 2.0 * rho * delta) / (2.0 * var)) / math.sqrt(var)
        if step:
            for j in range(k1):
                psi = feats[x, a_sel, j] - mean_feat[j]
                theta[j] = _clip(theta[j] + z2 * coef * psi, box_lo[j], box_hi[j])
        if mode == MODE_LAGRANGE:
            lam = _clip(lam + z1 * (var - alpha), 0.0, lam_max)
        x = y
        if (i + 1) % record_every == 0 and rec < n_rec:
            for j in range(k1):
                hist[rec, j] = theta[j]
            hist[rec, k1] = lam
            hist[rec, k1 + 1] = rho
            hist[rec, k1 + 2] = eta
            hist[rec, k1 + 3] = var
            rec += 1
    return hist, x, lam, rho, eta


# ---------------------------------------------------------------- traffic


@njit
def traffic_cost(q, t, priority, w):
    """Weighted queue / elapsed-time cost; ``w`` = (r1, s1, r2, s2)."""
    cq = 0.0
    ct = 0.0
    for i in range(q.shape[0]):
        lane_w = w[2] if priority[i] else w[3]
        cq += lane_w * q[i]
        ct += lane_w * t[i]
    return w[0] * cq + w[1] * ct


@njit
def traffic_transition(q, t, green, service, downstream, fwd_prob, u_fwd,
                       spawn, max_queue, priority, w):
    """One signal step.  Returns (q', t', cost, departed, spawned).

    Green lanes discharge up to ``service`` vehicles and reset their clock;
    red lanes with waiting vehicles age by one, empty red lanes keep a zero
    clock (nobody is delayed).  Cost is taken on the post-service state, before
    any vehicle enters.  Each discharged vehicle moves to ``downstream[i]``
    with probability ``fwd_prob[i]``, otherwise leaves the network.
    """
    n = q.shape[0]
    q2 = q.copy()
    t2 = t.copy()
    inflow = np.zeros(n, np.int64)
    departed = 0
    for i in range(n):
        if green[i]:
            k = min(q[i], service)
            q2[i] -= k
            t2[i] = 0
            for m in range(k):
                d = downstream[i]
                if d >= 0 and u_fwd[i, m] < fwd_prob[i]:
                    inflow[d] += 1
                else:
                    departed += 1
        elif q[i] > 0:
            t2[i] += 1
        else:
            t2[i] = 0
    cost = traffic_cost(q2, t2, priority, w)
    spawned = 0
    for i in range(n):
        spawned += spawn[i]
        q2[i] = min(q2[i] + inflow[i] + spawn[i], max_queue)
    return q2, t2, cost, departed, spawned


@njit
def bucket_of(val, thresholds):
    b = 0
    for k in range(thresholds.shape[0]):
        if val >= thresholds[k]:
            b = k + 1
    return b


@njit
def traffic_lane_buckets(q, t, q_thr, t_thr):
    n = q.shape[0]
    bq = np.empty(n, np.int64)
    bt = np.empty(n, np.int64)
    for i in range(n):
        bq[i] = bucket_of(q[i], q_thr)
        bt[i] = bucket_of(t[i], t_thr)
    return bq, bt


@njit
def traffic_policy_index(lane, bq, bt, a, n_bq, n_bt, n_cfg):
    return ((lane * n_bq + bq) * n_bt + bt) * n_cfg + a


@njit
def traffic_critic_features(bq, bt, n_bq, n_bt, out):
    """Per-lane indicators of the non-lowest queue and elapsed buckets."""
    width = (n_bq - 1) + (n_bt - 1)
    out[:] = 0.0
    for i in range(bq.shape[0]):
        if bq[i] > 0:
            out[i * width + bq[i] - 1] = 1.0
        if bt[i] > 0:
            out[i * width + (n_bq - 1) + bt[i] - 1] = 1.0


@njit
def traffic_logits(theta, bq, bt, n_bq, n_bt, n_cfg, out):
    for a in range(n_cfg):
        s = 0.0
        for i in range(bq.shape[0]):
            s += theta[traffic_policy_index(i, bq[i], bt[i], a, n_bq, n_bt, n_cfg)]
        out[a] = s


@njit
def traffic_ac_loop(configs, service, downstream, fwd_prob, max_queue, priority, w,
                    q_thr, t_thr, q, t, theta, lam, v, u, rho, eta,
                    sched, k_avg, mode, alpha, box_lo, box_hi, lam_max, eps_var,
                    u_act, u_fwd, spawns, n0, record_every):
    """Online average-reward actor-critic on the traffic network.

    Reward is the negative cost.  Mirrors :func:`average_ac_loop` with sparse
    policy features: the features of (x, a) are one-hot per lane over
    (queue bucket, elapsed bucket, config a).
    """
    n_steps = u_act.shape[0]
    n_cfg = configs.shape[0]
    n_bq = q_thr.shape[0] + 1
    n_bt = t_thr.shape[0] + 1
    n_lane = q.shape[0]
    k1 = theta.shape[0]
    k2 = v.shape[0]
    n_rec = n_steps // record_every
    hist = np.empty((n_rec, k1 + 4))
    costs = np.empty(n_steps)
    logits = np.empty(n_cfg)
    probs = np.empty(n_cfg)
    fx = np.empty(k2)
    fy = np.empty(k2)
    bq, bt = traffic_lane_buckets(q, t, q_thr, t_thr)
    traffic_critic_features(bq, bt, n_bq, n_bt, fx)
    rec = 0
    for i in range(n_steps):
        n = n0 + i + 1.0
        z1 = sched[0, 0] * n ** (-sched[0, 1])
        z2 = sched[1, 0] * n ** (-sched[1, 1])
        z3 = sched[2, 0] * n ** (-sched[2, 1])
        z4 = min(1.0, k_avg * z3)
        traffic_logits(theta, bq, bt, n_bq, n_bt, n_cfg, logits)
        softmax_into(logits, probs)
        c = 0.0
        a_sel = n_cfg - 1
        for a in range(n_cfg - 1):
            c += probs[a]
            if u_act[i] < c:
                a_sel = a
                break
        q, t, cost, _, _ = traffic_transition(q, t, configs[a_sel], service, downstream,
                                              fwd_prob, u_fwd[i], spawns[i], max_queue,
                                              priority, w)
        costs[i] = cost
        r = -cost
        bq2, bt2 = traffic_lane_buckets(q, t, q_thr, t_thr)
        traffic_critic_features(bq2, bt2, n_bq, n_bt, fy)

        rho = (1.0 - z4) * rho + z4 * r
        eta = (1.0 - z4) * eta + z4 * r * r
        vx = 0.0
        vy = 0.0
        ux = 0.0
        uy = 0.0
        for j in range(k2):
            vx += v[j] * fx[j]
            vy += v[j] * fy[j]
            ux += u[j] * fx[j]
            uy += u[j] * fy[j]
        delta = r - rho + vy - vx
        epsilon = r * r - eta + uy - ux
        for j in range(k2):
            v[j] += z3 * delta * fx[j]
            u[j] += z3 * epsilon * fx[j]

        var = eta - rho * rho
        if mode == MODE_LAGRANGE:
            coef = (1.0 + 2.0 * lam * rho) * delta - lam * epsilon
            step = True
        elif mode == MODE_NEUTRAL:
            coef = delta
            step = True
        else:
            step = var > eps_var
            coef = 0.0
            if step:
                coef = (delta - rho * (epsilon - 2.0 * rho * delta) / (2.0 * var)) / math.sqrt(var)
        if step:
            # psi is nonzero only on the active (lane, bucket) blocks
            for ln in range(n_lane):
                for a in range(n_cfg):
                    idx = traffic_policy_index(ln, bq[ln], bt[ln], a, n_bq, n_bt, n_cfg)
                    psi = (1.0 if a == a_sel else 0.0) - probs[a]
                    theta[idx] = _clip(theta[idx] + z2 * coef * psi, box_lo[idx], box_hi[idx])
        if mode == MODE_LAGRANGE:
            lam = _clip(lam + z1 * (var - alpha), 0.0, lam_max)
        bq = bq2
        bt = bt2
        for j in range(k2):
            fx[j] = fy[j]
        if (i + 1) % record_every == 0 and rec < n_rec:
            for j in range(k1):
                hist[rec, j] = theta[j]
            hist[rec, k1] = lam
            hist[rec, k1 + 1] = rho
            hist[rec, k1 + 2] = eta
            hist[rec, k1 + 3] = var
            rec += 1
    return hist, costs, q, t, lam, rho, eta


@njit
def traffic_rollout(configs, service, downstream, fwd_prob, max_queue, priority, w,
                    q_thr, t_thr, q, t, theta, u_act, u_fwd, spawns):
    """Frozen-policy rollout; returns per-step costs and queue totals."""
    n_steps = u_act.shape[0]
    n_cfg = configs.shape[0]
    n_bq = q_thr.shape[0] + 1
    n_bt = t_thr.shape[0] + 1
    logits = np.empty(n_cfg)
    probs = np.empty(n_cfg)
    costs = np.empty(n_steps)
    totals = np.empty(n_steps, np.int64)
    for i in range(n_steps):
        bq, bt = traffic_lane_buckets(q, t, q_thr, t_thr)
        traffic_logits(theta, bq, bt, n_bq, n_bt, n_cfg, logits)
        softmax_into(logits, probs)
        c = 0.0
        a_sel = n_cfg - 1
        for a in range(n_cfg - 1):
            c += probs[a]
            if u_act[i] < c:
                a_sel = a
                break
        q, t, cost, _, _ = traffic_transition(q, t, configs[a_sel], service, downstream,
                                              fwd_prob, u_fwd[i], spawns[i], max_queue,
                                              priority, w)
        costs[i] = cost
        totals[i] = q.sum()
    return costs, totals
