"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``CRITERION k PASS|FAIL`` line with the measured
numbers; a failing criterion fails its test.
"""
import time
from functools import lru_cache

import numpy as np
import pytest

from riskac.actor import ActorState, newton_step
from riskac.checks import analytic_gradcheck, estimator_bias, hessian_estimate, td_check
from riskac.cli import bundled
from riskac.critic import CriticFeatures
from riskac.driver import BASELINE, RunConfig, run
from riskac.instances import random_mdp, risky_safe_mdp
from riskac.mdp import BoltzmannPolicy, TabularMdp, tabular_policy_features
from riskac.oracle import (discounted_bellman_residuals, poisson_residuals, solve_average,
                           solve_discounted, td_fixed_point)
from riskac.traffic import TrafficSpec, TrafficState, grid_spec, traffic_cost

SEEDS5 = range(5)
SEEDS10 = range(10)
RS_DISCOUNTED = ("rs-spsa-g", "rs-sf-g", "rs-spsa-n", "rs-sf-n")


def designed_alpha() -> float:
    """60% of the pure-risky policy's exact variance at the start state."""
    f = np.zeros((4, 2, 1))
    f[0, 0, 0] = 1.0
    sol = solve_discounted(risky_safe_mdp(), BoltzmannPolicy(np.array([60.0]), f))
    return 0.6 * float(sol.Lambda[0])


@lru_cache(maxsize=None)
def discounted_run(alg: str, seed: int):
    cfg = RunConfig.load(bundled("risky_safe.json")).with_overrides(
        algorithm=alg, seed=seed, alpha=designed_alpha())
    return run(cfg).summary


@lru_cache(maxsize=None)
def average_run(alg: str, seed: int):
    cfg = RunConfig.load(bundled("average_risky_safe.json")).with_overrides(algorithm=alg, seed=seed)
    return run(cfg).summary


@lru_cache(maxsize=None)
def traffic_run(alg: str, seed: int):
    cfg = RunConfig.load(bundled("traffic_grid.json")).with_overrides(algorithm=alg, seed=seed)
    return run(cfg).summary


def _instance(seed):
    r = np.random.default_rng(seed)
    X, A = int(r.integers(1, 9)), int(r.integers(1, 5))
    mdp = random_mdp(r, X, A, noise_kind=("none", "uniform", "normal")[seed % 3])
    return mdp, BoltzmannPolicy(r.standard_normal(X * A), tabular_policy_features(X, A))


def test_criterion_1_oracle_self_consistency(report):
    t0 = time.perf_counter()
    worst_b = worst_p = 0.0
    exact = True
    for seed in range(50):
        mdp, pol = _instance(1000 + seed)
        sol = solve_discounted(mdp, pol)
        worst_b = max(worst_b, max(discounted_bellman_residuals(mdp, pol, sol).values()))
        exact &= bool(np.array_equal(sol.Lambda, sol.U - sol.V**2))
        av = solve_average(mdp, pol)
        res = poisson_residuals(mdp, pol, av)
        worst_p = max(worst_p, res["V_diff"], res["U_diff"], res["Q_diff"], res["W_diff"])
        exact &= av.Lambda == av.eta - av.rho**2
    dt = time.perf_counter() - t0
    ok = worst_b < 1e-10 and worst_p < 1e-10 and exact and dt < 5
    report(1, ok, f"50 MDPs: max Bellman residual {worst_b:.1e}, max Poisson residual "
                  f"{worst_p:.1e} (< 1e-10), Lambda = U - V^2 exact: {exact}, {dt:.2f}s (< 5s)")
    assert ok


def test_criterion_2_gradient_correctness(report):
    t0 = time.perf_counter()
    worst = dict(V=0.0, U=0.0, rho=0.0, eta=0.0)
    for seed in range(20):
        r = np.random.default_rng(2000 + seed)
        mdp = random_mdp(r, int(r.integers(2, 8)), int(r.integers(2, 4)))
        k1 = int(r.integers(2, 7))
        feats = r.standard_normal((mdp.num_states, mdp.num_actions, k1))
        errs = analytic_gradcheck(mdp, feats, 0.5 * r.standard_normal(k1), lam=0.0)
        for k in worst:
            worst[k] = max(worst[k], errs[k])
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, ok, f"20 instances, max relative error vs central differences: {detail} "
                  f"(< 1e-5), {dt:.2f}s (< 30s)")
    assert ok


def test_criterion_3_td_fixed_point(report):
    t0 = time.perf_counter()
    tab_err = 0.0
    v_rel = u_rel = 0.0
    for seed in range(5):
        mdp = TabularMdp.load(bundled("random5.json")) if seed == 0 else \
            random_mdp(np.random.default_rng(3000 + seed), 5, 3)
        for theta in (np.zeros(15), 0.5 * np.random.default_rng(seed).standard_normal(15)):
            pol = BoltzmannPolicy(theta, tabular_policy_features(5, 3))
            rep = td_check(mdp, pol, CriticFeatures.identity(5), 200_000,
                           np.random.default_rng(seed), curve_steps=10)
            tab_err = max(tab_err, rep.tabular_v_err, rep.tabular_u_err)
            v_rel, u_rel = max(v_rel, rep.v_rel), max(u_rel, rep.u_rel)
    # spectrum of the symmetric part on 50 random instances and policies
    nd = hurwitz = blocks = 0
    for seed in range(50):
        r = np.random.default_rng(3100 + seed)
        mdp = random_mdp(r, 5, 3)
        pol = BoltzmannPolicy(r.standard_normal(15), tabular_policy_features(5, 3))
        fp = td_fixed_point(mdp, pol, np.eye(5), np.eye(5))
        nd += fp.negative_definite
        hurwitz += bool(np.all(fp.eigenvalues.real < 0))
        Mv, Mu = fp.M[:5, :5], fp.M[5:, 5:]
        blocks += bool(np.all(np.linalg.eigvalsh(Mv + Mv.T) < 0) and
                       np.all(np.linalg.eigvalsh(Mu + Mu.T) < 0))
    dt = time.perf_counter() - t0
    ok = tab_err < 1e-8 and v_rel < 0.05 and u_rel < 0.05 and nd == 50 and dt < 60
    report(3, ok, f"tabular fixed point vs oracle {tab_err:.1e} (< 1e-8); stochastic TD "
                  f"(2e5 samples, zeta3 = m^-0.66, 5 instances x 2 policies) max rel error v {v_rel:.3f}, "
                  f"u {u_rel:.3f} (< 0.05); sym(M) negative definite on {nd}/50 instances "
                  f"(M Hurwitz on {hurwitz}/50, diagonal blocks negative definite on {blocks}/50); {dt:.1f}s (< 60s)")
    assert ok


def test_criterion_4_estimator_bias(report):
    t0 = time.perf_counter()
    mdp = TabularMdp.load(bundled("random5.json"))
    feats = np.random.default_rng(6).standard_normal((5, 3, 6))
    theta = 0.5 * np.random.default_rng(7).standard_normal(6)
    lam = 0.1
    parts, ok = [], True
    for kind, label in (("rademacher", "SPSA"), ("gaussian", "SF")):
        rep = estimator_bias(mdp, feats, theta, lam, kind, (0.05, 0.025), 20_000,
                             np.random.default_rng(40))
        good = rep.within_tolerance and rep.ratio <= 1.5
        ok &= good
        parts.append(f"{label} grad err {rep.errors[0]:.3f}/{rep.errors[1]:.3f} at beta "
                     f"0.05/0.025 (tol {rep.tolerances[0]:.2f}, ratio {rep.ratio:.2f}, noise allowance 1.5, "
                     f"strictly non-increasing: {rep.errors[1] <= rep.errors[0]})")
    for kind, label in (("rademacher", "SPSA"), ("gaussian", "SF")):
        h = hessian_estimate(mdp, feats, theta, lam, kind, 0.05, 50_000,
                             np.random.default_rng(41))
        ok &= h.passed
        parts.append(f"{label} Hessian dist {h.distance:.3f} (tol {h.tolerance:.3f}, "
                     f"sampling std error of the average {h.noise_floor:.3f})")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    report(4, ok, "; ".join(parts) + f"; {dt:.1f}s (< 120s)")
    assert ok


def test_criterion_5_constraint_feasibility(report):
    t0 = time.perf_counter()
    alpha = designed_alpha()
    lines, ok = [], True
    for alg in ("rs-spsa-g", "rs-sf-g"):
        lam = [discounted_run(alg, s)["oracle_variance_final"] for s in SEEDS5]
        n_ok = sum(v <= 1.1 * alpha for v in lam)
        ok &= n_ok >= 4
        lines.append(f"{alg} feasible {n_ok}/5")
        base = BASELINE[alg]
        lam_b = [discounted_run(base, s)["oracle_variance_final"] for s in SEEDS5]
        n_v = sum(v > alpha for v in lam_b)
        ok &= n_v >= 4
        lines.append(f"{base} violating {n_v}/5")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    report(5, ok, f"alpha = {alpha:.2f}: " + ", ".join(lines) + f"; {dt:.1f}s (< 300s)")
    assert ok


def _median(summaries, key):
    return float(np.median([s["test"][key] for s in summaries]))


def test_criterion_6_mean_variance_tradeoff(report):
    t0 = time.perf_counter()
    parts, ok = [], True
    pairs = [(a, BASELINE[a], discounted_run) for a in RS_DISCOUNTED]
    pairs.append(("rs-ac", "ac", average_run))
    for rs, base, runner in pairs:
        s_rs = [runner(rs, s) for s in SEEDS10]
        s_b = [runner(base, s) for s in SEEDS10]
        v_rs, v_b = _median(s_rs, "variance"), _median(s_b, "variance")
        m_rs, m_b = _median(s_rs, "mean"), _median(s_b, "mean")
        good = v_rs < v_b and m_rs <= m_b
        ok &= good
        parts.append(f"{rs} var {v_rs:.4g} < {base} {v_b:.4g}, mean {m_rs:.4g} <= {m_b:.4g}"
                     f"{'' if good else ' (violated)'}")
    dt = time.perf_counter() - t0
    ok &= dt < 900
    report(6, ok, "; ".join(parts) + f"; {dt:.1f}s (< 900s)")
    assert ok


def test_criterion_7_newton(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(70)
    B = r.standard_normal((5, 5))
    A = B @ B.T + np.eye(5)
    c = r.standard_normal(5)
    # quadratic objective 0.5 theta'A theta - c'theta: one full Newton step lands on the minimizer
    actor = ActorState(r.standard_normal(5), -1e9, 1e9)
    step = newton_step(actor, np.linalg.inv(A), c - A @ actor.theta, 1.0)
    err = float(np.abs(step.theta - np.linalg.solve(A, c)).max())
    alpha = designed_alpha()
    ok = err < 1e-8
    parts = [f"exact Newton step error {err:.1e} (< 1e-8)"]
    for alg in ("rs-spsa-n", "rs-sf-n"):
        n_ok = sum(discounted_run(alg, s)["oracle_variance_final"] <= 1.1 * alpha for s in SEEDS5)
        ok &= n_ok >= 4
        parts.append(f"{alg} feasible {n_ok}/5")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    report(7, ok, ", ".join(parts) + f"; {dt:.1f}s (< 300s)")
    assert ok


def test_criterion_8_determinism(report, tmp_path):
    from riskac.cli import main
    t0 = time.perf_counter()
    same = []
    for name, algs in (("risky_safe.json", ["rs-spsa-g", "rs-sf-g", "rs-spsa-n", "rs-sf-n",
                                             "spsa-g", "sf-g", "spsa-n", "sf-n",
                                             "rs-spsa-g-sr", "rs-sf-g-sr"]),
                       ("average_risky_safe.json", ["rs-ac", "ac", "rs-ac-sr"]),
                       ("traffic_grid.json", ["rs-ac", "ac"])):
        for alg in algs:
            cfg = RunConfig.load(bundled(name)).with_overrides(
                algorithm=alg, outer_iterations=30, test_episodes=5, seed=3)
            a, b = run(cfg), run(cfg)
            same.append(a.to_csv() == b.to_csv() and a.summary_json() == b.summary_json())
    files = []
    for d in ("a", "b"):
        main(["run", "--config", "risky_safe.json", "--out", str(tmp_path / d)])
        files.append(b"".join((tmp_path / d / n).read_bytes()
                              for n in ("trace.csv", "summary.json", "oracle_checkpoints.csv")))
    ok = all(same) and files[0] == files[1]
    dt = time.perf_counter() - t0
    report(8, ok, f"{sum(same)}/{len(same)} algorithm/environment pairs byte-identical on rerun; "
                  f"CLI trace files identical: {files[0] == files[1]}; {dt:.1f}s")
    assert ok


def test_criterion_9_traffic(report):
    t0 = time.perf_counter()
    two_lane = TrafficSpec(num_lanes=2, priority_lanes=(0,), configs=np.array([[1, 0], [0, 1]], bool),
                           spawn_rates=np.zeros(2), downstream=np.array([-1, -1]),
                           forward_prob=np.zeros(2), conflicts=((0, 1),))
    cost = traffic_cost(TrafficState([2, 0], [0, 3]), two_lane)
    hand = 0.5 * (0.6 * 2) + 0.5 * (0.4 * 3)
    spec = grid_spec()
    q = np.arange(8)
    t = np.arange(8)[::-1].copy()
    pr = np.isin(np.arange(8), spec.priority_lanes)
    hand_grid = 0.5 * (0.6 * q[pr].sum() + 0.4 * q[~pr].sum()) + \
        0.5 * (0.6 * t[pr].sum() + 0.4 * t[~pr].sum())
    grid_cost = traffic_cost(TrafficState(q, t), spec)
    arith = abs(cost - hand) < 1e-12 and abs(grid_cost - hand_grid) < 1e-12
    s_rs = [traffic_run("rs-ac", s) for s in SEEDS10]
    s_ac = [traffic_run("ac", s) for s in SEEDS10]
    w_rs, w_ac = _median(s_rs, "variance"), _median(s_ac, "variance")
    p_rs, p_ac = _median(s_rs, "step_variance"), _median(s_ac, "step_variance")
    m_rs, m_ac = _median(s_rs, "mean"), _median(s_ac, "mean")
    dt = time.perf_counter() - t0
    ok = arith and w_rs < w_ac and p_rs < p_ac and dt < 600
    report(9, ok, f"cost {cost:.3f} vs hand {hand:.3f}, grid {grid_cost:.2f} vs {hand_grid:.2f}; "
                  f"10 seeds median variance of 150-step average cost rs-ac {w_rs:.4f} < ac "
                  f"{w_ac:.4f}, per-step cost variance {p_rs:.3f} < {p_ac:.3f} "
                  f"(median mean cost {m_rs:.3f} vs {m_ac:.3f}); {dt:.1f}s (< 600s)")
    assert ok
