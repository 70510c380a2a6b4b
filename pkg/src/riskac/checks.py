"""Verification routines that pit estimators against the exact oracle.

Shared by the ``gradcheck``/``tdcheck`` subcommands and the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .critic import CriticFeatures, deterministic_expected_td
from .mdp import BoltzmannPolicy, CompiledMdp, TabularMdp, simulate
from .oracle import (discounted_x0_batch, grad_average, grad_discounted, induced_chain,
                     solve_average, solve_discounted, stationary_distribution, td_fixed_point)
from .perturb import HessianAccumulator, PerturbationDraw, sf_hessian_step, spsa_hessian_step


def _rel(a, b) -> float:
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-12))


def central_difference(f, theta, step: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = []
    for e in np.eye(theta.size):
        out.append((f(theta + step * e) - f(theta - step * e)) / (2.0 * step))
    return np.array(out).T


def analytic_gradcheck(mdp: TabularMdp, features, theta, lam: float = 0.0,
                       step: float = 1e-5, average: bool = True) -> dict:
    """Relative max-abs error of each analytic gradient vs central differences."""
    pol = BoltzmannPolicy(theta, features)
    x0 = mdp.initial_state
    gV, gU, gL = grad_discounted(mdp, pol, lam)

    def vu(th):
        s = solve_discounted(mdp, pol.with_theta(th))
        return np.array([s.V[x0], s.U[x0]])

    fd = central_difference(vu, theta, step)
    V0 = solve_discounted(mdp, pol).V[x0]
    fdL = -fd[0] + lam * (fd[1] - 2.0 * V0 * fd[0])
    out = {"V": _rel(gV, fd[0]), "U": _rel(gU, fd[1]), "L": _rel(gL, fdL),
           "L_lambda0_exact": bool(np.array_equal(grad_discounted(mdp, pol, 0.0)[2], -gV))}
    if average:
        g_rho, g_eta = grad_average(mdp, pol)

        def re(th):
            s = solve_average(mdp, pol.with_theta(th))
            return np.array([s.rho, s.eta])

        fda = central_difference(re, theta, step)
        out["rho"] = _rel(g_rho, fda[0])
        out["eta"] = _rel(g_eta, fda[1])
    return out


def _draws(kind: str, k1: int, n: int, rng: np.random.Generator, second: bool = False):
    if kind == "rademacher":
        d = rng.integers(0, 2, (n, k1)) * 2.0 - 1.0
        dh = rng.integers(0, 2, (n, k1)) * 2.0 - 1.0 if second else None
    else:
        d = rng.standard_normal((n, k1))
        dh = None
    return d, dh


@dataclass
class BiasReport:
    kind: str
    betas: tuple
    errors: tuple          # L2 distance of the averaged estimate to the oracle
    tolerances: tuple
    estimates: tuple
    target: np.ndarray

    @property
    def within_tolerance(self) -> bool:
        return all(e <= t for e, t in zip(self.errors, self.tolerances))

    @property
    def ratio(self) -> float:
        """Error at the last beta over error at the first."""
        return self.errors[-1] / max(self.errors[0], 1e-15)


def estimator_bias(mdp: TabularMdp, features, theta, lam: float, kind: str,
                   betas=(0.05, 0.025), draws: int = 20000, rng=None,
                   chunk: int = 5000) -> BiasReport:
    """Average SPSA (rademacher) or SF (gaussian) estimates built from exact values.

    The same perturbation directions are reused for every beta, so the
    comparison across betas isolates the bias from sampling noise.
    """
    rng = rng or np.random.default_rng(0)
    theta = np.asarray(theta, dtype=float)
    k1 = theta.size
    delta, _ = _draws(kind, k1, draws, rng)
    V0, U0 = discounted_x0_batch(mdp, features, theta[None])
    v, u = V0[0], U0[0]
    target = -grad_discounted(mdp, BoltzmannPolicy(theta, features), lam)[2]
    errors, tols, ests = [], [], []
    for beta in betas:
        acc = np.zeros(k1)
        for s in range(0, draws, chunk):
            d = delta[s:s + chunk]
            Vp, Up = discounted_x0_batch(mdp, features, theta + beta * d)
            resp = (1.0 + 2.0 * lam * v) * (Vp - v) - lam * (Up - u)
            if kind == "rademacher":
                acc += (resp[:, None] / (beta * d)).sum(axis=0)
            else:
                acc += (d / beta * resp[:, None]).sum(axis=0)
        est = acc / draws
        ests.append(est)
        errors.append(float(np.linalg.norm(est - target)))
        tols.append(max(5e-2, 10.0 * beta))
    return BiasReport(kind, tuple(betas), tuple(errors), tuple(tols), tuple(ests), target)


def lagrangian_x0(mdp, features, thetas, lam):
    V, U = discounted_x0_batch(mdp, features, thetas)
    return -V + lam * (U - V * V)


def fd_hessian(mdp, features, theta, lam: float, step: float = 1e-4) -> np.ndarray:
    """Central differences of the analytic Lagrangian gradient, symmetrized."""
    pol = BoltzmannPolicy(theta, features)
    H = central_difference(lambda th: grad_discounted(mdp, pol.with_theta(th), lam)[2], theta, step)
    return 0.5 * (H + H.T)


@dataclass
class HessianReport:
    kind: str
    estimate: np.ndarray
    reference: np.ndarray
    distance: float
    tolerance: float
    noise_floor: float      # Frobenius standard error of the running mean

    @property
    def passed(self) -> bool:
        return self.distance < self.tolerance


def hessian_estimate(mdp, features, theta, lam: float, kind: str, beta: float = 0.05,
                     draws: int = 50000, rng=None, chunk: int = 5000) -> HessianReport:
    """Running-average Hessian (step 1/k) fed with exact Lagrangian differences."""
    rng = rng or np.random.default_rng(0)
    theta = np.asarray(theta, dtype=float)
    k1 = theta.size
    second = kind == "rademacher"
    delta, delta_hat = _draws(kind, k1, draws, rng, second)
    L0 = lagrangian_x0(mdp, features, theta[None], lam)[0]
    acc = HessianAccumulator.zeros(k1)
    step = spsa_hessian_step if second else sf_hessian_step
    k = 0
    sq = np.zeros((k1, k1))
    for s in range(0, draws, chunk):
        d = delta[s:s + chunk]
        dh = delta_hat[s:s + chunk] if second else None
        shift = d + dh if second else d
        dL = lagrangian_x0(mdp, features, theta + beta * shift, lam) - L0
        if second:
            samples = dL[:, None, None] / (beta ** 2 * d[:, :, None] * dh[:, None, :])
        else:
            samples = dL[:, None, None] / beta ** 2 * np.einsum("bi,bj->bij", d, d)
            idx = np.arange(k1)
            samples[:, idx, idx] -= dL[:, None] / beta ** 2
        sq += (samples ** 2).sum(axis=0)
        for i in range(d.shape[0]):
            k += 1
            draw = PerturbationDraw(d[i], beta, kind, dh[i] if second else None)
            acc = step(acc, dL[i], draw, 1.0 / k)
    ref = fd_hessian(mdp, features, theta, lam)
    dist = float(np.linalg.norm(acc.H - ref))
    var = np.maximum(sq / draws - acc.H ** 2, 0.0)
    floor = float(np.sqrt(var.sum() / draws))
    return HessianReport(kind, acc.H, ref, dist, 0.15 * (1.0 + float(np.linalg.norm(ref))), floor)


@dataclass
class TdReport:
    v_rel: float
    u_rel: float
    sym_eigenvalues: np.ndarray
    tabular_v_err: float | None
    tabular_u_err: float | None
    curve: np.ndarray
    v: np.ndarray
    u: np.ndarray

    def passed(self, tol: float = 0.05) -> bool:
        return self.v_rel < tol and self.u_rel < tol and bool(np.all(self.sym_eigenvalues < 0))


def td_check(mdp: TabularMdp, policy: BoltzmannPolicy, features: CriticFeatures,
             samples: int = 200_000, rng=None, zeta_scale: float = 1.0,
             zeta_power: float = 0.66, curve_steps: int = 2000) -> TdReport:
    """Stochastic discounted TD on one stationary trajectory vs the exact fixed point."""
    rng = rng or np.random.default_rng(0)
    fp = td_fixed_point(mdp, policy, features.phi_v, features.phi_u)
    d = stationary_distribution(induced_chain(mdp, policy).P)
    x_start = int(min(np.searchsorted(np.cumsum(d), rng.random(), side="right"), mdp.num_states - 1))
    u_act, u_next = rng.random((2, samples))
    eps = rng.uniform(-1, 1, samples) if mdp.noise_kind == "uniform" else (
        rng.standard_normal(samples) if mdp.noise_kind == "normal" else np.zeros(samples))
    s, _, r, y = simulate(CompiledMdp.of(mdp), policy.probs_table(), u_act, u_next, eps, x_start)
    v = np.zeros(features.kappa2)
    u = np.zeros(features.kappa3)
    _kernels.td_discounted_pass(s, r, y, features.phi_v, features.phi_u, v, u, mdp.gamma,
                                zeta_scale, zeta_power, 0)
    v_rel = float(np.linalg.norm(v - fp.v_bar) / np.linalg.norm(fp.v_bar))
    u_rel = float(np.linalg.norm(u - fp.u_bar) / np.linalg.norm(fp.u_bar))
    tv = tu = None
    if features.tabular:
        sol = solve_discounted(mdp, policy)
        tv = float(np.abs(fp.v_bar - sol.V).max())
        tu = float(np.abs(fp.u_bar - sol.U).max())
    lam_max = np.abs(np.linalg.eigvals(fp.M)).max()
    zeta = 0.9 * 2.0 / lam_max
    w0 = np.zeros(fp.M.shape[0])
    try:
        _, path = deterministic_expected_td(features, mdp, policy, w0, curve_steps, zeta,
                                            return_path=True)
        curve = np.linalg.norm(path - fp.w_bar, axis=1)
    except FloatingPointError:
        curve = np.full(1, np.nan)
    return TdReport(v_rel, u_rel, fp.sym_eigenvalues, tv, tu, curve, v, u)
