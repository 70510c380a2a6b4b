"""Closed-form policy evaluation and policy gradients on small MDPs.

Everything here is dense linear algebra on the chain induced by a fixed
Boltzmann policy.  These quantities are the ground truth that the
stochastic critics, perturbation estimators and learning runs are checked
against.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .mdp import BoltzmannPolicy, TabularMdp


class OracleError(np.linalg.LinAlgError):
    """Singular or ill-posed linear system."""


class RankDeficientFeatures(ValueError):
    """Critic feature matrix without full column rank."""


@dataclass(frozen=True)
class InducedChain:
    mu: np.ndarray        # (X, A) policy table
    P: np.ndarray         # (X, X) state transition under mu
    r: np.ndarray         # (X,) expected one-step reward
    r2: np.ndarray        # (X,) expected squared reward
    G: np.ndarray         # (X, X) sum_a mu r(x,a) P(x'|x,a)


def induced_chain(mdp: TabularMdp, policy: BoltzmannPolicy) -> InducedChain:
    mu = policy.probs_table()
    P = np.einsum("xa,xay->xy", mu, mdp.transition)
    r = np.einsum("xa,xa->x", mu, mdp.reward_mean)
    r2 = np.einsum("xa,xa->x", mu, mdp.reward_second_moment())
    G = np.einsum("xa,xa,xay->xy", mu, mdp.reward_mean, mdp.transition)
    return InducedChain(mu, P, r, r2, G)


def _lu(A):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(A, check_finite=True)
        except (sla.LinAlgWarning, ValueError) as exc:
            raise OracleError(f"singular system: {exc}") from None
    if np.any(np.abs(np.diag(lu[0])) < 1e-300):
        raise OracleError("singular system")
    return lu


@dataclass(frozen=True)
class DiscountedSolution:
    V: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    Lambda: np.ndarray
    d_gamma: np.ndarray
    d_gamma2: np.ndarray
    cond: float
    cond2: float

    def at(self, x: int) -> tuple[float, float, float]:
        return float(self.V[x]), float(self.U[x]), float(self.Lambda[x])

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def solve_discounted(mdp: TabularMdp, policy: BoltzmannPolicy) -> DiscountedSolution:
    g = mdp.gamma
    if not 0.0 < g < 1.0:
        raise OracleError(f"discount must lie in (0, 1), got {g}")
    ch = induced_chain(mdp, policy)
    n = mdp.num_states
    I = np.eye(n)
    A1 = I - g * ch.P
    A2 = I - g * g * ch.P
    lu1 = _lu(A1)
    lu2 = _lu(A2)
    V = sla.lu_solve(lu1, ch.r)
    U = sla.lu_solve(lu2, ch.r2 + 2.0 * g * ch.G @ V)
    PV = mdp.transition @ V
    PU = mdp.transition @ U
    Q = mdp.reward_mean + g * PV
    W = mdp.reward_second_moment() + g * g * PU + 2.0 * g * mdp.reward_mean * PV
    e0 = I[mdp.initial_state]
    d1 = (1.0 - g) * sla.lu_solve(lu1, e0, trans=1)
    d2 = (1.0 - g * g) * sla.lu_solve(lu2, e0, trans=1)
    return DiscountedSolution(V, U, Q, W, U - V ** 2, d1, d2,
                              float(np.linalg.cond(A1)), float(np.linalg.cond(A2)))


def discounted_bellman_residuals(mdp: TabularMdp, policy: BoltzmannPolicy,
                                 sol: DiscountedSolution) -> dict[str, float]:
    """Max-abs residuals of the V, U, Q, W Bellman equations."""
    g = mdp.gamma
    mu = policy.probs_table()
    P, r, r2 = mdp.transition, mdp.reward_mean, mdp.reward_second_moment()
    PV = P @ sol.V
    PU = P @ sol.U
    q_res = sol.Q - (r + g * PV)
    w_res = sol.W - (r2 + g * g * PU + 2.0 * g * r * PV)
    v_res = sol.V - np.sum(mu * (r + g * PV), axis=1)
    u_res = sol.U - np.sum(mu * (r2 + g * g * PU + 2.0 * g * r * PV), axis=1)
    return {k: float(np.abs(v).max()) for k, v in
            (("V", v_res), ("U", u_res), ("Q", q_res), ("W", w_res))}


def grad_discounted(mdp: TabularMdp, policy: BoltzmannPolicy, lam: float = 0.0,
                    sol: DiscountedSolution | None = None):
    """Gradients of V(x0), U(x0) and the Lagrangian -V + lam (U - V^2).

    V's gradient at every state solves (I - gamma P) gradV = sum_a grad mu Q;
    the x0 row is then reassembled through the gamma- and gamma^2-discounted
    visiting distributions.
    """
    sol = sol or solve_discounted(mdp, policy)
    g = mdp.gamma
    x0 = mdp.initial_state
    ch = induced_chain(mdp, policy)
    psi = policy.score_table()
    weighted = ch.mu[:, :, None] * psi                     # grad mu(a|x)
    h_v = np.einsum("xak,xa->xk", weighted, sol.Q)
    gradV_all = np.linalg.solve(np.eye(mdp.num_states) - g * ch.P, h_v)

    pi1 = sol.d_gamma[:, None] * ch.mu
    pi2 = sol.d_gamma2[:, None] * ch.mu
    gradV = np.einsum("xa,xak,xa->k", pi1, psi, sol.Q) / (1.0 - g)
    term_w = np.einsum("xa,xak,xa->k", pi2, psi, sol.W)
    term_v = np.einsum("xa,xa,xay,yk->k", pi2, mdp.reward_mean, mdp.transition, gradV_all)
    gradU = (term_w + 2.0 * g * term_v) / (1.0 - g * g)
    V0 = sol.V[x0]
    gradL = -gradV + lam * (gradU - 2.0 * V0 * gradV)
    return gradV, gradU, gradL


def lagrangian_discounted(mdp, policy, lam: float, alpha: float = 0.0) -> float:
    V, U, Lam = solve_discounted(mdp, policy).at(mdp.initial_state)
    return -V + lam * (Lam - alpha)


def sharpe_gradient_discounted(mdp, policy) -> np.ndarray:
    """Gradient of V(x0) / sqrt(Lambda(x0))."""
    sol = solve_discounted(mdp, policy)
    V, U, Lam = sol.at(mdp.initial_state)
    gV, gU, _ = grad_discounted(mdp, policy, sol=sol)
    gLam = gU - 2.0 * V * gV
    return (gV - V / (2.0 * Lam) * gLam) / np.sqrt(Lam)


# ------------------------------------------------------------ average reward


@dataclass(frozen=True)
class AverageSolution:
    d_stat: np.ndarray
    rho: float
    eta: float
    V_diff: np.ndarray
    U_diff: np.ndarray
    Q_diff: np.ndarray
    W_diff: np.ndarray
    Lambda: float

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def stationary_distribution(P: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Unique stationary law of a row-stochastic matrix."""
    n = P.shape[0]
    s = np.linalg.svd(P.T - np.eye(n), compute_uv=False)
    null_dim = int(np.sum(s <= tol * max(1.0, s[0])))
    if null_dim != 1:
        raise OracleError(f"stationary distribution not unique (null space dimension {null_dim})")
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    d, *_ = np.linalg.lstsq(A, b, rcond=None)
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def solve_average(mdp: TabularMdp, policy: BoltzmannPolicy) -> AverageSolution:
    """Stationary law, average (square) reward and differential values.

    The differential values are pinned by d . V = 0 and d . U = 0.
    """
    ch = induced_chain(mdp, policy)
    d = stationary_distribution(ch.P)
    n = mdp.num_states
    rho = float(d @ ch.r)
    eta = float(d @ ch.r2)
    A = np.eye(n) - ch.P + np.outer(np.ones(n), d)
    lu = _lu(A)
    V = sla.lu_solve(lu, ch.r - rho)
    U = sla.lu_solve(lu, ch.r2 - eta)
    Q = mdp.reward_mean - rho + mdp.transition @ V
    W = mdp.reward_second_moment() - eta + mdp.transition @ U
    return AverageSolution(d, rho, eta, V, U, Q, W, eta - rho ** 2)


def poisson_residuals(mdp, policy, sol: AverageSolution) -> dict[str, float]:
    mu = policy.probs_table()
    P = mdp.transition
    r, r2 = mdp.reward_mean, mdp.reward_second_moment()
    v_res = sol.rho + sol.V_diff - np.sum(mu * (r + P @ sol.V_diff), axis=1)
    u_res = sol.eta + sol.U_diff - np.sum(mu * (r2 + P @ sol.U_diff), axis=1)
    q_res = sol.rho + sol.Q_diff - (r + P @ sol.V_diff)
    w_res = sol.eta + sol.W_diff - (r2 + P @ sol.U_diff)
    ch = induced_chain(mdp, policy)
    stat = sol.d_stat @ ch.P - sol.d_stat
    return {k: float(np.abs(v).max()) for k, v in
            (("V_diff", v_res), ("U_diff", u_res), ("Q_diff", q_res), ("W_diff", w_res),
             ("stationary", stat))}


def grad_average(mdp: TabularMdp, policy: BoltzmannPolicy, sol: AverageSolution | None = None):
    """(grad rho, grad eta) from the stationary state-action weighting."""
    sol = sol or solve_average(mdp, policy)
    mu = policy.probs_table()
    pi = sol.d_stat[:, None] * mu
    psi = policy.score_table()
    g_rho = np.einsum("xa,xak,xa->k", pi, psi, sol.Q_diff)
    g_eta = np.einsum("xa,xak,xa->k", pi, psi, sol.W_diff)
    return g_rho, g_eta


def grad_lagrangian_average(mdp, policy, lam: float) -> np.ndarray:
    sol = solve_average(mdp, policy)
    g_rho, g_eta = grad_average(mdp, policy, sol)
    return -g_rho + lam * (g_eta - 2.0 * sol.rho * g_rho)


def sharpe_gradient_average(mdp, policy) -> np.ndarray:
    sol = solve_average(mdp, policy)
    g_rho, g_eta = grad_average(mdp, policy, sol)
    g_lam = g_eta - 2.0 * sol.rho * g_rho
    return (g_rho - sol.rho / (2.0 * sol.Lambda) * g_lam) / np.sqrt(sol.Lambda)


# ------------------------------------------------------------- TD fixed point


@dataclass(frozen=True)
class TdFixedPoint:
    v_bar: np.ndarray
    u_bar: np.ndarray
    M: np.ndarray
    xi: np.ndarray
    sym_eigenvalues: np.ndarray   # spectrum of (M + M^T) / 2
    eigenvalues: np.ndarray       # spectrum of M

    @property
    def w_bar(self) -> np.ndarray:
        return np.concatenate([self.v_bar, self.u_bar])

    @property
    def negative_definite(self) -> bool:
        return bool(np.all(self.sym_eigenvalues < 0))


def check_features(phi: np.ndarray, name: str = "features", tabular_ok: bool = True) -> None:
    """Full column rank, and the all-ones vector outside the span.

    Identity (tabular) features represent the constant vector by design and
    are accepted when ``tabular_ok``.
    """
    phi = np.asarray(phi, dtype=float)
    if np.linalg.matrix_rank(phi) < phi.shape[1]:
        raise RankDeficientFeatures(f"{name} must have full column rank")
    is_tabular = phi.shape[0] == phi.shape[1] and np.allclose(phi, np.eye(phi.shape[0]))
    if is_tabular and tabular_ok:
        return
    ones = np.ones(phi.shape[0])
    coef, *_ = np.linalg.lstsq(phi, ones, rcond=None)
    if np.linalg.norm(phi @ coef - ones) <= 1e-8:
        raise RankDeficientFeatures(f"{name} span the constant vector")


def td_matrices(mdp: TabularMdp, policy: BoltzmannPolicy, phi_v, phi_u, d=None):
    """Mean-field matrix M and offset xi of the discounted TD recursion.

    States are weighted by the stationary law of the induced chain.  The
    cross term uses sum_a mu r(x,a) P(x'|x,a) and the square-reward offset
    uses sum_a mu E[R^2]; both collapse to diag(r) P and r^2 when rewards do
    not depend on the action and are noise-free.
    """
    ch = induced_chain(mdp, policy)
    if d is None:
        d = stationary_distribution(ch.P)
    D = np.diag(d)
    g = mdp.gamma
    n = mdp.num_states
    I = np.eye(n)
    k2, k3 = phi_v.shape[1], phi_u.shape[1]
    M = np.zeros((k2 + k3, k2 + k3))
    M[:k2, :k2] = phi_v.T @ D @ (g * ch.P - I) @ phi_v
    M[k2:, :k2] = 2.0 * g * phi_u.T @ D @ ch.G @ phi_v
    M[k2:, k2:] = phi_u.T @ D @ (g * g * ch.P - I) @ phi_u
    xi = np.concatenate([phi_v.T @ D @ ch.r, phi_u.T @ D @ ch.r2])
    return M, xi


def td_fixed_point(mdp: TabularMdp, policy: BoltzmannPolicy, phi_v, phi_u) -> TdFixedPoint:
    phi_v = np.asarray(phi_v, dtype=float)
    phi_u = np.asarray(phi_u, dtype=float)
    check_features(phi_v, "phi_v")
    check_features(phi_u, "phi_u")
    M, xi = td_matrices(mdp, policy, phi_v, phi_u)
    w = -np.linalg.solve(M, xi)
    k2 = phi_v.shape[1]
    sym = np.linalg.eigvalsh(0.5 * (M + M.T))
    return TdFixedPoint(w[:k2], w[k2:], M, xi, sym, np.linalg.eigvals(M))


def projected_bellman_fixed_point(mdp, policy, phi_v, phi_u):
    """Direct solve of Phi w = Pi T(Phi w) with stationary-weighted projections.

    Independent of :func:`td_matrices`; used to cross-check it.
    """
    ch = induced_chain(mdp, policy)
    d = stationary_distribution(ch.P)
    D = np.diag(d)
    g = mdp.gamma

    def proj(phi):
        return phi @ np.linalg.solve(phi.T @ D @ phi, phi.T @ D)

    Pv, Pu = proj(phi_v), proj(phi_u)
    n = mdp.num_states
    # value block: y = Pv (r + g P y), y in span(phi_v)
    yv = np.linalg.solve(np.eye(n) - g * Pv @ ch.P, Pv @ ch.r)
    yu = np.linalg.solve(np.eye(n) - g * g * Pu @ ch.P, Pu @ (ch.r2 + 2.0 * g * ch.G @ yv))
    v = np.linalg.lstsq(phi_v, yv, rcond=None)[0]
    u = np.linalg.lstsq(phi_u, yu, rcond=None)[0]
    return v, u


# ------------------------------------------------------------------ batched


def discounted_x0_batch(mdp: TabularMdp, features: np.ndarray, thetas: np.ndarray):
    """V(x0) and U(x0) for a batch of parameters, shape (B, k1) -> two (B,) arrays."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    logits = np.einsum("xak,bk->bxa", features, thetas)
    logits -= logits.max(axis=2, keepdims=True)
    mu = np.exp(logits)
    mu /= mu.sum(axis=2, keepdims=True)
    P, r, r2 = mdp.transition, mdp.reward_mean, mdp.reward_second_moment()
    g = mdp.gamma
    Pb = np.einsum("bxa,xay->bxy", mu, P)
    Gb = np.einsum("bxa,xa,xay->bxy", mu, r, P)
    rb = np.einsum("bxa,xa->bx", mu, r)
    r2b = np.einsum("bxa,xa->bx", mu, r2)
    eye = np.eye(mdp.num_states)
    V = np.linalg.solve(eye - g * Pb, rb[..., None])[..., 0]
    rhs = r2b + 2.0 * g * np.einsum("bxy,by->bx", Gb, V)
    U = np.linalg.solve(eye - g * g * Pb, rhs[..., None])[..., 0]
    x0 = mdp.initial_state
    return V[:, x0], U[:, x0]
