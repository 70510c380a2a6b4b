"""Linear TD critics for the value and square-value functions."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .mdp import Transition
from .oracle import check_features, td_matrices


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class CriticFeatures:
    """State features for the value (``phi_v``) and square value (``phi_u``) critics.

    ``tabular=True`` exempts identity features from the constant-vector check.
    """

    phi_v: np.ndarray
    phi_u: np.ndarray
    tabular: bool = False

    def __post_init__(self):
        pv = np.ascontiguousarray(self.phi_v, dtype=float)
        pu = np.ascontiguousarray(self.phi_u, dtype=float)
        if pv.ndim != 2 or pu.ndim != 2 or pv.shape[0] != pu.shape[0]:
            raise ValueError("phi_v and phi_u must be (X, k) matrices over the same states")
        check_features(pv, "phi_v", tabular_ok=self.tabular)
        check_features(pu, "phi_u", tabular_ok=self.tabular)
        object.__setattr__(self, "phi_v", pv)
        object.__setattr__(self, "phi_u", pu)

    @classmethod
    def identity(cls, num_states: int) -> "CriticFeatures":
        eye = np.eye(num_states)
        return cls(eye, eye.copy(), tabular=True)

    @property
    def kappa2(self) -> int:
        return self.phi_v.shape[1]

    @property
    def kappa3(self) -> int:
        return self.phi_u.shape[1]


@dataclass(frozen=True, eq=False)
class DiscountedCriticState:
    v: np.ndarray
    u: np.ndarray
    step_index: int = 0

    @classmethod
    def zeros(cls, features: CriticFeatures) -> "DiscountedCriticState":
        return cls(np.zeros(features.kappa2), np.zeros(features.kappa3), 0)

    def value(self, features: CriticFeatures, x: int) -> float:
        return float(self.v @ features.phi_v[x])

    def square_value(self, features: CriticFeatures, x: int) -> float:
        return float(self.u @ features.phi_u[x])


@dataclass(frozen=True, eq=False)
class AverageCriticState:
    v: np.ndarray
    u: np.ndarray
    rho_hat: float = 0.0
    eta_hat: float = 0.0
    step_index: int = 0

    @classmethod
    def zeros(cls, features: CriticFeatures) -> "AverageCriticState":
        return cls(np.zeros(features.kappa2), np.zeros(features.kappa3))


def td_step_discounted(state: DiscountedCriticState, t: Transition, features: CriticFeatures,
                       zeta3: float, gamma: float) -> DiscountedCriticState:
    if zeta3 <= 0:
        raise ValueError("zeta3 must be positive")
    fx, fy = features.phi_v[t.state], features.phi_v[t.next_state]
    gx, gy = features.phi_u[t.state], features.phi_u[t.next_state]
    R = t.reward
    vy = state.v @ fy
    delta = R + gamma * vy - state.v @ fx
    eps = R * R + 2.0 * gamma * R * vy + gamma * gamma * (state.u @ gy) - state.u @ gx
    return DiscountedCriticState(state.v + zeta3 * delta * fx, state.u + zeta3 * eps * gx,
                                 state.step_index + 1)


def td_step_average(state: AverageCriticState, t: Transition, features: CriticFeatures,
                    zeta3: float, zeta4: float) -> AverageCriticState:
    """One online step; the TD errors see the already-updated averages."""
    if zeta3 <= 0 or zeta4 <= 0:
        raise ValueError("step sizes must be positive")
    R = t.reward
    rho = (1.0 - zeta4) * state.rho_hat + zeta4 * R
    eta = (1.0 - zeta4) * state.eta_hat + zeta4 * R * R
    fx, fy = features.phi_v[t.state], features.phi_v[t.next_state]
    gx, gy = features.phi_u[t.state], features.phi_u[t.next_state]
    delta = R - rho + state.v @ fy - state.v @ fx
    eps = R * R - eta + state.u @ gy - state.u @ gx
    return AverageCriticState(state.v + zeta3 * delta * fx, state.u + zeta3 * eps * gx,
                              rho, eta, state.step_index + 1)


def td_errors_average(state: AverageCriticState, t: Transition, features: CriticFeatures):
    """(delta, epsilon) of a transition given already-updated averages."""
    R = t.reward
    fx, fy = features.phi_v[t.state], features.phi_v[t.next_state]
    gx, gy = features.phi_u[t.state], features.phi_u[t.next_state]
    delta = R - state.rho_hat + state.v @ fy - state.v @ fx
    eps = R * R - state.eta_hat + state.u @ gy - state.u @ gx
    return float(delta), float(eps)


def run_td_discounted(state: DiscountedCriticState, states, rewards, nexts,
                      features: CriticFeatures, gamma: float,
                      zeta_scale: float = 1.0, zeta_power: float = 0.66,
                      restart: bool = True) -> DiscountedCriticState:
    """Batch TD over a sampled path (compiled).

    With ``restart`` the step counter starts again from 1, as for one inner
    loop of the two-trajectory algorithms; otherwise it continues.
    """
    v = state.v.copy()
    u = state.u.copy()
    step0 = 0 if restart else state.step_index
    end = _kernels.td_discounted_pass(np.asarray(states, np.int64), np.asarray(rewards, float),
                                      np.asarray(nexts, np.int64), features.phi_v, features.phi_u,
                                      v, u, float(gamma), float(zeta_scale), float(zeta_power),
                                      step0)
    return replace(state, v=v, u=u, step_index=int(end))


def deterministic_expected_td(features: CriticFeatures, mdp, policy, w0, steps: int,
                              zeta: float, return_path: bool = False):
    """Iterate the mean-field recursion w <- w + zeta (M w + xi)."""
    M, xi = td_matrices(mdp, policy, features.phi_v, features.phi_u)
    radius = np.max(np.abs(np.linalg.eigvals(np.eye(M.shape[0]) + zeta * M)))
    if radius >= 1.0:
        raise DivergenceError(f"zeta={zeta} gives spectral radius {radius:.4f} >= 1")
    w = np.array(w0, dtype=float)
    path = [w.copy()] if return_path else None
    for _ in range(steps):
        w = w + zeta * (M @ w + xi)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > 1e12:
            raise DivergenceError("mean-field TD iterate diverged")
        if return_path:
            path.append(w.copy())
    return (w, np.array(path)) if return_path else w
