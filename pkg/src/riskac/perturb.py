"""Simultaneous-perturbation gradient and Hessian estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("rademacher", "gaussian")
EPS_HESSIAN = 1e-4


@dataclass(frozen=True, eq=False)
class PerturbationDraw:
    delta: np.ndarray
    beta: float
    kind: str = "rademacher"
    delta_hat: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        delta = np.asarray(self.delta, dtype=float)
        if self.kind == "rademacher" and not np.all(np.abs(delta) == 1.0):
            raise ValueError("rademacher entries must be +-1")
        object.__setattr__(self, "delta", delta)
        if self.delta_hat is not None:
            object.__setattr__(self, "delta_hat", np.asarray(self.delta_hat, dtype=float))

    @property
    def second_order(self) -> bool:
        return self.delta_hat is not None

    def offset(self) -> np.ndarray:
        """Parameter shift p = beta (delta [+ delta_hat])."""
        if self.delta_hat is None:
            return self.beta * self.delta
        return self.beta * (self.delta + self.delta_hat)


def draw_perturbation(kind: str, kappa1: int, second_order: bool, rng: np.random.Generator,
                      beta: float = 0.2) -> PerturbationDraw:
    if kappa1 < 1:
        raise ValueError("kappa1 must be at least 1")
    if kind == "rademacher":
        def sample():
            return rng.integers(0, 2, kappa1) * 2.0 - 1.0
    elif kind == "gaussian":
        def sample():
            return rng.standard_normal(kappa1)
    else:
        raise ValueError(f"kind must be one of {KINDS}")
    delta = sample()
    delta_hat = sample() if second_order else None
    return PerturbationDraw(delta, beta, kind, delta_hat)


def lagrangian_response(dV: float, dU: float, v_x0: float, lam: float) -> float:
    """Finite-difference response of -L: (1 + 2 lam v) dV - lam dU."""
    return (1.0 + 2.0 * lam * v_x0) * dV - lam * dU


def spsa_gradient(dV: float, dU: float, v_x0: float, lam: float,
                  draw: PerturbationDraw) -> np.ndarray:
    """Ascent direction for -L from one-sided SPSA."""
    if draw.kind != "rademacher":
        raise ValueError("spsa_gradient needs a rademacher draw")
    return lagrangian_response(dV, dU, v_x0, lam) / (draw.beta * draw.delta)


def sf_gradient(dV: float, dU: float, v_x0: float, lam: float,
                draw: PerturbationDraw) -> np.ndarray:
    """Ascent direction for -L from the Gaussian smoothed functional."""
    if draw.kind != "gaussian":
        raise ValueError("sf_gradient needs a gaussian draw")
    return draw.delta / draw.beta * lagrangian_response(dV, dU, v_x0, lam)


def hessian_sample(v: float, v_pert: float, u: float, u_pert: float, lam: float) -> float:
    """L(theta + p) - L(theta) from critic values at x0."""
    return (1.0 + lam * (v + v_pert)) * (v - v_pert) + lam * (u_pert - u)


@dataclass
class HessianAccumulator:
    H: np.ndarray
    step_index: int = 0

    @classmethod
    def identity(cls, kappa1: int) -> "HessianAccumulator":
        return cls(np.eye(kappa1))

    @classmethod
    def zeros(cls, kappa1: int) -> "HessianAccumulator":
        return cls(np.zeros((kappa1, kappa1)))


def _average_into(acc: HessianAccumulator, sample: np.ndarray, zeta2p: float) -> HessianAccumulator:
    upper = np.triu(acc.H + zeta2p * (sample - acc.H))
    H = upper + np.triu(upper, 1).T
    return HessianAccumulator(H, acc.step_index + 1)


def spsa_hessian_step(acc: HessianAccumulator, dL: float, draw: PerturbationDraw,
                      zeta2p: float) -> HessianAccumulator:
    if draw.delta_hat is None:
        raise ValueError("second-order SPSA needs delta_hat")
    sample = dL / (draw.beta ** 2 * np.outer(draw.delta, draw.delta_hat))
    return _average_into(acc, sample, zeta2p)


def sf_hessian_step(acc: HessianAccumulator, dL: float, draw: PerturbationDraw,
                    zeta2p: float) -> HessianAccumulator:
    if draw.kind != "gaussian" or draw.delta_hat is not None:
        raise ValueError("SF Hessian needs a plain gaussian draw")
    d = draw.delta
    h_bar = np.outer(d, d)
    h_bar[np.diag_indices_from(h_bar)] = d * d - 1.0
    return _average_into(acc, dL / draw.beta ** 2 * h_bar, zeta2p)


def spd_project(H: np.ndarray, floor: float = EPS_HESSIAN):
    """Clamp eigenvalues at ``floor``; returns (H_spd, inverse)."""
    H = np.asarray(H, dtype=float)
    if np.abs(H - H.T).max(initial=0.0) > 1e-8:
        raise ValueError("spd_project needs a symmetric matrix")
    w, Q = np.linalg.eigh(0.5 * (H + H.T))
    w = np.maximum(w, floor)
    H_spd = (Q * w) @ Q.T
    M = (Q / w) @ Q.T
    return 0.5 * (H_spd + H_spd.T), 0.5 * (M + M.T)
