"""Actor and multiplier updates: projections, step sizes, update directions."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .perturb import PerturbationDraw

EPS_VAR = 1e-8


class ScheduleError(ValueError):
    pass


class DegenerateVariance(FloatingPointError):
    pass


@dataclass(frozen=True)
class PowerSchedule:
    """n -> scale * n**-power, with n counted from 1."""

    scale: float = 1.0
    power: float = 1.0

    def __call__(self, n) -> float:
        return self.scale * float(n) ** (-self.power)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "power": self.power}


@dataclass(frozen=True)
class StepSchedules:
    """Step sizes for the multiplier (1), actor (2), Hessian (2p) and critic (3).

    ``k`` ties the average-reward running means to the critic: zeta4 = k zeta3.
    """

    zeta1: PowerSchedule = field(default_factory=lambda: PowerSchedule(1.0, 1.0))
    zeta2: PowerSchedule = field(default_factory=lambda: PowerSchedule(1.0, 0.75))
    zeta2p: PowerSchedule = field(default_factory=lambda: PowerSchedule(1.0, 0.7))
    zeta3: PowerSchedule = field(default_factory=lambda: PowerSchedule(1.0, 0.66))
    k: float = 1.0

    def __post_init__(self):
        named = (("zeta1", self.zeta1), ("zeta2", self.zeta2),
                 ("zeta2p", self.zeta2p), ("zeta3", self.zeta3))
        for name, s in named:
            if not 0.5 < s.power <= 1.0:
                raise ScheduleError(f"{name} exponent {s.power} must lie in (0.5, 1]")
            if not s.scale > 0:
                raise ScheduleError(f"{name} scale must be positive")
        p1, p2, p2p, p3 = (s.power for _, s in named)
        if not p1 > p2:
            raise ScheduleError("zeta1 must decay faster than zeta2")
        if not p2 > p2p:
            raise ScheduleError("zeta2 / zeta2p must vanish: zeta2 exponent must exceed zeta2p's")
        if not p2p > p3:
            raise ScheduleError("zeta2p must decay faster than zeta3")
        if not self.k > 0:
            raise ScheduleError("k must be positive")

    def zeta4(self, n) -> float:
        return min(1.0, self.k * self.zeta3(n))

    def to_dict(self) -> dict:
        return {"zeta1": self.zeta1.to_dict(), "zeta2": self.zeta2.to_dict(),
                "zeta2p": self.zeta2p.to_dict(), "zeta3": self.zeta3.to_dict(), "k": self.k}

    @classmethod
    def from_dict(cls, doc: dict | None) -> "StepSchedules":
        doc = doc or {}
        kw = {}
        for name in ("zeta1", "zeta2", "zeta2p", "zeta3"):
            if name in doc:
                kw[name] = PowerSchedule(**doc[name])
        if "k" in doc:
            kw["k"] = float(doc["k"])
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class ActorState:
    theta: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    lam: float = 0.0
    lambda_max: float = 1000.0
    alpha: float = 20.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        lo = np.broadcast_to(np.asarray(self.box_lo, dtype=float), theta.shape).copy()
        hi = np.broadcast_to(np.asarray(self.box_hi, dtype=float), theta.shape).copy()
        if (lo > hi).any():
            raise ValueError("box lower bound exceeds upper bound")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")
        object.__setattr__(self, "theta", project_theta(theta, (lo, hi)))
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        object.__setattr__(self, "lam", float(min(max(self.lam, 0.0), self.lambda_max)))

    @property
    def box(self):
        return self.box_lo, self.box_hi


def project_theta(theta, box) -> np.ndarray:
    lo, hi = box
    return np.minimum(np.maximum(np.asarray(theta, dtype=float), lo), hi)


def first_order_step(actor: ActorState, direction, zeta2: float) -> ActorState:
    return replace(actor, theta=project_theta(actor.theta + zeta2 * np.asarray(direction), actor.box))


def newton_step(actor: ActorState, M, gradient_direction, zeta2: float) -> ActorState:
    M = np.asarray(M, dtype=float)
    g = np.asarray(gradient_direction, dtype=float)
    k = actor.theta.shape[0]
    if M.shape != (k, k) or g.shape != (k,):
        raise ValueError(f"expected M {(k, k)} and direction {(k,)}, got {M.shape} and {g.shape}")
    return first_order_step(actor, M @ g, zeta2)


def lambda_step(actor: ActorState, lambda_hat_variance: float, zeta1: float) -> ActorState:
    lam = actor.lam + zeta1 * (lambda_hat_variance - actor.alpha)
    return replace(actor, lam=min(max(lam, 0.0), actor.lambda_max))


def average_actor_direction(delta: float, epsilon: float, psi, rho_hat: float,
                            lam: float) -> np.ndarray:
    """(1 + 2 lam rho) delta psi - lam epsilon psi."""
    return ((1.0 + 2.0 * lam * rho_hat) * delta - lam * epsilon) * np.asarray(psi, dtype=float)


def _sharpe_response(dV, dU, v_x0, u_x0):
    var = u_x0 - v_x0 * v_x0
    if var <= EPS_VAR:
        raise DegenerateVariance(f"estimated variance {var:.3g} is not positive")
    return (dV - v_x0 * (dU - 2.0 * v_x0 * dV) / (2.0 * var)) / np.sqrt(var)


def sharpe_direction_discounted(dV: float, dU: float, v_x0: float, u_x0: float,
                                draw: PerturbationDraw) -> np.ndarray:
    s = _sharpe_response(dV, dU, v_x0, u_x0)
    if draw.kind == "rademacher":
        return s / (draw.beta * draw.delta)
    return draw.delta / draw.beta * s


def sharpe_direction_average(delta: float, epsilon: float, psi, rho_hat: float,
                             eta_hat: float) -> np.ndarray:
    var = eta_hat - rho_hat * rho_hat
    if var <= EPS_VAR:
        raise DegenerateVariance(f"estimated variance {var:.3g} is not positive")
    coef = (delta - rho_hat * (epsilon - 2.0 * rho_hat * delta) / (2.0 * var)) / np.sqrt(var)
    return coef * np.asarray(psi, dtype=float)
