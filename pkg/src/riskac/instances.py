"""Small MDPs used by the acceptance suite, plus random instance generators."""
from __future__ import annotations

import numpy as np

from .mdp import TabularMdp

START, HIGH, LOW, MID = 0, 1, 2, 3
RISKY, SAFE = 0, 1


def risky_safe_mdp(gamma: float = 0.9, high: float = 10.0, safe_reward: float = 4.0) -> TabularMdp:
    """A start state and three payout states.

    From the start, ``risky`` lands on the high (``high``) or low (0) payout
    state with probability 1/2 each; ``safe`` lands on a payout state worth
    ``safe_reward``.  The start pays nothing and every payout state returns
    to the start, so both actions pay once per two-step cycle.  Risky has the
    larger mean (5 vs 4 per cycle by default) and all of the variance.
    """
    P = np.zeros((4, 2, 4))
    P[START, RISKY, HIGH] = P[START, RISKY, LOW] = 0.5
    P[START, SAFE, MID] = 1.0
    P[[HIGH, LOW, MID], :, START] = 1.0
    r = np.zeros((4, 2))
    r[HIGH, :] = high
    r[MID, :] = safe_reward
    return TabularMdp(P, r, gamma, START)


def average_risky_safe_mdp(high: float = 2.0, safe_reward: float = 0.8) -> TabularMdp:
    """Average-reward analogue of :func:`risky_safe_mdp`.

    Pure risky: rho = 0.5, long-run variance 0.75.  Pure safe: rho = 0.4,
    variance 0.16.
    """
    return risky_safe_mdp(0.9, high, safe_reward)


def start_state_policy_features(num_states: int = 4, num_actions: int = 2) -> np.ndarray:
    """One-hot over the start-state actions; the other states carry no features."""
    f = np.zeros((num_states, num_actions, num_actions))
    f[START] = np.eye(num_actions)
    return f


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int,
               gamma: float = 0.9, reward_scale: float = 1.0, noise_kind: str = "none",
               sparsity: float = 0.0) -> TabularMdp:
    """Random MDP with strictly positive transitions unless ``sparsity`` > 0.

    With sparsity, each row keeps a random subset of successors plus a
    ring edge x -> x+1 so every induced chain stays irreducible.
    """
    P = rng.random((num_states, num_actions, num_states)) + 1e-3
    if sparsity > 0:
        mask = rng.random(P.shape) >= sparsity
        ring = (np.arange(num_states) + 1) % num_states
        mask[np.arange(num_states), :, ring] = True
        P = P * mask
    P /= P.sum(axis=2, keepdims=True)
    r = reward_scale * rng.random((num_states, num_actions))
    scale = None
    if noise_kind != "none":
        scale = 0.5 * reward_scale * rng.random((num_states, num_actions))
    return TabularMdp(P, r, gamma, int(rng.integers(num_states)), noise_kind, scale)


def random_policy_features(rng: np.random.Generator, num_states: int, num_actions: int,
                           kappa1: int) -> np.ndarray:
    return rng.standard_normal((num_states, num_actions, kappa1))


def random_critic_features(rng: np.random.Generator, num_states: int, k: int) -> np.ndarray:
    """Orthonormal columns (full rank, constant vector outside the span)."""
    while True:
        A = rng.standard_normal((num_states, k))
        Q, _ = np.linalg.qr(A)
        ones = np.ones(num_states) / np.sqrt(num_states)
        if k < num_states and np.linalg.norm(ones - Q @ (Q.T @ ones)) > 1e-3:
            return Q
        if k >= num_states:
            raise ValueError("need fewer features than states")
