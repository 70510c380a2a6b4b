"""Finite MDPs, Boltzmann policies and seeded trajectory simulation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels

NOISE_KINDS = ("none", "uniform", "normal")
STREAMS = ("trajectory", "perturbation", "noise", "test")


class MdpError(ValueError):
    """Malformed MDP description."""


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with mean rewards ``r[x, a]`` and optional reward noise.

    ``noise_scale[x, a]`` is the half-width for uniform noise or the standard
    deviation for normal noise; it is ignored when ``noise_kind == "none"``.
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    gamma: float = 0.9
    initial_state: int = 0
    noise_kind: str = "none"
    noise_scale: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward_mean, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MdpError(f"transition must have shape (X, A, X), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise MdpError(f"reward_mean shape {r.shape} does not match {P.shape[:2]}")
        if (P < 0).any():
            raise MdpError("transition probabilities must be nonnegative")
        if np.abs(P.sum(axis=2) - 1.0).max() > 1e-12:
            raise MdpError("transition rows must sum to 1")
        if not 0 <= self.initial_state < P.shape[0]:
            raise MdpError(f"initial_state {self.initial_state} out of range")
        if self.noise_kind not in NOISE_KINDS:
            raise MdpError(f"noise_kind must be one of {NOISE_KINDS}")
        scale = np.zeros_like(r) if self.noise_scale is None else np.broadcast_to(
            np.asarray(self.noise_scale, dtype=float), r.shape).copy()
        if (scale < 0).any():
            raise MdpError("noise_scale must be nonnegative")
        if self.noise_kind == "none":
            scale[:] = 0.0
        for arr in (P, r, scale):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_mean", r)
        object.__setattr__(self, "noise_scale", scale)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def reward_second_moment(self) -> np.ndarray:
        """E[R(x, a)^2], exact for the configured noise law."""
        if self.noise_kind == "uniform":
            var = self.noise_scale ** 2 / 3.0
        elif self.noise_kind == "normal":
            var = self.noise_scale ** 2
        else:
            var = 0.0
        return self.reward_mean ** 2 + var

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward_mean, gamma, self.initial_state,
                          self.noise_kind, self.noise_scale)

    def permuted(self, perm) -> "TabularMdp":
        """Relabel states so that new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        P = self.transition[perm][:, :, perm]
        return TabularMdp(P, self.reward_mean[perm], self.gamma, int(inv[self.initial_state]),
                          self.noise_kind, self.noise_scale[perm])

    # -- serialization
    def to_dict(self) -> dict:
        noise = {"kind": self.noise_kind}
        if self.noise_kind != "none":
            noise["scale"] = self.noise_scale.tolist()
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward_mean": self.reward_mean.tolist(),
            "reward_noise": noise,
            "gamma": self.gamma,
            "initial_state": self.initial_state,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        try:
            P = np.asarray(doc["transition"], dtype=float)
            r = np.asarray(doc["reward_mean"], dtype=float)
        except KeyError as exc:
            raise MdpError(f"missing field {exc}") from None
        for key, size in (("num_states", P.shape[0]), ("num_actions", P.shape[1] if P.ndim > 1 else None)):
            if key in doc and doc[key] != size:
                raise MdpError(f"{key}={doc[key]} disagrees with transition shape {P.shape}")
        noise = doc.get("reward_noise") or {"kind": "none"}
        if isinstance(noise, str):
            noise = {"kind": noise}
        return cls(P, r, doc.get("gamma", 0.9), doc.get("initial_state", 0),
                   noise.get("kind", "none"), noise.get("scale"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "TabularMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class BoltzmannPolicy:
    """Soft-max policy ``mu(a|x) ∝ exp(theta . features[x, a])``."""

    theta: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        feats = np.array(self.features, dtype=float)
        if feats.ndim != 3 or feats.shape[2] != theta.shape[0]:
            raise ValueError(f"features shape {feats.shape} incompatible with theta of size {theta.size}")
        theta.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "features", feats)

    def with_theta(self, theta) -> "BoltzmannPolicy":
        return BoltzmannPolicy(theta, self.features)

    def probs_table(self) -> np.ndarray:
        """mu(a|x) for every state, shape (X, A)."""
        logits = self.features @ self.theta
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def score_table(self) -> np.ndarray:
        """Compatible features psi(x, a) = grad log mu(a|x), shape (X, A, k1)."""
        mu = self.probs_table()
        mean = np.einsum("xa,xak->xk", mu, self.features)
        return self.features - mean[:, None, :]


def tabular_policy_features(num_states: int, num_actions: int) -> np.ndarray:
    """One-hot feature per (state, action) pair."""
    return np.eye(num_states * num_actions).reshape(num_states, num_actions, -1)


def policy_probs(policy: BoltzmannPolicy, x: int) -> np.ndarray:
    logits = policy.features[x] @ policy.theta
    e = np.exp(logits - logits.max())
    return e / e.sum()


def log_policy_gradient(policy: BoltzmannPolicy, x: int, a: int) -> np.ndarray:
    mu = policy_probs(policy, x)
    return policy.features[x, a] - mu @ policy.features[x]


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def draw_path_noise(mdp: TabularMdp, length: int, rng: np.random.Generator):
    """Uniforms for action/next-state choice and standardized reward noise."""
    uniforms = rng.random((2, length))
    if mdp.noise_kind == "uniform":
        eps = rng.uniform(-1.0, 1.0, length)
    elif mdp.noise_kind == "normal":
        eps = rng.standard_normal(length)
    else:
        eps = np.zeros(length)
    return uniforms[0], uniforms[1], eps


@dataclass(frozen=True, eq=False)
class CompiledMdp:
    """Contiguous arrays the kernels consume."""

    p_cum: np.ndarray
    r_mean: np.ndarray
    noise_scale: np.ndarray
    x0: int

    @classmethod
    def of(cls, mdp: TabularMdp) -> "CompiledMdp":
        return cls(np.ascontiguousarray(np.cumsum(mdp.transition, axis=2)),
                   np.ascontiguousarray(mdp.reward_mean),
                   np.ascontiguousarray(mdp.noise_scale),
                   mdp.initial_state)


def simulate(mdp: TabularMdp | CompiledMdp, probs: np.ndarray, u_act, u_next, eps, x0=None):
    """Arrays (states, actions, rewards, next_states) for a fixed policy table."""
    cm = mdp if isinstance(mdp, CompiledMdp) else CompiledMdp.of(mdp)
    start = cm.x0 if x0 is None else int(x0)
    return _kernels.sample_path(cm.p_cum, cm.r_mean, cm.noise_scale,
                                np.ascontiguousarray(np.cumsum(probs, axis=1)), start,
                                np.asarray(u_act, float), np.asarray(u_next, float),
                                np.asarray(eps, float))


def sample_trajectory(mdp: TabularMdp, policy: BoltzmannPolicy, length: int,
                      rng: np.random.Generator) -> list[Transition]:
    if length < 1:
        raise ValueError("length must be at least 1")
    s, a, r, y = simulate(mdp, policy.probs_table(), *draw_path_noise(mdp, length, rng))
    return [Transition(int(s[i]), int(a[i]), float(r[i]), int(y[i])) for i in range(length)]


def discounted_return(transitions, gamma: float) -> float:
    if not transitions:
        raise ValueError("empty trajectory")
    rewards = np.array([t.reward for t in transitions], dtype=float)
    return float(_kernels.discounted_returns(rewards[None, :], float(gamma))[0])
