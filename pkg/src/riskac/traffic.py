"""Grid traffic-signal environment with queue/elapsed-time state.

Default network: 2x2 junctions.  Each junction has one incoming east-west
lane (main road, priority) and one incoming north-south lane (side road).
Vehicles on the first lane of a road move to the next junction's lane with
``forward_prob`` and otherwise leave; second-junction lanes drain out of the
network.  A signal configuration picks, for every junction, which of its two
lanes is green, so there are 2**4 = 16 configurations.

Policy features (kappa1 = N * B_q * B_t * |configs|): for every lane, a one-hot
over (queue bucket, elapsed bucket, configuration).  The logit of a
configuration is the sum over lanes of the matching entries.

Critic features (kappa2 = kappa3 = N * ((B_q - 1) + (B_t - 1))): per lane,
indicators of the non-lowest queue buckets and the non-lowest elapsed
buckets.  The all-low state maps to the zero vector, so constants stay out of
the span.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels


class TrafficSpecError(ValueError):
    pass


def _as_int_tuple(x):
    return tuple(int(v) for v in x)


@dataclass(frozen=True, eq=False)
class TrafficSpec:
    num_lanes: int
    priority_lanes: tuple
    configs: np.ndarray                 # (n_cfg, N) bool green masks
    spawn_rates: np.ndarray             # (N,) Poisson means per step
    downstream: np.ndarray              # (N,) lane index or -1 for exit
    forward_prob: np.ndarray            # (N,)
    conflicts: tuple = ()               # lane pairs that may not share green
    max_queue: int = 20
    service_rate: int = 2
    weights: tuple = (0.5, 0.5, 0.6, 0.4)   # r1, s1, r2, s2
    q_thresholds: tuple = (4, 10)
    t_thresholds: tuple = (5, 15)
    lane_names: tuple = ()

    def __post_init__(self):
        N = int(self.num_lanes)
        cfg = np.array(self.configs, dtype=bool)
        if cfg.ndim != 2 or cfg.shape[1] != N:
            raise TrafficSpecError(f"configs must be (n_cfg, {N}) masks")
        spawn = np.asarray(self.spawn_rates, dtype=float)
        down = np.asarray(self.downstream, dtype=np.int64)
        fwd = np.asarray(self.forward_prob, dtype=float)
        for name, arr in (("spawn_rates", spawn), ("downstream", down), ("forward_prob", fwd)):
            if arr.shape != (N,):
                raise TrafficSpecError(f"{name} must have length {N}")
        if (spawn < 0).any() or (fwd < 0).any() or (fwd > 1).any():
            raise TrafficSpecError("rates must be nonnegative and forward_prob in [0, 1]")
        if ((down < -1) | (down >= N)).any():
            raise TrafficSpecError("downstream entries must be lane indices or -1")
        r1, s1, r2, s2 = (float(w) for w in self.weights)
        if abs(r1 + s1 - 1) > 1e-12 or abs(r2 + s2 - 1) > 1e-12:
            raise TrafficSpecError("weights need r1 + s1 = 1 and r2 + s2 = 1")
        if not r2 > s2:
            raise TrafficSpecError("priority weight r2 must exceed s2")
        prio = _as_int_tuple(self.priority_lanes)
        if any(not 0 <= i < N for i in prio):
            raise TrafficSpecError("priority lane out of range")
        conflicts = tuple(_as_int_tuple(p) for p in self.conflicts)
        for k, mask in enumerate(cfg):
            for i, j in conflicts:
                if mask[i] and mask[j]:
                    raise TrafficSpecError(f"config {k} gives green to conflicting lanes {i}, {j}")
        if self.max_queue < 1 or self.service_rate < 1:
            raise TrafficSpecError("max_queue and service_rate must be positive")
        qt, tt = _as_int_tuple(self.q_thresholds), _as_int_tuple(self.t_thresholds)
        if list(qt) != sorted(qt) or list(tt) != sorted(tt):
            raise TrafficSpecError("bucket thresholds must be increasing")
        names = tuple(self.lane_names) or tuple(f"lane{i}" for i in range(N))
        for arr in (cfg, spawn, down, fwd):
            arr.setflags(write=False)
        vals = dict(num_lanes=N, configs=cfg, spawn_rates=spawn, downstream=down,
                    forward_prob=fwd, priority_lanes=prio, conflicts=conflicts,
                    weights=(r1, s1, r2, s2), q_thresholds=qt, t_thresholds=tt,
                    max_queue=int(self.max_queue), service_rate=int(self.service_rate),
                    lane_names=names)
        for k, v in vals.items():
            object.__setattr__(self, k, v)

    @property
    def num_configs(self) -> int:
        return self.configs.shape[0]

    @property
    def n_q_buckets(self) -> int:
        return len(self.q_thresholds) + 1

    @property
    def n_t_buckets(self) -> int:
        return len(self.t_thresholds) + 1

    @property
    def kappa1(self) -> int:
        return self.num_lanes * self.n_q_buckets * self.n_t_buckets * self.num_configs

    @property
    def kappa2(self) -> int:
        return self.num_lanes * (self.n_q_buckets - 1 + self.n_t_buckets - 1)

    @property
    def priority_mask(self) -> np.ndarray:
        m = np.zeros(self.num_lanes, dtype=np.bool_)
        m[list(self.priority_lanes)] = True
        return m

    def kernel_args(self) -> tuple:
        """Positional arrays shared by the traffic kernels."""
        return (np.ascontiguousarray(self.configs), self.service_rate, self.downstream,
                self.forward_prob, self.max_queue, self.priority_mask,
                np.array(self.weights), np.array(self.q_thresholds, dtype=np.int64),
                np.array(self.t_thresholds, dtype=np.int64))

    def draw_noise(self, steps: int, rng: np.random.Generator):
        """(action uniforms, forwarding uniforms, Poisson arrivals) for ``steps`` steps."""
        u_act = rng.random(steps)
        u_fwd = rng.random((steps, self.num_lanes, self.service_rate))
        spawns = rng.poisson(self.spawn_rates, size=(steps, self.num_lanes)).astype(np.int64)
        return u_act, u_fwd, spawns

    def to_dict(self) -> dict:
        return {
            "num_lanes": self.num_lanes,
            "lane_names": list(self.lane_names),
            "priority_lanes": list(self.priority_lanes),
            "configs": self.configs.astype(int).tolist(),
            "spawn_rates": self.spawn_rates.tolist(),
            "downstream": self.downstream.tolist(),
            "forward_prob": self.forward_prob.tolist(),
            "conflicts": [list(p) for p in self.conflicts],
            "max_queue": self.max_queue,
            "service_rate": self.service_rate,
            "weights": dict(zip(("r1", "s1", "r2", "s2"), self.weights)),
            "q_thresholds": list(self.q_thresholds),
            "t_thresholds": list(self.t_thresholds),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrafficSpec":
        doc = dict(doc)
        if doc.get("preset") == "grid2x2":
            base = grid_spec().to_dict()
            base.update({k: v for k, v in doc.items() if k != "preset"})
            doc = base
        w = doc.get("weights", (0.5, 0.5, 0.6, 0.4))
        if isinstance(w, dict):
            w = (w["r1"], w["s1"], w["r2"], w["s2"])
        try:
            return cls(doc["num_lanes"], doc["priority_lanes"], doc["configs"],
                       doc["spawn_rates"], doc["downstream"], doc["forward_prob"],
                       doc.get("conflicts", ()), doc.get("max_queue", 20),
                       doc.get("service_rate", 2), w, doc.get("q_thresholds", (4, 10)),
                       doc.get("t_thresholds", (5, 15)), doc.get("lane_names", ()))
        except KeyError as exc:
            raise TrafficSpecError(f"missing field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "TrafficSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def grid_spec(rows: int = 2, cols: int = 2, main_rate: float = 0.4, side_rate: float = 0.02,
              forward_prob: float = 0.8, **overrides) -> TrafficSpec:
    """Grid with eastbound main roads and southbound side roads.

    Only the first lane of each road receives new vehicles; the main:side
    spawn ratio defaults to 100:5.
    """
    lanes, index = [], {}
    for r in range(rows):
        for c in range(cols):
            for d in ("EW", "NS"):
                index[(d, r, c)] = len(lanes)
                lanes.append((d, r, c))
    N = len(lanes)
    spawn = np.zeros(N)
    down = -np.ones(N, dtype=np.int64)
    for (d, r, c), i in index.items():
        if d == "EW":
            spawn[i] = main_rate if c == 0 else 0.0
            down[i] = index[("EW", r, c + 1)] if c + 1 < cols else -1
        else:
            spawn[i] = side_rate if r == 0 else 0.0
            down[i] = index[("NS", r + 1, c)] if r + 1 < rows else -1
    junctions = [(r, c) for r in range(rows) for c in range(cols)]
    configs = []
    for choice in itertools.product(("NS", "EW"), repeat=len(junctions)):
        mask = np.zeros(N, dtype=bool)
        for (r, c), d in zip(junctions, choice):
            mask[index[(d, r, c)]] = True
        configs.append(mask)
    conflicts = tuple((index[("EW", r, c)], index[("NS", r, c)]) for r, c in junctions)
    kw = dict(num_lanes=N, priority_lanes=tuple(i for (d, _, _), i in index.items() if d == "EW"),
              configs=np.array(configs), spawn_rates=spawn, downstream=down,
              forward_prob=np.where(down >= 0, forward_prob, 0.0), conflicts=conflicts,
              lane_names=tuple(f"{d}{r}{c}" for d, r, c in lanes))
    kw.update(overrides)
    return TrafficSpec(**kw)


@dataclass(frozen=True, eq=False)
class TrafficState:
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.int64)
        t = np.array(self.t, dtype=np.int64)
        if q.shape != t.shape or q.ndim != 1:
            raise ValueError("q and t must be equal-length vectors")
        if (q < 0).any() or (t < 0).any():
            raise ValueError("queues and elapsed times must be nonnegative")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def empty(cls, spec: TrafficSpec) -> "TrafficState":
        return cls(np.zeros(spec.num_lanes, np.int64), np.zeros(spec.num_lanes, np.int64))


class StepInfo(NamedTuple):
    departed: int
    spawned: int


def traffic_cost(state: TrafficState, spec: TrafficSpec) -> float:
    return float(_kernels.traffic_cost(state.q, state.t, spec.priority_mask, np.array(spec.weights)))


def traffic_step(state: TrafficState, action: int, spec: TrafficSpec, rng: np.random.Generator,
                 return_info: bool = False):
    """Apply configuration ``action`` for one step; returns (next state, cost)."""
    if not 0 <= action < spec.num_configs:
        raise ValueError(f"action {action} out of range")
    u_fwd = rng.random((spec.num_lanes, spec.service_rate))
    spawn = rng.poisson(spec.spawn_rates).astype(np.int64)
    return _step_with(state, action, spec, u_fwd, spawn, return_info)


def _step_with(state, action, spec, u_fwd, spawn, return_info=False):
    q, t, cost, departed, spawned = _kernels.traffic_transition(
        np.array(state.q), np.array(state.t), spec.configs[action], spec.service_rate,
        spec.downstream, spec.forward_prob, u_fwd, spawn, spec.max_queue,
        spec.priority_mask, np.array(spec.weights))
    nxt = TrafficState(q, t)
    if return_info:
        return nxt, float(cost), StepInfo(int(departed), int(spawned))
    return nxt, float(cost)


class TrafficFeatures(NamedTuple):
    policy: np.ndarray   # (n_cfg, kappa1)
    critic: np.ndarray   # (kappa2,)


def traffic_features(state: TrafficState, spec: TrafficSpec) -> TrafficFeatures:
    q_thr = np.array(spec.q_thresholds, dtype=np.int64)
    t_thr = np.array(spec.t_thresholds, dtype=np.int64)
    bq, bt = _kernels.traffic_lane_buckets(state.q, state.t, q_thr, t_thr)
    nq, nt, nc = spec.n_q_buckets, spec.n_t_buckets, spec.num_configs
    pol = np.zeros((nc, spec.kappa1))
    for lane in range(spec.num_lanes):
        for a in range(nc):
            pol[a, _kernels.traffic_policy_index(lane, bq[lane], bt[lane], a, nq, nt, nc)] = 1.0
    crit = np.zeros(spec.kappa2)
    _kernels.traffic_critic_features(bq, bt, nq, nt, crit)
    return TrafficFeatures(pol, crit)


def policy_probs_traffic(theta, state: TrafficState, spec: TrafficSpec) -> np.ndarray:
    logits = traffic_features(state, spec).policy @ np.asarray(theta, dtype=float)
    e = np.exp(logits - logits.max())
    return e / e.sum()


EPISODE_HEADER = ("step", "action", "cost", "total_queue", "departed", "spawned")


def run_episode(spec: TrafficSpec, theta, steps: int, rng: np.random.Generator,
                state: TrafficState | None = None) -> list[tuple]:
    """Step-by-step log of a frozen Boltzmann policy."""
    state = state or TrafficState.empty(spec)
    rows = []
    for n in range(steps):
        a = int(np.searchsorted(np.cumsum(policy_probs_traffic(theta, state, spec)),
                                rng.random(), side="right"))
        a = min(a, spec.num_configs - 1)
        state, cost, info = traffic_step(state, a, spec, rng, return_info=True)
        rows.append((n, a, cost, int(state.q.sum()), info.departed, info.spawned))
    return rows


def write_episode_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_HEADER)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
