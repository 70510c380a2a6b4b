"""Learning runs: two-trajectory discounted algorithms and online average-reward AC."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .actor import (ActorState, DegenerateVariance, StepSchedules, first_order_step,
                    lambda_step, newton_step, sharpe_direction_discounted)
from .critic import CriticFeatures, DiscountedCriticState, run_td_discounted
from .instances import average_risky_safe_mdp, risky_safe_mdp, start_state_policy_features
from .mdp import (BoltzmannPolicy, CompiledMdp, TabularMdp, draw_path_noise, make_streams,
                  simulate, tabular_policy_features)
from .perturb import (HessianAccumulator, draw_perturbation, hessian_sample, sf_gradient,
                      sf_hessian_step, spd_project, spsa_gradient, spsa_hessian_step)
from .traffic import TrafficSpec, TrafficState, grid_spec

log = logging.getLogger(__name__)

DISCOUNTED = ("rs-spsa-g", "rs-sf-g", "rs-spsa-n", "rs-sf-n", "spsa-g", "sf-g", "spsa-n", "sf-n",
              "rs-spsa-g-sr", "rs-sf-g-sr")
AVERAGE = ("rs-ac", "ac", "rs-ac-sr")
ALGORITHMS = DISCOUNTED + AVERAGE

# risk-sensitive algorithm -> risk-neutral counterpart
BASELINE = {"rs-spsa-g": "spsa-g", "rs-sf-g": "sf-g", "rs-spsa-n": "spsa-n", "rs-sf-n": "sf-n",
            "rs-spsa-g-sr": "spsa-g", "rs-sf-g-sr": "sf-g", "rs-ac": "ac", "rs-ac-sr": "ac"}


class ConfigError(ValueError):
    pass


class NumericError(FloatingPointError):
    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration


def algorithm_traits(algorithm: str) -> dict:
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    if algorithm in AVERAGE:
        mode = {"rs-ac": "lagrange", "ac": "neutral", "rs-ac-sr": "sharpe"}[algorithm]
        return {"setting": "average", "mode": mode, "newton": False, "kind": None}
    sharpe = algorithm.endswith("-sr")
    core = algorithm[3:] if algorithm.startswith("rs-") else algorithm
    core = core[:-3] if sharpe else core
    family, order = core.split("-")
    mode = "sharpe" if sharpe else ("lagrange" if algorithm.startswith("rs-") else "neutral")
    return {"setting": "discounted", "mode": mode, "newton": order == "n",
            "kind": "rademacher" if family == "spsa" else "gaussian"}


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    algorithm: str = "rs-spsa-g"
    environment: dict = field(default_factory=lambda: {"kind": "risky_safe"})
    policy_features: dict = field(default_factory=lambda: {"kind": "auto"})
    critic_features: dict = field(default_factory=lambda: {"kind": "tabular"})
    schedules: StepSchedules = field(default_factory=StepSchedules)
    beta: float = 0.2
    alpha: float = 20.0
    gamma: float | None = None
    outer_iterations: int = 500
    inner_length: dict = field(default_factory=lambda: {"rule": "constant", "C": 5.0})
    theta_box: tuple = (0.0, 10.0)
    theta_init: list | float | None = None
    lambda_init: float = 0.0
    lambda_max: float = 1000.0
    seed: int = 0
    critic_reset: bool = False
    common_random_numbers: bool = True
    hessian_init: str = "identity"
    hessian_floor: float = 1e-4
    test_episodes: int = 50
    test_length: int | None = None
    record_every: int = 1

    def __post_init__(self):
        if isinstance(self.schedules, dict):
            self.schedules = StepSchedules.from_dict(self.schedules)
        self.traits = algorithm_traits(self.algorithm)
        if self.beta <= 0 or self.alpha < 0 or self.lambda_max <= 0:
            raise ConfigError("need beta > 0, alpha >= 0, lambda_max > 0")
        if self.outer_iterations < 1 or self.record_every < 1 or self.test_episodes < 0:
            raise ConfigError("outer_iterations and record_every must be positive")
        if self.outer_iterations % self.record_every:
            raise ConfigError("record_every must divide outer_iterations")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        lo, hi = self.theta_box
        if lo > hi:
            raise ConfigError("theta_box lower bound exceeds upper bound")
        rule = self.inner_length.get("rule", "constant")
        if rule not in ("constant", "power"):
            raise ConfigError("inner_length rule must be 'constant' or 'power'")
        if self.environment.get("kind") == "traffic" and self.traits["setting"] != "average":
            raise ConfigError("the traffic environment runs the average-reward algorithms only")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "traits"}
        d["schedules"] = self.schedules.to_dict()
        d["theta_box"] = list(self.theta_box)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        try:
            return cls(**doc)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = Path(path).parent
        env = doc.get("environment", {})
        for key in ("path", "spec_path"):
            if key in env and not Path(env[key]).is_absolute():
                env[key] = str(base / env[key])
        return cls.from_dict(doc)

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update(kw)
        return RunConfig.from_dict(d)

    def inner_length_at(self, n: int) -> int:
        """Trajectory length m_n for outer iteration n (counted from 0)."""
        rule = self.inner_length.get("rule", "constant")
        C = float(self.inner_length.get("C", 5.0))
        if rule == "constant":
            if "length" in self.inner_length:
                return int(self.inner_length["length"])
            return int(math.ceil(C / (1.0 - self.discount()) - 1e-9))
        return max(1, int(math.ceil(C * (n + 1) ** float(self.inner_length.get("exponent", 0.25)))))

    def discount(self) -> float:
        if self.gamma is not None:
            return self.gamma
        env = self.environment
        return float(env.get("gamma", 0.9)) if env.get("kind") == "traffic" else self.build_mdp().gamma

    # -- environment construction
    def build_mdp(self) -> TabularMdp:
        env = self.environment
        kind = env.get("kind")
        if kind == "risky_safe":
            mdp = risky_safe_mdp(env.get("gamma", 0.9), env.get("high", 10.0),
                                 env.get("safe_reward", 4.0))
        elif kind == "average_risky_safe":
            mdp = average_risky_safe_mdp(env.get("high", 2.0), env.get("safe_reward", 0.8))
        elif kind == "tabular":
            if "mdp" in env:
                mdp = TabularMdp.from_dict(env["mdp"])
            elif "path" in env:
                mdp = TabularMdp.load(env["path"])
            else:
                raise ConfigError("tabular environment needs 'mdp' or 'path'")
        else:
            raise ConfigError(f"no tabular MDP for environment kind {kind!r}")
        if self.gamma is not None:
            mdp = mdp.with_gamma(self.gamma)
        return mdp

    def build_traffic(self) -> TrafficSpec:
        env = self.environment
        if "spec" in env:
            return TrafficSpec.from_dict(env["spec"])
        if "spec_path" in env:
            return TrafficSpec.load(env["spec_path"])
        return grid_spec(**env.get("grid", {}))

    def build_policy_features(self, mdp: TabularMdp) -> np.ndarray:
        pf = self.policy_features
        kind = pf.get("kind", "auto")
        if kind == "auto":
            kind = "start_logit" if self.environment.get("kind") in (
                "risky_safe", "average_risky_safe") else "tabular"
        if kind == "tabular":
            return tabular_policy_features(mdp.num_states, mdp.num_actions)
        if kind == "start_one_hot":
            return start_state_policy_features(mdp.num_states, mdp.num_actions)
        if kind == "start_logit":
            f = np.zeros((mdp.num_states, mdp.num_actions, 1))
            f[mdp.initial_state, 0, 0] = 1.0
            return f
        if kind == "inline":
            f = np.asarray(pf["data"], dtype=float)
            if f.shape[:2] != (mdp.num_states, mdp.num_actions):
                raise ConfigError("inline policy features must have shape (X, A, k1)")
            return f
        raise ConfigError(f"unknown policy feature kind {kind!r}")

    def build_critic_features(self, num_states: int) -> CriticFeatures:
        cf = self.critic_features
        kind = cf.get("kind", "tabular")
        if kind == "tabular":
            return CriticFeatures.identity(num_states)
        if kind == "inline":
            pv = np.asarray(cf["phi_v"], dtype=float)
            pu = np.asarray(cf.get("phi_u", cf["phi_v"]), dtype=float)
            return CriticFeatures(pv, pu)
        raise ConfigError(f"unknown critic feature kind {kind!r}")

    def initial_theta(self, kappa1: int) -> np.ndarray:
        lo, hi = self.theta_box
        if self.theta_init is None:
            return np.full(kappa1, 0.5 * (lo + hi))
        th = np.broadcast_to(np.asarray(self.theta_init, dtype=float), (kappa1,)).copy()
        return th


# ------------------------------------------------------------------ trace


@dataclass
class RunTrace:
    """Per-iteration records plus test-phase samples and a summary."""

    algorithm: str
    setting: str
    columns: list
    rows: np.ndarray
    test_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    summary: dict = field(default_factory=dict)

    @property
    def theta_final(self) -> np.ndarray:
        k1 = sum(c.startswith("theta_") for c in self.columns)
        return self.rows[-1, 1:1 + k1].copy()

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([str(int(row[0]))] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _check_finite(values, n):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite iterate at outer iteration {n}", n)


# ------------------------------------------------------------- discounted


def run_discounted(config: RunConfig, oracle: bool = True) -> RunTrace:
    tr = config.traits
    if tr["setting"] != "discounted":
        raise ConfigError(f"{config.algorithm} is not a discounted algorithm")
    mdp = config.build_mdp()
    cm = CompiledMdp.of(mdp)
    feats = config.build_policy_features(mdp)
    cf = config.build_critic_features(mdp.num_states)
    k1 = feats.shape[2]
    streams = make_streams(config.seed)
    rng_traj, rng_pert = streams["trajectory"], streams["perturbation"]
    sch = config.schedules
    x0 = mdp.initial_state
    gamma = mdp.gamma

    lo, hi = config.theta_box
    actor = ActorState(config.initial_theta(k1), lo, hi, config.lambda_init, config.lambda_max,
                       config.alpha)
    if tr["mode"] == "neutral":
        actor = replace(actor, lam=0.0)
    crit = DiscountedCriticState.zeros(cf)
    crit_p = DiscountedCriticState.zeros(cf)
    hess = HessianAccumulator.identity(k1) if config.hessian_init == "identity" \
        else HessianAccumulator.zeros(k1)
    policy = BoltzmannPolicy(actor.theta, feats)

    columns = ["n"] + [f"theta_{i}" for i in range(k1)] + ["lambda", "v_x0", "u_x0", "var_hat"]
    rows = []
    skipped = 0
    for n in range(config.outer_iterations):
        step = n + 1
        draw = draw_perturbation(tr["kind"], k1, tr["newton"] and tr["kind"] == "rademacher",
                                 rng_pert, config.beta)
        theta_p = actor.theta + draw.offset()
        m = config.inner_length_at(n)
        noise = draw_path_noise(mdp, m, rng_traj)
        noise_p = noise if config.common_random_numbers else draw_path_noise(mdp, m, rng_traj)

        probs = policy.with_theta(actor.theta).probs_table()
        probs_p = policy.with_theta(theta_p).probs_table()
        s, _, r, y = simulate(cm, probs, *noise)
        sp, _, rp, yp = simulate(cm, probs_p, *noise_p)
        if config.critic_reset:
            crit = DiscountedCriticState.zeros(cf)
            crit_p = DiscountedCriticState.zeros(cf)
        z3 = sch.zeta3
        crit = run_td_discounted(crit, s, r, y, cf, gamma, z3.scale, z3.power, restart=True)
        crit_p = run_td_discounted(crit_p, sp, rp, yp, cf, gamma, z3.scale, z3.power, restart=True)

        v, u = crit.value(cf, x0), crit.square_value(cf, x0)
        vp, up = crit_p.value(cf, x0), crit_p.square_value(cf, x0)
        dV, dU = vp - v, up - u
        var_hat = u - v * v
        lam = actor.lam

        if tr["mode"] == "sharpe":
            try:
                direction = sharpe_direction_discounted(dV, dU, v, u, draw)
            except DegenerateVariance:
                direction = None
                skipped += 1
        else:
            grad = spsa_gradient if tr["kind"] == "rademacher" else sf_gradient
            direction = grad(dV, dU, v, lam, draw)

        if direction is not None:
            if tr["newton"]:
                dL = hessian_sample(v, vp, u, up, lam)
                hstep = spsa_hessian_step if tr["kind"] == "rademacher" else sf_hessian_step
                hess = hstep(hess, dL, draw, sch.zeta2p(step))
                _, M = spd_project(hess.H, config.hessian_floor)
                actor = newton_step(actor, M, direction, sch.zeta2(step))
            else:
                actor = first_order_step(actor, direction, sch.zeta2(step))
        if tr["mode"] == "lagrange":
            actor = lambda_step(actor, var_hat, sch.zeta1(step))
        _check_finite(np.r_[actor.theta, actor.lam, v, u], n)
        if (n + 1) % config.record_every == 0:
            rows.append(np.r_[n, actor.theta, actor.lam, v, u, var_hat])

    trace = RunTrace(config.algorithm, "discounted", columns, np.array(rows))
    trace.summary = {"algorithm": config.algorithm, "seed": config.seed,
                     "theta_final": actor.theta, "lambda_final": actor.lam,
                     "alpha": config.alpha, "skipped_actor_steps": skipped,
                     "perturbation_stream": _stream_key(config.seed, "perturbation")}
    if config.test_episodes:
        stats = policy_test(config, actor.theta, config.test_episodes)
        trace.test_samples = stats.pop("samples")
        trace.summary["test"] = stats
    if oracle and mdp.num_states <= 500:
        trace.summary.update(oracle_diagnostics(config, actor.theta))
    return trace


def _stream_key(seed: int, name: str) -> list:
    from .mdp import STREAMS
    return [int(seed), STREAMS.index(name)]


def oracle_diagnostics(config: RunConfig, theta) -> dict:
    """Exact value, variance and constraint status at ``theta``."""
    from .oracle import solve_average, solve_discounted
    if config.environment.get("kind") == "traffic":
        return {}
    mdp = config.build_mdp()
    policy = BoltzmannPolicy(theta, config.build_policy_features(mdp))
    if config.traits["setting"] == "discounted":
        sol = solve_discounted(mdp, policy)
        V, U, Lam = sol.at(mdp.initial_state)
        out = {"oracle_value_final": V, "oracle_square_value_final": U,
               "oracle_variance_final": Lam}
    else:
        sol = solve_average(mdp, policy)
        out = {"oracle_rho_final": sol.rho, "oracle_eta_final": sol.eta,
               "oracle_variance_final": sol.Lambda}
    out["oracle_feasible"] = bool(out["oracle_variance_final"] <= config.alpha)
    return out


# ---------------------------------------------------------------- average


def _mode_code(mode: str) -> int:
    return {"lagrange": _kernels.MODE_LAGRANGE, "neutral": _kernels.MODE_NEUTRAL,
            "sharpe": _kernels.MODE_SHARPE}[mode]


def _sched_array(sch: StepSchedules) -> np.ndarray:
    return np.array([[sch.zeta1.scale, sch.zeta1.power], [sch.zeta2.scale, sch.zeta2.power],
                     [sch.zeta3.scale, sch.zeta3.power]])


def run_average(config: RunConfig, oracle: bool = True) -> RunTrace:
    """Online average-reward actor-critic.

    One outer iteration is ``inner_length_at(n)`` consecutive online steps;
    step sizes are indexed by the global step count.
    """
    tr = config.traits
    if tr["setting"] != "average":
        raise ConfigError(f"{config.algorithm} is not an average-reward algorithm")
    if config.environment.get("kind") == "traffic":
        return _run_traffic(config)
    mdp = config.build_mdp()
    cm = CompiledMdp.of(mdp)
    feats = np.ascontiguousarray(config.build_policy_features(mdp))
    cf = config.build_critic_features(mdp.num_states)
    k1 = feats.shape[2]
    streams = make_streams(config.seed)
    rng = streams["trajectory"]
    lo, hi = config.theta_box
    box_lo, box_hi = np.full(k1, float(lo)), np.full(k1, float(hi))
    theta = np.clip(config.initial_theta(k1), box_lo, box_hi)
    v, u = np.zeros(cf.kappa2), np.zeros(cf.kappa3)
    lam = 0.0 if tr["mode"] == "neutral" else float(config.lambda_init)
    rho = eta = 0.0
    x = mdp.initial_state
    sched = _sched_array(config.schedules)
    mode = _mode_code(tr["mode"])
    steps_done = 0
    rows = []
    columns = ["n"] + [f"theta_{i}" for i in range(k1)] + ["lambda", "rho_hat", "eta_hat", "var_hat"]
    for n in range(config.outer_iterations):
        m = config.inner_length_at(n)
        u_act, u_next, eps = draw_path_noise(mdp, m, rng)
        hist, x, lam, rho, eta = _kernels.average_ac_loop(
            cm.p_cum, cm.r_mean, cm.noise_scale, feats, cf.phi_v, cf.phi_u, x,
            theta, lam, v, u, rho, eta, sched, config.schedules.k, mode, config.alpha,
            box_lo, box_hi, config.lambda_max, 1e-8, u_act, u_next, eps, steps_done, m)
        steps_done += m
        _check_finite(np.r_[theta, lam, rho, eta], n)
        if (n + 1) % config.record_every == 0:
            rows.append(np.r_[n, hist[-1]])
    trace = RunTrace(config.algorithm, "average", columns, np.array(rows))
    trace.summary = {"algorithm": config.algorithm, "seed": config.seed, "theta_final": theta,
                     "lambda_final": lam, "rho_hat_final": rho, "eta_hat_final": eta,
                     "alpha": config.alpha, "online_steps": steps_done}
    if config.test_episodes:
        stats = policy_test(config, theta, config.test_episodes)
        trace.test_samples = stats.pop("samples")
        trace.summary["test"] = stats
    if oracle:
        trace.summary.update(oracle_diagnostics(config, theta))
    return trace


def _run_traffic(config: RunConfig) -> RunTrace:
    tr = config.traits
    spec = config.build_traffic()
    k1, k2 = spec.kappa1, spec.kappa2
    rng = make_streams(config.seed)["trajectory"]
    lo, hi = config.theta_box
    box_lo, box_hi = np.full(k1, float(lo)), np.full(k1, float(hi))
    theta = np.clip(config.initial_theta(k1), box_lo, box_hi)
    v, u = np.zeros(k2), np.zeros(k2)
    lam = 0.0 if tr["mode"] == "neutral" else float(config.lambda_init)
    rho = eta = 0.0
    q = np.zeros(spec.num_lanes, np.int64)
    t = np.zeros(spec.num_lanes, np.int64)
    sched = _sched_array(config.schedules)
    mode = _mode_code(tr["mode"])
    args = spec.kernel_args()
    steps_done = 0
    rows = []
    train_costs = []
    columns = ["n"] + [f"theta_{i}" for i in range(k1)] + ["lambda", "rho_hat", "eta_hat", "var_hat"]
    for n in range(config.outer_iterations):
        m = config.inner_length_at(n)
        u_act, u_fwd, spawns = spec.draw_noise(m, rng)
        hist, costs, q, t, lam, rho, eta = _kernels.traffic_ac_loop(
            *args, q, t, theta, lam, v, u, rho, eta, sched, config.schedules.k, mode,
            config.alpha, box_lo, box_hi, config.lambda_max, 1e-8, u_act, u_fwd, spawns,
            steps_done, m)
        steps_done += m
        train_costs.append(costs.mean())
        _check_finite(np.r_[lam, rho, eta], n)
        if (n + 1) % config.record_every == 0:
            rows.append(np.r_[n, hist[-1]])
    trace = RunTrace(config.algorithm, "average", columns, np.array(rows))
    trace.summary = {"algorithm": config.algorithm, "seed": config.seed,
                     "lambda_final": lam, "rho_hat_final": rho, "eta_hat_final": eta,
                     "alpha": config.alpha, "online_steps": steps_done,
                     "train_window_cost_mean": float(np.mean(train_costs))}
    if config.test_episodes:
        stats = policy_test(config, theta, config.test_episodes)
        trace.test_samples = stats.pop("samples")
        trace.summary["test"] = stats
    return trace


def run(config: RunConfig, oracle: bool = True) -> RunTrace:
    if config.traits["setting"] == "discounted":
        return run_discounted(config, oracle)
    return run_average(config, oracle)


# ------------------------------------------------------------------- test


def policy_test(config: RunConfig, theta_final, episodes: int = 50) -> dict:
    """Frozen-policy evaluation on the ``test`` stream.

    Discounted: one truncated discounted return per episode.  Average
    reward: one window of ``test_length`` steps per episode, reporting the
    window's mean reward (or mean cost for traffic) and the pooled per-step
    variance.
    """
    if episodes < 1:
        raise ValueError("episodes must be positive")
    rng = make_streams(config.seed)["test"]
    theta = np.asarray(theta_final, dtype=float)
    env_kind = config.environment.get("kind")
    if env_kind == "traffic":
        spec = config.build_traffic()
        length = config.test_length or 150
        args = spec.kernel_args()
        window, per_step = [], []
        for _ in range(episodes):
            u_act, u_fwd, spawns = spec.draw_noise(length, rng)
            costs, _ = _kernels.traffic_rollout(*args, np.zeros(spec.num_lanes, np.int64),
                                                np.zeros(spec.num_lanes, np.int64), theta,
                                                u_act, u_fwd, spawns)
            window.append(costs.mean())
            per_step.append(costs)
        window = np.array(window)
        per_step = np.concatenate(per_step)
        return {"episodes": episodes, "length": length, "quantity": "average_cost",
                "mean": float(window.mean()), "variance": float(window.var(ddof=1)) if episodes > 1 else 0.0,
                "step_mean": float(per_step.mean()), "step_variance": float(per_step.var()),
                "samples": window}

    mdp = config.build_mdp()
    probs = BoltzmannPolicy(theta, config.build_policy_features(mdp)).probs_table()
    cm = CompiledMdp.of(mdp)
    if config.traits["setting"] == "discounted":
        length = config.test_length or int(math.ceil(math.log(1e-6) / math.log(mdp.gamma)))
    else:
        length = config.test_length or 150
    rewards = np.empty((episodes, length))
    for e in range(episodes):
        _, _, r, _ = simulate(cm, probs, *draw_path_noise(mdp, length, rng))
        rewards[e] = r
    if config.traits["setting"] == "discounted":
        samples = _kernels.discounted_returns(rewards, mdp.gamma)
        quantity = "discounted_return"
        extra = {}
    else:
        samples = rewards.mean(axis=1)
        quantity = "average_reward"
        extra = {"step_mean": float(rewards.mean()), "step_variance": float(rewards.var())}
    var = float(samples.var(ddof=1)) if episodes > 1 else 0.0
    return {"episodes": episodes, "length": length, "quantity": quantity,
            "mean": float(samples.mean()), "variance": var, **extra, "samples": samples}


# ------------------------------------------------------------------ sweep


def _run_one(args):
    doc, keep_going = args
    cfg = RunConfig.from_dict(doc)
    if not keep_going:
        return run(cfg)
    try:
        return run(cfg)
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return exc


def sweep(base: RunConfig, algorithms, seeds, workers: int = 1, return_failures: bool = False):
    """Run every (algorithm, seed) pair; results keyed by that pair, sorted.

    With ``return_failures`` a numeric failure does not stop the sweep; the
    return value is then ``(results, failures)`` with failures mapping the
    pair to its exception.
    """
    jobs = [(alg, int(s)) for alg in algorithms for s in seeds]
    docs = [(base.with_overrides(algorithm=a, seed=s).to_dict(), return_failures) for a, s in jobs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            traces = list(ex.map(_run_one, docs))
    else:
        traces = [_run_one(d) for d in docs]
    results = dict(sorted(zip(jobs, traces)))
    if not return_failures:
        return results
    failures = {k: v for k, v in results.items() if isinstance(v, BaseException)}
    return {k: v for k, v in results.items() if k not in failures}, failures


def aggregate(results: dict) -> list[dict]:
    """Per-algorithm medians and means of test-phase statistics."""
    by_alg: dict[str, list] = {}
    for (alg, seed), trace in results.items():
        by_alg.setdefault(alg, []).append(trace)
    table = []
    for alg in sorted(by_alg):
        tests = [t.summary.get("test", {}) for t in by_alg[alg]]
        means = np.array([s.get("mean", np.nan) for s in tests])
        variances = np.array([s.get("variance", np.nan) for s in tests])
        step_var = np.array([s.get("step_variance", np.nan) for s in tests])
        ovar = np.array([t.summary.get("oracle_variance_final", np.nan) for t in by_alg[alg]])
        table.append({"algorithm": alg, "runs": len(tests),
                      "median_mean": float(np.median(means)),
                      "median_variance": float(np.median(variances)),
                      "mean_of_means": float(np.mean(means)),
                      "median_step_variance": float(np.median(step_var)),
                      "median_oracle_variance": float(np.median(ovar))})
    return table
