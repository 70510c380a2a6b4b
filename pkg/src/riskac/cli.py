"""Command-line interface: ``riskac {run,oracle,gradcheck,tdcheck,sweep,report}``.

Exit codes: 0 ok, 2 invalid configuration, 3 numeric failure, 4 failed
verification.  ``RISK_AC_LOG`` (error|info|debug) sets the log level.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from .actor import ScheduleError
from .checks import analytic_gradcheck, estimator_bias, td_check
from .critic import CriticFeatures
from .driver import ConfigError, NumericError, RunConfig, aggregate, run, sweep, _json_default
from .instances import random_critic_features
from .mdp import BoltzmannPolicy, MdpError, TabularMdp, tabular_policy_features
from .oracle import OracleError, RankDeficientFeatures, solve_average, solve_discounted
from .traffic import TrafficSpecError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
CONFIG_ERRORS = (ConfigError, MdpError, TrafficSpecError, ScheduleError, RankDeficientFeatures,
                 FileNotFoundError, KeyError, json.JSONDecodeError)

log = logging.getLogger("riskac")


class VerificationFailed(Exception):
    pass


def _setup_logging():
    level = os.environ.get("RISK_AC_LOG", "info").strip().upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def atomic_write(path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def bundled(name: str) -> Path:
    """Path of a config shipped with the package."""
    return Path(str(resources.files("riskac") / "configs" / name))


def _resolve(path: str | None, default: str | None = None) -> Path:
    if path is None:
        if default is None:
            raise ConfigError("--config is required")
        return bundled(default)
    p = Path(path)
    if not p.exists() and bundled(path).exists():
        return bundled(path)
    if not p.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return p


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _trace_text(trace, fmt: str) -> str:
    if fmt == "csv":
        return trace.to_csv()
    return _dump({"columns": trace.columns, "rows": trace.rows.tolist()})


def _load_mdp(args) -> TabularMdp:
    if getattr(args, "mdp", None):
        return TabularMdp.load(_resolve(args.mdp))
    if getattr(args, "config", None):
        return RunConfig.load(_resolve(args.config)).build_mdp()
    return TabularMdp.load(bundled("random5.json"))


# --------------------------------------------------------------- commands


def oracle_checkpoints(config: RunConfig, trace, every: int) -> str:
    """Exact value and variance at every ``every``-th recorded theta."""
    mdp = config.build_mdp()
    feats = config.build_policy_features(mdp)
    k1 = feats.shape[2]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if config.traits["setting"] == "discounted":
        w.writerow(["n", "oracle_value", "oracle_variance", "feasible"])
    else:
        w.writerow(["n", "oracle_rho", "oracle_variance", "feasible"])
    for row in trace.rows[every - 1::every]:
        pol = BoltzmannPolicy(row[1:1 + k1], feats)
        if config.traits["setting"] == "discounted":
            sol = solve_discounted(mdp, pol)
            val, var = sol.V[mdp.initial_state], sol.Lambda[mdp.initial_state]
        else:
            sol = solve_average(mdp, pol)
            val, var = sol.rho, sol.Lambda
        w.writerow([int(row[0]), repr(float(val)), repr(float(var)), int(var <= config.alpha)])
    return buf.getvalue()


def cmd_run(args) -> int:
    config = RunConfig.load(_resolve(args.config))
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    out = Path(args.out)
    log.info("running %s (seed %d)", config.algorithm, config.seed)
    try:
        trace = run(config)
    except NumericError as exc:
        log.error("numeric failure at outer iteration %s: %s", exc.iteration, exc)
        return EXIT_NUMERIC
    files = {f"trace.{args.format}": _trace_text(trace, args.format),
             "summary.json": trace.summary_json()}
    if config.environment.get("kind") != "traffic":
        every = max(1, len(trace.rows) // 20)
        files["oracle_checkpoints.csv"] = oracle_checkpoints(config, trace, every)
    for name, text in files.items():
        atomic_write(out / name, text)
    s = trace.summary
    msg = f"{config.algorithm}: lambda={s.get('lambda_final', 0.0):.4g}"
    if "oracle_variance_final" in s:
        msg += f" oracle_variance={s['oracle_variance_final']:.4g} (alpha={config.alpha:.4g})"
    if "test" in s:
        msg += f" test_mean={s['test']['mean']:.4g} test_variance={s['test']['variance']:.4g}"
    print(msg)
    return EXIT_OK


def _parse_theta(text, k1, default=0.0):
    if text is None:
        return np.full(k1, default)
    vals = np.array([float(v) for v in text.split(",")])
    if vals.size == 1:
        vals = np.full(k1, vals[0])
    if vals.size != k1:
        raise ConfigError(f"theta needs {k1} entries, got {vals.size}")
    return vals


def cmd_oracle(args) -> int:
    if args.config:
        config = RunConfig.load(_resolve(args.config))
        mdp = config.build_mdp()
        feats = config.build_policy_features(mdp)
    else:
        mdp = _load_mdp(args)
        feats = tabular_policy_features(mdp.num_states, mdp.num_actions)
    pol = BoltzmannPolicy(_parse_theta(args.theta, feats.shape[2]), feats)
    if args.mode == "discounted":
        sol = solve_discounted(mdp, pol)
    else:
        sol = solve_average(mdp, pol)
    doc = {"mode": args.mode, "theta": pol.theta, "policy": pol.probs_table(), **sol.to_dict()}
    text = _dump(doc)
    if args.out:
        atomic_write(Path(args.out) / f"oracle_{args.mode}.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    mdp = _load_mdp(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    k1 = args.kappa1
    feats = rng.standard_normal((mdp.num_states, mdp.num_actions, k1))
    theta = 0.5 * rng.standard_normal(k1)
    analytic = analytic_gradcheck(mdp, feats, theta, args.lam)
    rows = [("analytic", name, err, 1e-5, err < 1e-5) for name, err in analytic.items()
            if name != "L_lambda0_exact"]
    rows.append(("analytic", "L(lambda=0) == -gradV", 0.0, 0.0, analytic["L_lambda0_exact"]))
    for kind, label in (("rademacher", "spsa"), ("gaussian", "sf")):
        rep = estimator_bias(mdp, feats, theta, args.lam, kind, (args.beta, args.beta / 2),
                             args.draws, rng)
        for beta, err, tol in zip(rep.betas, rep.errors, rep.tolerances):
            rows.append((label, f"bias beta={beta:g}", err, tol, err <= tol))
        rows.append((label, "bias ratio beta/2 : beta", rep.ratio, 1.5, rep.ratio <= 1.5))
    ok = all(r[4] for r in rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "check", "value", "threshold", "pass"])
    for g, name, val, thr, passed in rows:
        w.writerow([g, name, f"{val:.3e}", f"{thr:g}", "PASS" if passed else "FAIL"])
    text = buf.getvalue() if args.format == "csv" else _dump(
        [dict(zip(("group", "check", "value", "threshold", "pass"), r)) for r in rows])
    if args.out:
        atomic_write(Path(args.out) / f"gradcheck.{args.format}", text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_tdcheck(args) -> int:
    mdp = _load_mdp(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.features == "tabular":
        cf = CriticFeatures.identity(mdp.num_states)
    elif args.features.startswith("random:"):
        k = int(args.features.split(":", 1)[1])
        if not 0 < k < mdp.num_states:
            raise ConfigError(f"random features need 0 < K < {mdp.num_states}")
        cf = CriticFeatures(random_critic_features(rng, mdp.num_states, k),
                            random_critic_features(rng, mdp.num_states, k))
    elif args.features.startswith("file:"):
        doc = json.loads(Path(args.features[5:]).read_text())
        cf = CriticFeatures(np.asarray(doc["phi_v"], float),
                            np.asarray(doc.get("phi_u", doc["phi_v"]), float))
    else:
        raise ConfigError("--features must be 'tabular', 'random:K' or 'file:PATH'")
    feats = tabular_policy_features(mdp.num_states, mdp.num_actions)
    pol = BoltzmannPolicy(0.5 * rng.standard_normal(feats.shape[2]), feats)
    rep = td_check(mdp, pol, cf, args.samples, rng)
    doc = {"v_relative_error": rep.v_rel, "u_relative_error": rep.u_rel,
           "threshold": 0.05, "sym_eigenvalues": rep.sym_eigenvalues,
           "mean_field_error_curve": rep.curve[:: max(1, len(rep.curve) // 50)],
           "tabular_fixed_point_error": [rep.tabular_v_err, rep.tabular_u_err]}
    text = _dump(doc)
    if args.out:
        atomic_write(Path(args.out) / "tdcheck.json", text)
    sys.stdout.write(text)
    return EXIT_OK if rep.passed() else EXIT_VERIFY


def _aggregate_csv(table) -> str:
    buf = io.StringIO()
    if not table:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def load_sweep(path: Path) -> tuple[RunConfig, list, list]:
    doc = json.loads(path.read_text())
    base = doc.get("base", {})
    if isinstance(base, str):
        local = path.parent / base
        base_cfg = RunConfig.load(local if local.exists() else _resolve(base))
    else:
        base_cfg = RunConfig.from_dict(base)
    algorithms = doc.get("algorithms") or [base_cfg.algorithm]
    seeds = doc.get("seeds") or list(range(int(doc.get("num_seeds", 10))))
    for alg in algorithms:
        RunConfig.from_dict({**base_cfg.to_dict(), "algorithm": alg})
    return base_cfg, algorithms, seeds


def cmd_sweep(args) -> int:
    base, algorithms, seeds = load_sweep(_resolve(args.config))
    if args.seed is not None:
        seeds = [args.seed + i for i in range(len(seeds))]
    out = Path(args.out)
    results, failures = sweep(base, algorithms, seeds, args.workers, return_failures=True)
    for (alg, seed), exc in failures.items():
        log.error("run %s seed %d failed: %s", alg, seed, exc)
    for (alg, seed), trace in results.items():
        stem = f"{alg}_seed{seed}"
        atomic_write(out / "runs" / f"{stem}.{args.format}", _trace_text(trace, args.format))
        atomic_write(out / "runs" / f"{stem}.summary.json", trace.summary_json())
    table = aggregate(results)
    atomic_write(out / "aggregate.csv", _aggregate_csv(table))
    sys.stdout.write(_aggregate_csv(table))
    if failures:
        atomic_write(out / "failures.json", _dump(
            [{"algorithm": a, "seed": s, "error": str(e)} for (a, s), e in failures.items()]))
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.out)
    summaries = sorted(root.rglob("*summary.json"))
    if not summaries:
        raise ConfigError(f"no run summaries under {root}")
    rows = []
    for p in summaries:
        s = json.loads(p.read_text())
        t = s.get("test", {})
        rows.append({"run": str(p.relative_to(root)), "algorithm": s.get("algorithm"),
                     "seed": s.get("seed"), "lambda_final": s.get("lambda_final"),
                     "oracle_variance_final": s.get("oracle_variance_final"),
                     "alpha": s.get("alpha"), "test_mean": t.get("mean"),
                     "test_variance": t.get("variance"),
                     "test_step_variance": t.get("step_variance")})
    if args.format == "json":
        text = _dump(rows)
    else:
        text = _aggregate_csv(rows)
    atomic_write(root / f"report.{args.format}", text)
    sys.stdout.write(text)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False, out_default=None):
        sp.add_argument("--config", required=config_required,
                        help="JSON config (a bundled config name also works)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the root seed")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("run", help="one learning run")
    common(sp, True, "riskac_out")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("oracle", help="exact solution for an MDP and theta")
    common(sp)
    sp.add_argument("--mdp", help="MDP JSON file")
    sp.add_argument("--theta", help="comma-separated parameters (one value broadcasts)")
    sp.add_argument("--mode", choices=("discounted", "average"), default="discounted")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gradcheck", help="analytic and stochastic gradients vs the oracle")
    common(sp)
    sp.add_argument("--mdp", help="MDP JSON file (default: bundled random5.json)")
    sp.add_argument("--kappa1", type=int, default=6)
    sp.add_argument("--lam", type=float, default=0.1)
    sp.add_argument("--beta", type=float, default=0.05)
    sp.add_argument("--draws", type=int, default=20000)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("tdcheck", help="stochastic TD critic vs the exact fixed point")
    common(sp)
    sp.add_argument("--mdp", help="MDP JSON file (default: bundled random5.json)")
    sp.add_argument("--features", default="tabular",
                    help="'tabular', 'random:K' or 'file:PATH' (JSON with phi_v, phi_u)")
    sp.add_argument("--samples", type=int, default=200_000)
    sp.set_defaults(func=cmd_tdcheck)

    sp = sub.add_parser("sweep", help="all (algorithm, seed) pairs of a sweep spec")
    common(sp, True, "riskac_sweep")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="tabulate run summaries found under --out")
    common(sp, False, "riskac_sweep")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericError, OracleError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
