"""Time the numba kernels against the pure-numpy fallback.

Each path runs in its own interpreter because the flag is read at import.
Nested kernels call each other through module globals, so ``.py_func`` on
the outer kernel alone would still hit compiled code.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from riskac import _jit, _kernels
from riskac.critic import CriticFeatures
from riskac.driver import RunConfig, run
from riskac.mdp import BoltzmannPolicy, TabularMdp, make_streams, simulate, tabular_policy_features
from importlib import resources

repeat, quick = int(sys.argv[1]), sys.argv[2] == "1"
scale = 10 if quick else 1
mdp = TabularMdp.load(str(resources.files("riskac") / "configs" / "random5.json"))
feats = tabular_policy_features(mdp.num_states, mdp.num_actions)
pol = BoltzmannPolicy(np.zeros(feats.shape[2]), feats)
n = 200_000 // scale
rng = make_streams(0)["trajectory"]
noise = rng.random((2, n))
s, _, r, y = simulate(mdp, pol.probs_table(), noise[0], noise[1], np.zeros(n))
cf = CriticFeatures.identity(mdp.num_states)

def td():
    v, u = np.zeros(5), np.zeros(5)
    _kernels.td_discounted_pass(s, r, y, cf.phi_v, cf.phi_u, v, u, mdp.gamma, 1.0, 0.66, 0)
    return np.r_[v, u]

def path():
    return simulate(mdp, pol.probs_table(), noise[0], noise[1], np.zeros(n))[2]

def cfg(name, iters):
    c = RunConfig.load(str(resources.files("riskac") / "configs" / name))
    return c.with_overrides(outer_iterations=iters, test_episodes=0)

avg = cfg("average_risky_safe.json", 200 // scale)
traffic = cfg("traffic_grid.json", 100 // scale)
disc = cfg("risky_safe.json", 200 // scale)
work = {
    "sample_path": path,
    "td_discounted_pass": td,
    "average_ac_loop (run)": lambda: run(avg).rows,
    "traffic_ac_loop (run)": lambda: run(traffic).rows,
    "discounted driver (run)": lambda: run(disc, oracle=False).rows,
}
out = {"numba": _jit.HAS_NUMBA}
for name, fn in work.items():
    t0 = time.perf_counter(); ref = fn(); first = time.perf_counter() - t0
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t0)
    out[name] = {"first": first, "best": best, "checksum": float(np.sum(np.abs(ref)))}
print(json.dumps(out))
"""


def measure(disable: bool, repeat: int, quick: bool) -> dict:
    env = dict(os.environ, RISKAC_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat), "1" if quick else "0"],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="one tenth of the workload")
    args = ap.parse_args(argv)
    fast = measure(False, args.repeat, args.quick)
    slow = measure(True, args.repeat, args.quick)
    if not fast.pop("numba"):
        print("numba unavailable: both columns use the fallback")
    slow.pop("numba")
    print(f"{'workload':26s} {'numba s':>10s} {'(first)':>10s} {'numpy s':>10s} {'speedup':>8s}  same")
    for name in fast:
        a, b = fast[name], slow[name]
        same = abs(a["checksum"] - b["checksum"]) <= 1e-9 * max(1.0, abs(b["checksum"]))
        print(f"{name:26s} {a['best']:10.4f} {a['first']:10.4f} {b['best']:10.4f} "
              f"{b['best'] / a['best']:8.1f}x  {'yes' if same else 'NO'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
