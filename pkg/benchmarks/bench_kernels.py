"""Compare the numba kernels with the pure-Python fallback.

Each backend runs in its own interpreter because the switch is read at
import time. Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--time 20]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from magnetolab import backend
from magnetolab.config import builtin
from magnetolab.flow import integrate
from magnetolab.geometry import PhasePoint

t_end, repeat = float(sys.argv[1]), int(sys.argv[2])
cases = {
    "sphere-symmetric": ([0.3, 0.1], [0.5, 0.0]),
    "ql-torus": ([0.2, 0.5], [0.0, 1.0]),
    "genus-symmetric": ([0.0, 1.0], [1.0, 0.0]),
}
out = {"backend": backend(), "t_end": t_end, "cases": {}}
for name, (q, v) in cases.items():
    sys_ = builtin(name)
    p0 = PhasePoint.make(sys_.surface, 0, q, v)
    t0 = time.perf_counter()
    integrate(sys_, p0, 1e-3)  # compile / warm up
    warm = time.perf_counter() - t0
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        tr = integrate(sys_, p0, t_end)
        best = min(best, time.perf_counter() - t0)
    out["cases"][name] = {"seconds": best, "warmup": warm, "steps": len(tr.t)}
print(json.dumps(out))
"""


def run_backend(disable, t_end, repeat):
    env = dict(os.environ, MAGNETOLAB_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(t_end), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--time", type=float, default=20.0, help="integration time per case")
    a = ap.parse_args()
    fast = run_backend(False, a.time, a.repeat)
    slow = run_backend(True, a.time, a.repeat)
    print(f"{'system':<20}{'numba [s]':>12}{'python [s]':>12}{'speedup':>10}")
    for name, r in fast["cases"].items():
        p = slow["cases"][name]
        print(f"{name:<20}{r['seconds']:>12.4f}{p['seconds']:>12.4f}"
              f"{p['seconds'] / r['seconds']:>10.1f}")
    print(f"backends: {fast['backend']} vs {slow['backend']}")


if __name__ == "__main__":
    main()
