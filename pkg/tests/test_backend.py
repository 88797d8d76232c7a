import json
import os
import subprocess
import sys

import numpy as np

WORKER = """
import json, sys
import numpy as np
from magnetolab import _accel, flow
from magnetolab.config import builtin
from magnetolab.geometry import PhasePoint
out = {"backend": _accel.backend(), "runs": {}}
for name, q in [("sphere-symmetric", [0.3, 0.1]), ("genus-symmetric", [0.1, 1.0]), ("ql-torus", [0.2, 0.45])]:
    sys_ = builtin(name)
    p = PhasePoint.unit(sys_.surface, 0, q, 0.7)
    tr = flow.integrate(sys_, p, 2.0, tol=1e-11, out_dt=0.25, variational=True)
    out["runs"][name] = {"q": tr.q.tolist(), "v": tr.v.tolist(), "stm": tr.stm[-1].tolist()}
json.dump(out, sys.stdout)
"""


def run_worker(disable):
    env = dict(os.environ, MAGNETOLAB_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, "-c", WORKER], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def test_fallback_matches_compiled():
    fast, slow = run_worker(False), run_worker(True)
    assert slow["backend"] == "python"
    for name, a in fast["runs"].items():
        b = slow["runs"][name]
        for key in ("q", "v", "stm"):
            assert np.max(np.abs(np.asarray(a[key]) - np.asarray(b[key]))) < 1e-12, (name, key)
