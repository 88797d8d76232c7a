import math

import numpy as np
import pytest
from scipy.optimize import brentq

from magnetolab import contact, flow
from magnetolab.config import ConfigError, builtin, system_from_dict
from magnetolab.geometry import PhasePoint


def unit(sys, q, ang):
    return PhasePoint.unit(sys.surface, 0, q, ang)


@pytest.mark.parametrize("name", ["sphere-symmetric", "genus-symmetric", "flat-torus-wave", "ql-torus"])
def test_value_at_zero_strength(name):
    sys = builtin(name)
    rng = np.random.default_rng(0)
    q = {"sphere": [0.2, -0.4], "hyperbolic-halfplane": [0.3, 0.9]}.get(sys.surface.kind, [0.35, 0.55])
    for ang in rng.uniform(0, 2 * math.pi, 10):
        p = unit(sys, q, ang)
        assert abs(contact.contact_value(sys, 0.0, 0.0, 0, p.q, p.v) - 1.0) < 1e-14


def test_value_needs_primitive():
    sys = builtin("conformal-torus")
    with pytest.raises(ConfigError):
        contact.contact_value(sys, 1.0, 0.0, 0, np.array([0.1, 0.2]), np.array([1.0, 0.0]))


def test_symmetric_sphere_value():
    sys = builtin("sphere-symmetric")
    rng = np.random.default_rng(1)
    for s in (0.3, 1.0, 2.5):
        for _ in range(10):
            p = unit(sys, rng.uniform(-0.9, 0.9, 2), rng.uniform(0, 2 * math.pi))
            assert abs(contact.contact_value(sys, s, 0.0, 0, p.q, p.v) - (1 + s * s)) < 1e-12


def test_ql_value_vanishes_on_loop():
    sys, delta = contact.build_ql_torus()
    tr = flow.integrate(sys, delta.p0, delta.period, tol=1e-12, out_dt=delta.period / 16)
    vals = [contact.contact_value(sys, 1.0, 0.0, 0, q, v) for q, v in zip(tr.q, tr.v)]
    assert np.max(np.abs(vals)) < 1e-9


def test_certify_genus():
    g = builtin("genus-symmetric")
    assert contact.certify(g, 0.5, 0.0).positive
    bad = contact.certify(g, 1.2, 0.0)
    assert not bad.positive and bad.witness is not None and bad.witness["value"] < 0


def test_certify_ql_fails_on_loop():
    sys, _ = contact.build_ql_torus()
    c = contact.certify(sys, 1.0, 0.0)
    assert not c.positive
    d = np.asarray(c.witness["q"]) - 0.5
    assert abs(math.hypot(*d) - 0.25) < 1e-3
    assert abs(c.witness["value"]) < 1e-9


def test_grid_refinement_keeps_verdict():
    g = builtin("genus-symmetric")
    for s in (0.5, 0.9):
        assert contact.certify(g, s, 0.0, grid=16).positive
        assert contact.certify(g, s, 0.0, grid=32).positive


@pytest.mark.parametrize("name,svals", [("genus-symmetric", (0.2, 0.6, 0.98)),
                                        ("sphere-symmetric", (0.5, 2.0, 5.0))])
def test_certify_below_s_minus(name, svals):
    sys = builtin(name)
    s_minus, _ = contact.s_bounds(*contact.data_bounds(sys))
    for s in svals:
        assert s < s_minus - 0.01
        assert contact.certify(sys, s, 0.0).positive


def test_s_bounds_examples():
    assert contact.s_bounds(0.0, 1.0) == (math.inf, 0.0)
    assert contact.s_bounds(0.0, -1.0)[0] == 1.0
    assert contact.s_bounds(2.0, 1.0) == (1.0, 1.0)
    # roots of 1 - 3x + x^2
    lo, hi = contact.s_bounds(3.0, 1.0)
    assert abs(lo - (3 - math.sqrt(5)) / 2) < 1e-15 and abs(hi - (3 + math.sqrt(5)) / 2) < 1e-14


def test_r0_zero_form():
    z = system_from_dict({"surface": {"kind": "flat-torus"}, "f": {"type": "constant", "value": 0.0},
                          "s": 1.0})
    r = contact.estimate_r0(z, m=4)
    assert r["lower"] == 0.0 and r["upper"] == 0.0


def test_r0_linear_scaling():
    small = 0.01
    sys = system_from_dict({
        "surface": {"kind": "flat-torus"},
        "f": {"type": "fourier", "const": 0.0, "terms": [[1, 0, small, 0.0]]},
        "beta": {"type": "fourier", "x": {"const": 0.0},
                 "y": {"const": 0.0, "terms": [[1, 0, 0.0, small / (2 * math.pi)]]}},
        "s": 1.0})
    r = contact.estimate_r0(sys, m=4)
    assert r["lower"] <= r["upper"] <= small / (2 * math.pi) * (1 + 1e-12)


def test_r0_not_exact():
    sys = system_from_dict({"surface": {"kind": "flat-torus"}, "f": {"type": "constant", "value": 1.0},
                            "s": 1.0})
    with pytest.raises(contact.NotExactError):
        contact.estimate_r0(sys, m=4)


def test_ql_construction():
    sys, delta = contact.build_ql_torus(contact.QLTorusSpec(radius=0.2, width=0.1))
    assert abs(delta.period - 2 * math.pi * 0.2) < 1e-15
    assert contact.QLTorusSpec(radius=0.2, width=0.1).epsilon == 5.0
    tr = flow.integrate(sys, delta.p0, delta.period, tol=1e-12, out_dt=delta.period / 4000)
    assert np.nanmax(np.abs(flow.geodesic_curvature(sys, tr) - 5.0)) < 1e-6
    assert np.max(np.abs(sys.beta.norm(sys.surface, 0, tr.q) - 1.0)) < 1e-12
    assert np.max(np.abs(sys.nu_norm(tr.q))) == 0.0


@pytest.mark.parametrize("radius,width", [(1e-4, 5e-5), (0.3, 0.25), (0.2, 0.3)])
def test_ql_construction_rejects(radius, width):
    with pytest.raises(ConfigError):
        contact.build_ql_torus(contact.QLTorusSpec(radius=radius, width=width))


def test_a0_bound_against_grid():
    sys, _ = contact.build_ql_torus()
    info = contact.a0_bound(sys, 0.05)
    assert info["status"] == "ok" and 0 < info["a0"] < math.inf
    # independent evaluation on the same 512^2 grid
    n = 512
    g = (np.arange(n) + 0.5) / n
    Q = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    r = np.hypot(*(Q - 0.5).T)
    lo, hi = info["region"]
    out = (r <= lo) | (r >= hi)
    eps = np.min(1 - 1.05 * sys.beta.norm(sys.surface, 0, Q[out]))
    f = sys.density(0, Q[out])
    c0 = np.max(np.maximum(1.05 * f, 0.95 * f))
    assert abs(info["a0"] - eps / c0) < 1e-12 * info["a0"]


def test_a0_infinite_branch():
    # U = {f > 0} exactly: f vanishes inside the bump and is negative outside U
    sys, _ = contact.build_ql_torus()
    outer = brentq(lambda r: float(contact.ql_profile(sys, r)[1]), 0.34, 0.37, xtol=1e-15)
    info = contact.a0_bound(sys, 0.05, region=(0.05, outer))
    assert info["a0"] == math.inf and info["c0"] <= 0


def test_a0_window_too_wide():
    sys, _ = contact.build_ql_torus()
    info = contact.a0_bound(sys, 0.5)
    assert info["a0"] is None and "window" in info["status"]
