import math

import numpy as np
import pytest

from magnetolab import contact, flow
from magnetolab.config import builtin, system_from_dict
from magnetolab.geometry import PhasePoint


def flat(c, s=1.0):
    return system_from_dict({"surface": {"kind": "flat-torus"}, "f": {"type": "constant", "value": c},
                             "s": s})


def test_zero_field_is_straight():
    sys = flat(1.0, s=0.0)
    p = PhasePoint.make(sys.surface, 0, [0.1, 0.2], [0.6, 0.8])
    tr = flow.integrate(sys, p, 3.0, tol=1e-12, out_dt=0.5)
    assert np.allclose(tr.v, [0.6, 0.8], atol=1e-13)
    assert np.allclose(tr.global_q()[-1] % 1.0, (np.array([0.1, 0.2]) + 3.0 * np.array([0.6, 0.8])) % 1.0,
                       atol=1e-11)


def test_constant_field_circle():
    c, s = 1.3, 0.8
    sys = flat(c, s)
    p = PhasePoint.make(sys.surface, 0, [0.5, 0.5], [1.0, 0.0])
    tr = flow.integrate(sys, p, 2.0, tol=1e-12, out_dt=0.1)
    w = s * c
    # closed form of v' = w j v from v(0) = e1
    t = tr.t
    v = np.column_stack([np.cos(w * t), np.sin(w * t)])
    q = np.column_stack([0.5 + np.sin(w * t) / w, 0.5 + (1 - np.cos(w * t)) / w])
    assert np.max(np.abs(tr.v - v)) < 1e-10
    d = tr.global_q() - q
    assert np.max(np.abs(d - np.round(d))) < 1e-10


def test_zero_time_single_sample():
    sys = builtin("sphere-symmetric")
    p = PhasePoint.make(sys.surface, 0, [0.3, 0.1], [0.5, 0.0])
    tr = flow.integrate(sys, p, 0.0)
    assert len(tr) == 1
    assert np.all(tr.q[0] == p.q) and np.all(tr.v[0] == p.v)


def test_sphere_period():
    sys = builtin("sphere-symmetric", 1.0)
    p = PhasePoint.unit(sys.surface, 0, [0.3, -0.4], 1.1)
    end = flow.integrate(sys, p, 2 * math.pi / math.sqrt(2), tol=1e-12).end()
    P0 = sys.surface.sphere_point(p.chart, p.q)
    P1 = sys.surface.sphere_point(end.chart, end.q)
    assert np.linalg.norm(P1 - P0) < 1e-7


@pytest.mark.parametrize("name", ["sphere-symmetric", "genus-symmetric", "conformal-torus", "ql-torus"])
def test_reversibility(name):
    sys = builtin(name)
    q = {"sphere": [0.3, 0.1], "hyperbolic-halfplane": [0.1, 1.0]}.get(sys.surface.kind, [0.2, 0.45])
    p = PhasePoint.unit(sys.surface, 0, q, 0.7)
    tol = 1e-10
    end = flow.integrate(sys, p, 3.0, tol=tol).end()
    back = flow.integrate(sys, end, -3.0, tol=tol).end()
    if sys.surface.kind == "sphere":
        assert np.linalg.norm(sys.surface.sphere_point(back.chart, back.q) - sys.surface.sphere_point(0, p.q)) \
            < 100 * tol
    else:
        d = back.q - p.q
        if sys.surface.is_torus:
            d -= np.round(d)
        assert np.max(np.abs(d)) < 100 * tol
        assert np.max(np.abs(back.v - p.v)) < 100 * tol


def test_geodesic_curvature_zero_field():
    sys = flat(1.0, s=0.0)
    p = PhasePoint.make(sys.surface, 0, [0.1, 0.2], [0.6, 0.8])
    tr = flow.integrate(sys, p, 1.0, tol=1e-12, out_dt=1e-2)
    assert np.nanmax(np.abs(flow.geodesic_curvature(sys, tr))) < 1e-8


def test_geodesic_curvature_sphere():
    sys = builtin("sphere-symmetric", 2.0)
    p = PhasePoint.unit(sys.surface, 0, [0.2, 0.1], 0.3)
    tr = flow.integrate(sys, p, 3.0, tol=1e-12, out_dt=1e-3)
    assert np.nanmax(np.abs(flow.geodesic_curvature(sys, tr) - 2.0)) < 1e-6


def test_geodesic_curvature_ql_loop():
    sys, delta = contact.build_ql_torus()
    tr = flow.integrate(sys, delta.p0, delta.period, tol=1e-12, out_dt=delta.period / 4000)
    k = flow.geodesic_curvature(sys, tr)
    assert np.nanmax(np.abs(k - 1 / sys.beta.params["radius"])) < 1e-6


def test_geodesic_curvature_needs_samples():
    sys = flat(1.0)
    p = PhasePoint.make(sys.surface, 0, [0.1, 0.2], [1.0, 0.0])
    tr = flow.integrate(sys, p, 0.01, out_dt=0.005)
    with pytest.raises(flow.ArityError):
        flow.geodesic_curvature(sys, tr)


def test_variational_matrix_against_differences():
    sys = builtin("sphere-ambient")
    p = PhasePoint.make(sys.surface, 0, [0.2, -0.3], [0.4, 0.5])
    T = 0.8
    tr = flow.integrate(sys, p, T, tol=1e-12, variational=True)
    M = tr.stm[-1]
    h = 1e-6
    fd = np.empty((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        ends = []
        for sgn in (1, -1):
            x = p.state + sgn * e
            end = flow.integrate(sys, PhasePoint.make(sys.surface, 0, x[:2], x[2:]), T, tol=1e-13).end()
            assert end.chart == 0
            ends.append(end.state)
        fd[:, j] = (ends[0] - ends[1]) / (2 * h)
    assert np.max(np.abs(M - fd)) < 1e-6


def test_sphere_orbit_family():
    sys = builtin("sphere-symmetric", 1.0)
    orbits = flow.find_closed_orbits(sys, {"axis": 1, "value": 0.0, "chart": 0, "speed": 1.0}, grid=(2, 4))
    assert orbits
    assert all(abs(o.period - 2 * math.pi / math.sqrt(2)) < 1e-6 for o in orbits)


def test_ql_loop_recovered():
    sys, delta = contact.build_ql_torus()
    orbits = flow.find_closed_orbits(sys, {"axis": 1, "value": 0.5, "chart": 0, "speed": 1.0}, grid=(3, 4),
                                     u_range=(0.7, 0.8), t_max=2.0)
    hits = [o for o in orbits if abs(o.period - delta.period) < 1e-8]
    assert hits
    assert hits[0].homotopy == {"winding": [0, 0]}
    ref = flow.integrate(sys, delta.p0, delta.period, tol=1e-12).end()
    assert np.allclose(ref.q, delta.p0.q, atol=1e-9)


def test_flat_geodesic_winding():
    sys = flat(0.0)
    orbits = flow.find_closed_orbits(sys, {"axis": 0, "value": 0.0, "chart": 0, "speed": 1.0}, grid=(2, 4),
                                     t_max=1.5)
    w10 = [o for o in orbits if o.homotopy == {"winding": [1, 0]}]
    assert w10 and abs(w10[0].period - 1.0) < 1e-9


def test_closed_orbit_json_roundtrip():
    sys = builtin("genus-symmetric")
    o = flow.ray_orbit(sys)
    o2 = flow.ClosedOrbit.from_json(sys, o.to_json())
    assert o2.to_json() == o.to_json()


def test_hedlund_angle():
    sys = builtin("genus-symmetric", 0.5)
    o = flow.ray_orbit(sys)
    # rays from the origin at angle alpha with cos(alpha) = s
    ang = math.atan2(o.p0.q[1], o.p0.q[0])
    assert min(abs(math.cos(ang) - 0.5), abs(math.cos(ang) + 0.5)) < 1e-12
