"""Acceptance criteria 1-11. Each test records one pass/fail line (see conftest)."""

import itertools
import math
import time

import numpy as np
from scipy.optimize import least_squares

from magnetolab import complexes, contact, flow, linearization, mapverify
from magnetolab.config import BUILTINS, builtin, system_from_dict
from magnetolab.geometry import PhasePoint
from magnetolab.linearization import OrbitIndexData

# unit-speed starting data inside each chart-0 domain
STARTS = {
    "sphere-symmetric": ([0.3, 0.1], 0.4),
    "sphere-ambient": ([-0.2, 0.5], 1.3),
    "genus-symmetric": ([0.1, 1.0], 0.7),
    "flat-torus-wave": ([0.3, 0.6], 2.0),
    "conformal-torus": ([0.45, 0.2], -0.9),
    "ql-torus": ([0.2, 0.5], 1.6),
}


def random_start(sys, rng):
    kind = sys.surface.kind
    if kind == "sphere":
        q = rng.uniform(-0.8, 0.8, 2)
    elif kind == "hyperbolic-halfplane":
        q = np.array([rng.uniform(-1, 1), rng.uniform(0.5, 2.0)])
    else:
        q = rng.uniform(0, 1, 2)
    return PhasePoint.unit(sys.surface, 0, q, rng.uniform(0, 2 * math.pi))


def fit_circle(P):
    """Geometric least-squares circle through points P (algebraic start)."""
    x, y = P[:, 0], P[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    c = np.linalg.lstsq(A, x**2 + y**2, rcond=None)[0]
    a0, b0 = c[0] / 2, c[1] / 2
    r0 = math.sqrt(c[2] + a0**2 + b0**2)
    res = least_squares(lambda p: np.hypot(x - p[0], y - p[1]) - p[2], [a0, b0, r0],
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, b, r = res.x
    return a, b, r, float(np.max(np.abs(np.hypot(x - a, y - b) - r)))


def test_c01_sphere_period_law(record):
    t0 = time.perf_counter()
    worst = 0.0
    found = 0
    for s in (0.5, 1.0, 2.0):
        sys = builtin("sphere-symmetric", s)
        orbits = flow.find_closed_orbits(sys, {"axis": 1, "value": 0.0, "chart": 0, "speed": 1.0},
                                         grid=(2, 4), t_max=10.0)
        assert orbits, f"no closed orbits at s={s}"
        found += len(orbits)
        expect = 2 * math.pi / math.sqrt(1 + s * s)
        worst = max(worst, max(abs(o.period - expect) for o in orbits))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 30
    record(1, ok, f"{found} orbits, max |T - 2pi/sqrt(1+s^2)| = {worst:.2e} (<= 1e-6), {dt:.1f} s (< 30)")
    assert ok


def test_c02_speed_conservation(record):
    worst, slowest = 0.0, 0.0
    for name in BUILTINS:
        sys = builtin(name)
        q, ang = STARTS[name]
        p0 = PhasePoint.unit(sys.surface, 0, q, ang)
        t0 = time.perf_counter()
        tr = flow.integrate(sys, p0, 1e3, tol=1e-10)
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, flow.speed_drift(tr))
    ok = worst <= 1e-8 and slowest < 10
    record(2, ok, f"max relative drift {worst:.2e} (<= 1e-8), slowest {slowest:.1f} s (< 10)")
    assert ok


def test_c03_curvature_identity(record):
    rng = np.random.default_rng(0)
    worst = {}
    for name in BUILTINS:
        sys = builtin(name)
        dt = 1.25e-4 if name == "ql-torus" else 1e-3
        w = 0.0
        for _ in range(10):
            tr = flow.integrate(sys, random_start(sys, rng), 2.0, tol=1e-12, out_dt=dt)
            w = max(w, flow.curvature_identity_residual(sys, tr))
        worst[name] = w
    m = max(worst.values())
    ok = m <= 1e-6
    record(3, ok, f"max |kappa - s f| = {m:.2e} (<= 1e-6) over {len(worst)} systems x 10")
    assert ok, worst


def test_c04_hedlund_circles(record):
    sys = builtin("genus-symmetric", 0.5)
    rng = np.random.default_rng(1)
    resid, angerr = 0.0, 0.0
    for _ in range(5):
        tr = flow.integrate(sys, random_start(sys, rng), 3.0, tol=1e-12, out_dt=1e-2)
        a, b, r, res = fit_circle(tr.global_q())
        resid = max(resid, res)
        # angle between the circle and {y = 0} at their intersection
        theta = math.acos(min(1.0, abs(b) / r))
        angerr = max(angerr, abs(theta - math.acos(0.5)))
    ok = resid < 1e-7 and angerr <= 1e-6
    record(4, ok, f"circle-fit residual {resid:.2e} (< 1e-7), angle error {angerr:.2e} (<= 1e-6)")
    assert ok


def mathieu_torus(s=1.7, c=0.8):
    """f = cos(2 pi x)(1 + c cos(2 pi y)): the line x = 1/4 is a trajectory with a
    periodic transverse coefficient, negative hyperbolic for these values."""
    return system_from_dict({
        "surface": {"kind": "flat-torus"},
        "f": {"type": "fourier", "const": 0.0,
              "terms": [[1, 0, 1.0, 0.0], [1, 1, c / 2, 0.0], [1, -1, c / 2, 0.0]]},
        "beta": None, "s": s})


def vertical_orbit(sys):
    p0 = PhasePoint.make(sys.surface, 0, [0.25, 0.0], [0.0, -1.0])
    orb = flow._checked(sys, p0, 1.0, 1e-8, None)
    assert orb is not None
    return orb


def test_c05_iteration_formula(record):
    reports = {}
    for label, sys in (("elliptic", builtin("flat-torus-wave")), ("hyperbolic", mathieu_torus())):
        path = linearization.linearized_flow(sys, vertical_orbit(sys))
        rep = linearization.iteration_consistency(path, 8)
        assert rep["type"] == label
        assert all(r["crossing"] is not None for r in rep["rows"])
        reports[label] = rep
    mism = sum(r["mismatches"] for r in reports.values())
    e, h = reports["elliptic"], reports["hyperbolic"]
    ok = mism == 0
    record(5, ok, f"k <= 8: elliptic (mu {e['mu_bar']}, rot {e['delta_tilde']:.4f}) and "
                  f"hyperbolic (mu {h['mu_bar']}) mismatches = {mism}")
    assert ok


def test_c06_minimizer_index(record):
    sys, delta = contact.build_ql_torus()
    data = linearization.index_data(linearization.linearized_flow(sys, delta), 8)
    ok = data.mu == 0
    record(6, ok, f"QL loop: mu_bar = {data.mu} ({data.kind})")
    assert ok


def test_c07_contact_bounds(record):
    sphere = contact.s_bounds(*contact.data_bounds(builtin("sphere-symmetric")))
    genus = contact.s_bounds(*contact.data_bounds(builtin("genus-symmetric")))
    g = builtin("genus-symmetric")
    c09 = contact.certify(g, 0.9, 0.0)
    c11 = contact.certify(g, 1.1, 0.0)
    ok = (sphere == (math.inf, 0.0) and genus[0] == 1.0 and c09.positive
          and not c11.positive)
    record(7, ok, f"sphere (s-, s+) = {sphere}, genus s- = {genus[0]}, "
                  f"certify 0.9: {c09.verdict}, 1.1: {c11.verdict}")
    assert ok


def test_c08_ql_torus(record):
    sys, _ = contact.build_ql_torus()
    c0 = contact.certify(sys, 1.0, 0.0)
    w = c0.witness
    d = np.asarray(w["q"]) - np.asarray(sys.beta.params["center"])
    d -= np.floor(d + 0.5)
    off = abs(math.hypot(*d) - sys.beta.params["radius"])
    a0 = contact.a0_bound(sys, 0.05)["a0"]
    passes = {}
    if a0 is not None and 0 < a0 < math.inf:
        for frac in (0.1, 0.5, 0.9):
            passes[frac] = contact.certify(sys, 1.0, frac * a0).positive
    ok = (not c0.positive and abs(w["value"]) <= 1e-9 and off < 1e-3
          and a0 is not None and 0 < a0 < math.inf and all(passes.values()))
    record(8, ok, f"(1, 0) {c0.verdict}, witness value {w['value']:.1e} at {off:.1e} from the loop; "
                  f"a0 = {a0:.4g}, certified at a0*{list(passes)}: {all(passes.values())}")
    assert ok


def test_c09_r0_bracket(record):
    sys = builtin("ql-torus")
    t0 = time.perf_counter()
    r = contact.estimate_r0(sys, m=12)
    dt = time.perf_counter() - t0
    ok = 1 - 1e-2 <= r["lower"] <= r["upper"] <= 1 + 1e-2 and dt < 60
    record(9, ok, f"r0 in [{r['lower']:.6f}, {r['upper']:.6f}] (within 1 +- 1e-2), {dt:.1f} s (< 60)")
    assert ok


def test_c10_appendix_map(record):
    res = mapverify.verify_appendix((0.1, 1.0, 10.0), samples=1000, seed=0)
    ok = (res["max_residual"] < 1e-8 and res["max_phi_residual"] < 1e-7
          and res["min_convergence_order"] >= 1.9)
    record(10, ok, f"pullback {res['max_residual']:.1e} (< 1e-8), phi {res['max_phi_residual']:.1e} "
                   f"(< 1e-7), order {res['min_convergence_order']:.3f} (>= 1.9)")
    assert ok


def exhaustive_feasible(counts, target):
    """Oracle: try every rank vector; check realizability with an explicit complex."""
    degs = list(range(min(counts) - 1, max(counts) + 1))
    c = {d: counts.get(d, 0) for d in range(min(degs) - 1, max(degs) + 2)}
    ranges = [range(min(c[d], c[d + 1]) + 1) for d in degs]
    for ranks in itertools.product(*ranges):
        r = dict(zip(degs, ranks))
        if all(c[d] - r.get(d, 0) - r.get(d - 1, 0) == target.get(d, 0) for d in counts):
            return True, r
    return False, None


def homology_of(counts, ranks):
    """Build d_d = [[0, 0], [I_r, 0]]-type blocks and measure homology with matrix ranks."""
    mats = {}
    for d, r in ranks.items():
        m, n = counts.get(d + 1, 0), counts.get(d, 0)
        if m == 0 or n == 0:
            continue
        M = np.zeros((m, n))
        # d_d maps the last r basis vectors of C_d onto the first r of C_(d+1)
        for i in range(r):
            M[i, n - r + i] = 1.0
        mats[d] = M
    h = {}
    for d, cd in counts.items():
        out = mats.get(d)
        inc = mats.get(d - 1)
        if out is not None and inc is not None:
            assert not np.any(out @ inc)
        rk_out = np.linalg.matrix_rank(out) if out is not None else 0
        rk_in = np.linalg.matrix_rank(inc) if inc is not None else 0
        h[d] = cd - rk_out - rk_in
    return h


def test_c11_complex_feasibility(record):
    sphere = "sphere"
    cd = complexes.build_table(
        [complexes.OrbitRecord("x", OrbitIndexData(2, "hyperbolic"), 1.0)], k_max=3, morse=sphere)
    ce = complexes.build_table(
        [complexes.OrbitRecord("x", OrbitIndexData(1, "hyperbolic"), 1.0)], k_max=6, morse=sphere)
    d_ok = cd.degrees()[:6] == [2, 0, 0, -1, -2, -3] and not complexes.acyclicity_feasible(cd)["feasible"]
    e_ok = ce.degrees()[:8] == [2, 1, 0, 0, 0, -1, -1, -2] \
        and not complexes.acyclicity_feasible(ce)["feasible"]
    cg = complexes.build_table(
        [complexes.OrbitRecord("x", OrbitIndexData(0, "hyperbolic"), 1.0)], k_max=1)
    g_ok = complexes.acyclicity_feasible(cg, {2: 1, 1: 1})["feasible"]

    rot = math.sqrt(2) - 1
    cf = complexes.build_table(
        [complexes.OrbitRecord("x", OrbitIndexData(1, "elliptic", rot), 1.0)], k_max=6, morse=sphere)
    bv = complexes.bv_obstruction(cf, {"cycle": ["x^1+", "x^2+"]})
    f_ok = bv["verdict"] == "contradiction" and bv["search"]["acyclic_completions"] == 0

    good = complexes.build_table(
        [complexes.OrbitRecord("d", OrbitIndexData(0, "hyperbolic"), 1.0)], cutoff=3.5, morse="torus")
    inj_ok = complexes.delta_injective_top(good)[0]

    rng = np.random.default_rng(11)
    agree, n_tables = 0, 0
    while n_tables < 250:
        span = int(rng.integers(1, 6))
        top = int(rng.integers(-2, 3))
        counts = {top - i: int(x) for i, x in enumerate(rng.integers(0, 4, span))}
        counts = {d: v for d, v in counts.items() if v}
        if not counts or sum(counts.values()) > 12:
            continue
        target = {d: int(rng.integers(0, v + 1)) for d, v in counts.items()} \
            if rng.random() < 0.5 else {}
        n_tables += 1
        want, ranks = exhaustive_feasible(counts, target)
        got = complexes.acyclicity_feasible(counts, target)["feasible"]
        if want:
            assert homology_of(counts, ranks) == {d: target.get(d, 0) for d in counts}
        agree += want == got
    oracle_ok = agree == n_tables

    ok = d_ok and e_ok and g_ok and f_ok and inj_ok and oracle_ok
    record(11, ok, f"case d infeasible {d_ok}, case e infeasible {e_ok}, genus feasible {g_ok}, "
                   f"case f contradiction {f_ok}, Delta-injective {inj_ok}, "
                   f"oracle agreement {agree}/{n_tables}")
    assert ok
