import math

import numpy as np
import pytest

from magnetolab.config import builtin, system_from_dict
from magnetolab.geometry import (GeometryError, PhasePoint, SingularityError, SurfaceModel,
                                 angular_form, bracket_check, coframe_eval, exterior_derivative_residual,
                                 frame, frame_coefficients, lorentz_force, total_flux)

SURFACES = {
    "sphere": SurfaceModel("sphere"),
    "flat-torus": SurfaceModel("flat-torus"),
    "halfplane": SurfaceModel("hyperbolic-halfplane", {"dilation": 1.0}),
    "conformal": builtin("conformal-torus").surface,
}


def sample_q(S, rng, n):
    if S.kind == "sphere":
        return rng.uniform(-0.9, 0.9, (n, 2))
    if S.kind == "hyperbolic-halfplane":
        return np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0.3, 2, n)])
    return rng.uniform(0, 1, (n, 2))


def fd_curvature(S, q, h=1e-4):
    """-lap(log lam) / lam^2 from central differences of lam alone."""
    def L(p):
        return math.log(float(S.lam(np.asarray(p))))
    x, y = q
    lap = (L((x + h, y)) + L((x - h, y)) + L((x, y + h)) + L((x, y - h)) - 4 * L((x, y))) / h**2
    return -lap / float(S.lam(q)) ** 2


@pytest.mark.parametrize("name,K", [("sphere", 1.0), ("flat-torus", 0.0), ("halfplane", -1.0)])
def test_model_curvature(name, K):
    S = SURFACES[name]
    q = sample_q(S, np.random.default_rng(0), 50)
    assert np.max(np.abs(S.gaussian_curvature(q) - K)) < 1e-10


def test_curvature_matches_finite_differences():
    rng = np.random.default_rng(1)
    for S in SURFACES.values():
        for q in sample_q(S, rng, 20):
            assert abs(float(S.gaussian_curvature(q)) - fd_curvature(S, q)) < 1e-6


def test_sphere_chart_overlap_metric():
    S = SURFACES["sphere"]
    rng = np.random.default_rng(2)
    for _ in range(200):
        r = rng.uniform(0.8, 1.5)
        a = rng.uniform(0, 2 * math.pi)
        q = r * np.array([math.cos(a), math.sin(a)])
        v, w = rng.normal(size=2), rng.normal(size=2)
        c1, q1, v1 = S.switch_chart(0, q, v)
        _, _, w1 = S.switch_chart(0, q, w)
        assert c1 == 1
        assert abs(S.inner(q, v, w) - S.inner(q1, v1, w1)) < 1e-12 * (1 + abs(S.inner(q, v, w)))
        assert np.allclose(S.sphere_point(0, q), S.sphere_point(1, q1), atol=1e-14)


def test_lorentz_force_examples():
    zero = system_from_dict({"surface": {"kind": "flat-torus"}, "f": {"type": "constant", "value": 0.0},
                             "s": 1.0})
    p = PhasePoint.make(zero.surface, 0, [0.2, 0.3], [0.6, -0.1])
    assert np.all(lorentz_force(zero, p) == 0)
    one = system_from_dict({"surface": {"kind": "flat-torus"}, "f": {"type": "constant", "value": 1.0},
                            "s": 1.0})
    p = PhasePoint.make(one.surface, 0, [0.2, 0.3], [1.0, 0.0])
    assert np.allclose(lorentz_force(one, p), [0.0, 1.0])


def test_lorentz_force_sphere_against_sigma():
    sys = builtin("sphere-symmetric")
    S = sys.surface
    rng = np.random.default_rng(3)
    for q in sample_q(S, rng, 50):
        v, w = rng.normal(size=2), rng.normal(size=2)
        Y = lorentz_force(sys, PhasePoint.make(S, 0, q, v))
        assert abs(S.inner(q, Y, v)) < 1e-12 * S.inner(q, v, v)
        assert abs(S.norm(q, Y) - S.norm(q, v)) < 1e-12 * S.norm(q, v)
        # g(Y v, w) = sigma(v, w) = f mu(v, w)
        sigma = float(sys.density(0, q)) * S.area_form(q, v, w)
        assert abs(S.inner(q, Y, w) - sigma) < 1e-12 * (1 + abs(sigma))


def test_out_of_domain():
    S = SURFACES["halfplane"]
    with pytest.raises(GeometryError):
        PhasePoint.make(S, 0, [0.0, -0.5], [1.0, 0.0])


def test_coframe_on_frame_vectors():
    sys = builtin("sphere-ambient")
    p = PhasePoint.make(sys.surface, 0, [0.3, -0.2], [0.7, 0.4])
    X, Y, H, V = frame(sys, p)
    rho2 = sys.surface.inner(p.q, p.v, p.v)
    assert np.allclose(coframe_eval(sys, p, V), [0, 0, 0, 1], atol=1e-14)
    assert np.allclose(coframe_eval(sys, p, X), [rho2, 0, 0, 0], atol=1e-13)


def test_coframe_singular_on_zero_section():
    sys = builtin("sphere-ambient")
    p = PhasePoint.make(sys.surface, 0, [0.3, -0.2], [0.0, 0.0])
    with pytest.raises(SingularityError):
        coframe_eval(sys, p, np.ones(4))


@pytest.mark.parametrize("name", ["sphere-ambient", "genus-symmetric", "conformal-torus", "ql-torus"])
def test_frame_coframe_duality(name):
    sys = builtin(name)
    rng = np.random.default_rng(4)
    worst = 0.0
    for q in sample_q(sys.surface, rng, 1000):
        p = PhasePoint.make(sys.surface, 0, q, rng.normal(size=2))
        F = frame(sys, p)
        M = np.array([frame_coefficients(sys, p, F[i]) for i in range(4)])
        worst = max(worst, float(np.max(np.abs(M - np.eye(4)))))
    assert worst < 1e-10


def test_angular_form_flat_torus():
    sys = builtin("flat-torus-wave")
    p = PhasePoint.make(sys.surface, 0, [0.1, 0.7], [0.3, 0.8])
    assert abs(angular_form(sys, p, frame(sys, p)[0])) < 1e-15
    with pytest.raises(GeometryError):
        angular_form(builtin("sphere-symmetric"), PhasePoint.make(SURFACES["sphere"], 0, [0, 0], [1, 0]),
                     np.ones(4))


@pytest.mark.parametrize("pair", [("Y", "X"), ("Y", "H"), ("Y", "V"), ("V", "X"), ("H", "V"), ("X", "H")])
@pytest.mark.parametrize("name", ["sphere-symmetric", "flat-torus-wave", "genus-symmetric", "conformal-torus"])
def test_bracket_table(name, pair):
    sys = builtin(name)
    q = {"sphere": [0.3, 0.4], "hyperbolic-halfplane": [0.2, 1.1]}.get(sys.surface.kind, [0.3, 0.6])
    p = PhasePoint.make(sys.surface, 0, q, [0.5, -0.3])
    assert bracket_check(sys, p, pair) < 1e-5


def test_exact_primitives():
    rng = np.random.default_rng(5)
    for name in ("flat-torus-wave", "ql-torus"):
        sys = builtin(name)
        samples = [(0, q) for q in rng.uniform(0, 1, (40, 2))]
        res = exterior_derivative_residual(sys, lambda c, q: sys.density(c, q), samples)
        assert res < 1e-8


def test_sphere_total_flux():
    # f = 1 on the unit round sphere: 4 pi = 2 pi chi
    assert abs(total_flux(builtin("sphere-symmetric")) - 4 * math.pi) < 1e-6
