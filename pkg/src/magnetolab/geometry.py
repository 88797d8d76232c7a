"""Surfaces in conformal charts, magnetic data, and the frame of TN.

A surface is described chart-wise by a conformal factor ``lam`` with
``g = lam(q)^2 * (dx^2 + dy^2)``. Tangent vectors of TN are written in chart
coordinates as 4-vectors ``(dq1, dq2, dv1, dv2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


class GeometryError(ValueError):
    """Raised for points outside a chart or an invalid configuration."""


class SingularityError(GeometryError):
    """Raised when a quantity is undefined on the zero section."""


SURFACE_CODES = {
    "flat-torus": K.FLAT_TORUS,
    "conformal-torus": K.CONFORMAL_TORUS,
    "sphere": K.SPHERE,
    "hyperbolic-halfplane": K.HALFPLANE,
}

TORUS_KINDS = ("flat-torus", "conformal-torus")


def _terms(rows):
    rows = [tuple(float(c) for c in r) for r in (rows or [])]
    for r in rows:
        if len(r) != 4:
            raise GeometryError("Fourier terms are [p, q, a_cos, b_sin]")
    return rows


@dataclass(frozen=True)
class SurfaceModel:
    kind: str
    params: dict = field(default_factory=dict)
    orientation: int = 1

    def __post_init__(self):
        if self.kind not in SURFACE_CODES:
            raise GeometryError(f"unknown surface kind {self.kind!r}")
        if self.orientation not in (1, -1):
            raise GeometryError("orientation must be +1 or -1")

    @property
    def code(self):
        return SURFACE_CODES[self.kind]

    @property
    def is_torus(self):
        return self.kind in TORUS_KINDS

    def kernel_params(self):
        if self.kind == "conformal-torus":
            rows = _terms(self.params.get("log_lambda"))
            return np.array([len(rows)] + [c for r in rows for c in r], dtype=np.float64)
        return np.zeros(1)

    @property
    def charts(self):
        return (0, 1) if self.kind == "sphere" else (0,)

    def check_domain(self, chart, q):
        q = np.asarray(q, dtype=float)
        if chart not in self.charts:
            raise GeometryError(f"chart {chart} not in atlas of {self.kind}")
        if not np.all(np.isfinite(q)):
            raise GeometryError("non-finite base point")
        if self.kind == "hyperbolic-halfplane" and np.any(q[..., 1] <= 0):
            raise GeometryError("half-plane point with y <= 0")

    # metric -----------------------------------------------------------------
    def log_lambda(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        if self.kind == "flat-torus":
            return np.zeros_like(x)
        if self.kind == "conformal-torus":
            acc = np.zeros_like(x)
            for p, qq, a, b in _terms(self.params.get("log_lambda")):
                arg = 2 * np.pi * (p * x + qq * y)
                acc = acc + a * np.cos(arg) + b * np.sin(arg)
            return acc
        if self.kind == "sphere":
            return np.log(2.0 / (1.0 + x * x + y * y))
        return -np.log(y)

    def lam(self, q):
        return np.exp(self.log_lambda(q))

    def grad_log_lambda(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        if self.kind == "flat-torus":
            return np.zeros(q.shape)
        if self.kind == "conformal-torus":
            gx = np.zeros_like(x)
            gy = np.zeros_like(x)
            for p, qq, a, b in _terms(self.params.get("log_lambda")):
                arg = 2 * np.pi * (p * x + qq * y)
                d = -a * np.sin(arg) + b * np.cos(arg)
                gx = gx + 2 * np.pi * p * d
                gy = gy + 2 * np.pi * qq * d
            return np.stack([gx, gy], axis=-1)
        if self.kind == "sphere":
            den = 1.0 + x * x + y * y
            return np.stack([-2 * x / den, -2 * y / den], axis=-1)
        return np.stack([np.zeros_like(y), -1.0 / y], axis=-1)

    def laplacian_log_lambda(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        if self.kind == "flat-torus":
            return np.zeros_like(x)
        if self.kind == "conformal-torus":
            acc = np.zeros_like(x)
            for p, qq, a, b in _terms(self.params.get("log_lambda")):
                arg = 2 * np.pi * (p * x + qq * y)
                acc = acc - (2 * np.pi) ** 2 * (p * p + qq * qq) * (a * np.cos(arg) + b * np.sin(arg))
            return acc
        if self.kind == "sphere":
            den = 1.0 + x * x + y * y
            return -4.0 / den**2
        return 1.0 / y**2

    def gaussian_curvature(self, q):
        """K = -lap(log lam) / lam^2."""
        return -self.laplacian_log_lambda(q) / self.lam(q) ** 2

    def inner(self, q, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.lam(q) ** 2 * np.sum(a * b, axis=-1)

    def norm(self, q, a):
        return np.sqrt(self.inner(q, a, a))

    def rotate(self, a):
        """Fibrewise rotation j by +pi/2 (times the orientation sign)."""
        a = np.asarray(a, dtype=float)
        return self.orientation * np.stack([-a[..., 1], a[..., 0]], axis=-1)

    def christoffel(self, q, a, b):
        """Gamma(a, b) for the conformal metric, symmetric in a and b."""
        g = self.grad_log_lambda(q)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        ag = np.sum(a * g, axis=-1)[..., None]
        bg = np.sum(b * g, axis=-1)[..., None]
        ab = np.sum(a * b, axis=-1)[..., None]
        return a * bg + b * ag - ab * g

    def area_form(self, q, a, b):
        """Riemannian area form with the orientation making mu(v, jv) = |v|^2."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.orientation * self.lam(q) ** 2 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])

    # charts -----------------------------------------------------------------
    def sphere_point(self, chart, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        r2 = x * x + y * y
        den = 1.0 + r2
        if chart == 0:
            return np.stack([2 * x / den, 2 * y / den, (r2 - 1) / den], axis=-1)
        return np.stack([2 * x / den, -2 * y / den, (1 - r2) / den], axis=-1)

    def sphere_chart_of(self, P):
        """Chart coordinates of a unit vector P in R^3, choosing the better chart."""
        P = np.asarray(P, dtype=float)
        if P[2] <= 0:
            return 0, np.array([P[0], P[1]]) / (1 - P[2])
        return 1, np.array([P[0], -P[1]]) / (1 + P[2])

    def switch_chart(self, chart, q, v=None):
        """Sphere transition w = 1/z (an involution); returns (chart', q', v')."""
        if self.kind != "sphere":
            raise GeometryError("only the sphere has more than one chart")
        z = complex(q[0], q[1])
        if z == 0:
            raise GeometryError("chart transition undefined at the pole")
        w = 1.0 / z
        qn = np.array([w.real, w.imag])
        if v is None:
            return 1 - chart, qn, None
        dv = -complex(v[0], v[1]) / z**2
        return 1 - chart, qn, np.array([dv.real, dv.imag])

    def switch_jacobian(self, q, v):
        """4x4 Jacobian of (q, v) -> (1/z, -v/z^2) in real coordinates."""
        z = complex(q[0], q[1])
        vz = complex(v[0], v[1])

        def cmul(c):
            return np.array([[c.real, -c.imag], [c.imag, c.real]])

        J = np.zeros((4, 4))
        J[:2, :2] = cmul(-1.0 / z**2)
        J[2:, :2] = cmul(2.0 * vz / z**3)
        J[2:, 2:] = cmul(-1.0 / z**2)
        return J

    def canonical_chart(self, chart, q, v=None):
        """Keep sphere points inside |z| <= 1 where possible."""
        if self.kind == "sphere" and q[0] ** 2 + q[1] ** 2 > 1.0:
            return self.switch_chart(chart, q, v)
        return chart, np.asarray(q, dtype=float), None if v is None else np.asarray(v, dtype=float)

    def wrap(self, q):
        q = np.asarray(q, dtype=float)
        if self.is_torus:
            return q - np.floor(q)
        return q


# magnetic densities ---------------------------------------------------------

DENSITY_CODES = {"constant": K.F_CONSTANT, "fourier": K.F_FOURIER, "ambient": K.F_AMBIENT,
                 "ql-bump": K.F_QLBUMP}


def bump_profile(u, c=1.0):
    """exp(c (1 - 1/(1-u^2))) and its derivative, zero for |u| >= 1.

    The maximum 1 is attained only at u = 0; smaller c flattens the top.
    """
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    d = np.where(inside, 1 - u * u, 1.0)
    val = np.where(inside, np.exp(c * (1 - 1 / d)), 0.0)
    dval = np.where(inside, val * c * (-2 * u / d**2), 0.0)
    return val, dval


def bump_second(u, c=1.0):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    d = np.where(inside, 1 - u * u, 1.0)
    val = np.where(inside, np.exp(c * (1 - 1 / d)), 0.0)
    g = -2 * c * u / d**2
    dg = c * (-2 / d**2 - 8 * u * u / d**3)
    return np.where(inside, val * (g * g + dg), 0.0)


def _torus_offset(q, center):
    d = np.asarray(q, dtype=float) - np.asarray(center, dtype=float)
    return d - np.floor(d + 0.5)


@dataclass(frozen=True)
class FunctionSpec:
    """Named built-in scalar function on the surface."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DENSITY_CODES:
            raise GeometryError(f"unknown function kind {self.kind!r}")

    @property
    def code(self):
        return DENSITY_CODES[self.kind]

    def kernel_params(self):
        p = self.params
        if self.kind == "constant":
            return np.array([float(p.get("value", 0.0))])
        if self.kind == "fourier":
            rows = _terms(p.get("terms"))
            return np.array([float(p.get("const", 0.0)), len(rows)] + [c for r in rows for c in r])
        if self.kind == "ambient":
            c = p.get("c", [0.0, 0.0, 0.0])
            return np.array([float(p.get("c0", 0.0))] + [float(x) for x in c])
        cx, cy = p["center"]
        return np.array([cx, cy, p["radius"], p["width"], p.get("sharpness", 1.0)], dtype=float)

    def __call__(self, surface, chart, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        p = self.params
        if self.kind == "constant":
            return np.full_like(x, float(p.get("value", 0.0)))
        if self.kind == "fourier":
            acc = np.full_like(x, float(p.get("const", 0.0)))
            for pp, qq, a, b in _terms(p.get("terms")):
                arg = 2 * np.pi * (pp * x + qq * y)
                acc = acc + a * np.cos(arg) + b * np.sin(arg)
            return acc
        if self.kind == "ambient":
            P = surface.sphere_point(chart, q)
            c = np.asarray(p.get("c", [0, 0, 0]), dtype=float)
            return float(p.get("c0", 0.0)) + P @ c
        d = _torus_offset(q, p["center"])
        r = np.hypot(d[..., 0], d[..., 1])
        val, dval = bump_profile((r - p["radius"]) / p["width"], p.get("sharpness", 1.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = dval / p["width"] + np.where(r > 0, val / np.where(r > 0, r, 1.0), 0.0)
        return out


@dataclass(frozen=True)
class OneFormSpec:
    """Chart components (b1, b2) of a 1-form beta = b1 dx + b2 dy."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("zero", "ql-bump", "fourier"):
            raise GeometryError(f"unknown 1-form kind {self.kind!r}")

    def __call__(self, surface, chart, q):
        q = np.asarray(q, dtype=float)
        p = self.params
        if self.kind == "zero":
            return np.zeros(q.shape)
        if self.kind == "fourier":
            out = []
            for key in ("x", "y"):
                comp = p.get(key, {})
                acc = np.full(q.shape[:-1], float(comp.get("const", 0.0)))
                for pp, qq, a, b in _terms(comp.get("terms")):
                    arg = 2 * np.pi * (pp * q[..., 0] + qq * q[..., 1])
                    acc = acc + a * np.cos(arg) + b * np.sin(arg)
                out.append(acc)
            return np.stack(out, axis=-1)
        # flat metric: beta = flat(B), B = b(r) e_phi
        d = _torus_offset(q, p["center"])
        r = np.hypot(d[..., 0], d[..., 1])
        val, _ = bump_profile((r - p["radius"]) / p["width"], p.get("sharpness", 1.0))
        lam2 = surface.lam(q) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, val / np.where(r > 0, r, 1.0), 0.0) * lam2
        return np.stack([-d[..., 1] * scale, d[..., 0] * scale], axis=-1)

    def norm(self, surface, chart, q):
        b = self(surface, chart, q)
        return np.hypot(b[..., 0], b[..., 1]) / surface.lam(q)

    def apply(self, surface, chart, q, v):
        b = self(surface, chart, q)
        return np.sum(b * np.asarray(v, dtype=float), axis=-1)


@dataclass(frozen=True)
class MagneticSystem:
    surface: SurfaceModel
    f: FunctionSpec
    beta: OneFormSpec | None = None
    s: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.s < 0:
            raise GeometryError("strength s must be non-negative")
        if self.f.kind == "ambient" and self.surface.kind != "sphere":
            raise GeometryError("ambient densities live on the sphere")

    @property
    def orientation(self):
        return self.surface.orientation

    def with_s(self, s):
        return MagneticSystem(self.surface, self.f, self.beta, float(s), dict(self.meta))

    def sysargs(self):
        return (self.surface.code, self.surface.kernel_params(), self.f.code,
                self.f.kernel_params(), float(self.s), float(self.surface.orientation))

    def density(self, chart, q):
        return self.f(self.surface, chart, q)

    def nu(self, chart, q, v):
        """Curvature 1-form of the constant section e1/lam on a torus."""
        g = self.surface.grad_log_lambda(q)
        v = np.asarray(v, dtype=float)
        return self.surface.orientation * (v[..., 1] * g[..., 0] - v[..., 0] * g[..., 1])

    def nu_norm(self, q):
        g = self.surface.grad_log_lambda(q)
        return np.hypot(g[..., 0], g[..., 1]) / self.surface.lam(q)


@dataclass(frozen=True)
class PhasePoint:
    chart: int
    q: np.ndarray
    v: np.ndarray
    rho: float = float("nan")

    @classmethod
    def make(cls, surface, chart, q, v):
        q = np.asarray(q, dtype=float).copy()
        v = np.asarray(v, dtype=float).copy()
        surface.check_domain(chart, q)
        return cls(int(chart), q, v, float(surface.norm(q, v)))

    @classmethod
    def unit(cls, surface, chart, q, angle, speed=1.0):
        q = np.asarray(q, dtype=float)
        lam = float(surface.lam(q))
        v = speed * np.array([math.cos(angle), math.sin(angle)]) / lam
        return cls.make(surface, chart, q, v)

    @property
    def state(self):
        return np.concatenate([self.q, self.v])


# frame and coframe ------------------------------------------------------------

def _check(sys, p):
    sys.surface.check_domain(p.chart, p.q)


def lorentz_force(sys, p):
    """Y(v) = f(q) * j v."""
    _check(sys, p)
    return float(sys.density(p.chart, p.q)) * sys.surface.rotate(p.v)


def frame(sys, p):
    """The frame (X, Y, H, V) at p as rows of chart 4-vectors."""
    _check(sys, p)
    S = sys.surface
    q, v = p.q, p.v
    jv = S.rotate(v)
    X = np.concatenate([v, -S.christoffel(q, v, v)])
    Y = np.concatenate([np.zeros(2), v])
    H = np.concatenate([jv, -S.christoffel(q, v, jv)])
    V = np.concatenate([np.zeros(2), jv])
    return np.array([X, Y, H, V])


def covariant_vertical(sys, p, w):
    w = np.asarray(w, dtype=float)
    return w[..., 2:] + sys.surface.christoffel(p.q, p.v, w[..., :2])


def coframe_eval(sys, p, w):
    """(theta(w), drho(w), eta(w), tau(w)) for a chart 4-vector w."""
    _check(sys, p)
    rho = float(sys.surface.norm(p.q, p.v))
    if rho == 0.0:
        raise SingularityError("coframe undefined on the zero section")
    S = sys.surface
    w = np.asarray(w, dtype=float)
    dq = w[..., :2]
    nv = covariant_vertical(sys, p, w)
    jv = S.rotate(p.v)
    theta = S.inner(p.q, p.v, dq)
    drho = S.inner(p.q, p.v, nv) / rho
    eta = S.inner(p.q, jv, dq)
    tau = S.inner(p.q, nv, jv) / rho**2
    return theta, drho, eta, tau


def frame_coefficients(sys, p, w):
    """Coefficients of w in the frame (X, Y, H, V)."""
    theta, drho, eta, tau = coframe_eval(sys, p, w)
    rho = float(sys.surface.norm(p.q, p.v))
    return np.array([theta / rho**2, drho / rho, eta / rho**2, tau])


def angular_form(sys, p, w):
    """psi = tau - pi^* nu: differential of the angle to the section e1/lam (tori)."""
    if not sys.surface.is_torus:
        raise GeometryError("angular form needs a global section (torus only)")
    _, _, _, tau = coframe_eval(sys, p, w)
    w = np.asarray(w, dtype=float)
    return tau - sys.nu(p.chart, p.q, w[..., :2])


def _field(sys, name):
    idx = "XYHV".index(name)

    def F(state, chart):
        pp = PhasePoint(chart, state[:2], state[2:])
        return frame(sys, pp)[idx]

    return F


def lie_bracket(sys, p, a, b, h=1e-4):
    """[A, B] = DB.A - DA.B by central differences."""
    FA, FB = _field(sys, a), _field(sys, b)
    x0 = p.state

    def jac(F):
        J = np.empty((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            J[:, j] = (F(x0 + e, p.chart) - F(x0 - e, p.chart)) / (2 * h)
        return J

    A0, B0 = FA(x0, p.chart), FB(x0, p.chart)
    return jac(FB) @ A0 - jac(FA) @ B0


BRACKET_TABLE = {
    ("Y", "X"): lambda rho2, K: {"X": 1.0},
    ("Y", "H"): lambda rho2, K: {"H": 1.0},
    ("Y", "V"): lambda rho2, K: {},
    ("V", "X"): lambda rho2, K: {"H": 1.0},
    ("H", "V"): lambda rho2, K: {"X": 1.0},
    ("X", "H"): lambda rho2, K: {"V": rho2 * K},
}


def bracket_check(sys, p, pair, h=1e-4):
    """Max deviation of the numerical bracket from the structure table."""
    pair = tuple(pair)
    sign = 1.0
    if pair not in BRACKET_TABLE:
        if pair[::-1] not in BRACKET_TABLE:
            raise GeometryError(f"no table entry for bracket {pair}")
        pair, sign = pair[::-1], -1.0
    rho = float(sys.surface.norm(p.q, p.v))
    if rho == 0.0:
        raise SingularityError("frame degenerates on the zero section")
    Kq = float(sys.surface.gaussian_curvature(p.q))
    fr = frame(sys, p)
    expected = np.zeros(4)
    for name, coef in BRACKET_TABLE[pair](rho**2, Kq).items():
        expected += coef * fr["XYHV".index(name)]
    got = sign * lie_bracket(sys, p, *pair, h=h)
    return float(np.max(np.abs(got - expected)))


def flux(sys, center, radius, n_r=64, n_phi=256):
    """Integral of sigma = f mu over a coordinate disc (Gauss-Legendre x trapezoid)."""
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * radius * (xr + 1)
    wr = 0.5 * radius * wr
    phi = np.linspace(0, 2 * np.pi, n_phi, endpoint=False)
    R, PH = np.meshgrid(r, phi, indexing="ij")
    q = np.stack([center[0] + R * np.cos(PH), center[1] + R * np.sin(PH)], axis=-1)
    S = sys.surface
    integrand = sys.density(0, q) * S.lam(q) ** 2 * R * sys.surface.orientation
    return float(np.sum(integrand * wr[:, None]) * (2 * np.pi / n_phi))


def total_flux(sys, n=256):
    """Integral of sigma over the closed surface (tori and sphere)."""
    S = sys.surface
    if S.is_torus:
        g = (np.arange(n) + 0.5) / n
        X, Y = np.meshgrid(g, g, indexing="ij")
        q = np.stack([X, Y], axis=-1)
        return float(np.sum(sys.density(0, q) * S.lam(q) ** 2) / n**2) * S.orientation
    if S.kind == "sphere":
        # both hemispheres through the unit disc of each chart, polar quadrature
        tot = 0.0
        xr, wr = np.polynomial.legendre.leggauss(n // 2)
        r = 0.5 * (xr + 1)
        wr = 0.5 * wr
        phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
        R, PH = np.meshgrid(r, phi, indexing="ij")
        q = np.stack([R * np.cos(PH), R * np.sin(PH)], axis=-1)
        for chart in (0, 1):
            integrand = sys.density(chart, q) * S.lam(q) ** 2 * R
            tot += float(np.sum(integrand * wr[:, None]) * (2 * np.pi / n))
        return tot * S.orientation
    raise GeometryError("total flux needs a closed surface")


def exterior_derivative_residual(sys, primitive_density, samples, h=1e-5):
    """max |d beta - sigma'| / mu over sample points, beta by 5-point central differences.

    ``primitive_density(chart, q)`` returns the density of the 2-form beta should
    integrate to (sigma for tori, sigma - K mu after normalisation).
    """
    S = sys.surface
    beta = sys.beta
    worst = 0.0

    def diff(chart, q, e, comp):
        b = [beta(S, chart, q + k * e)[comp] for k in (2, 1, -1, -2)]
        return (-b[0] + 8 * b[1] - 8 * b[2] + b[3]) / (12 * h)

    for chart, q in samples:
        q = np.asarray(q, dtype=float)
        db2_dx = diff(chart, q, np.array([h, 0.0]), 1)
        db1_dy = diff(chart, q, np.array([0.0, h]), 0)
        dens = (db2_dx - db1_dy) / float(S.lam(q)) ** 2 * S.orientation
        worst = max(worst, abs(dens - float(primitive_density(chart, q))))
    return worst
