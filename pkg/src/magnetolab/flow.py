"""Magnetic geodesic flow: integration, curvature along trajectories, closed orbits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._accel import parallel_map
from .geometry import GeometryError, PhasePoint

log = logging.getLogger(__name__)


class StiffnessError(RuntimeError):
    """Step size underflow in the adaptive integrator."""


class ArityError(ValueError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    chart: np.ndarray
    q: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    stm: np.ndarray | None = None
    stats: dict = field(default_factory=dict)
    # half-plane only: global z = c * z_local + b, one (c, b) row per sample
    affine: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    def global_q(self):
        if self.affine is None:
            return self.q.copy()
        c, b = self.affine[:, :1], self.affine[:, 1]
        out = self.q * c
        out[:, 0] += b
        return out

    def point(self, i):
        q, v = self.q[i].copy(), self.v[i].copy()
        if self.affine is not None:
            c, b = self.affine[i]
            q = q * c
            q[0] += b
            v = v * c
        return PhasePoint(int(self.chart[i]), q, v, float(self.rho[i]))

    def end(self):
        return self.point(-1)


def ode_rhs(sys, p):
    """(q', v') with q' = v, v' = -Gamma(v, v) + s f j v."""
    sys.surface.check_domain(p.chart, p.q)
    out = np.empty(4)
    skind, sp, fkind, fp, s, orient = sys.sysargs()
    K.rhs4(np.asarray(p.state, dtype=float), int(p.chart), skind, sp, fkind, fp, s, orient, out)
    return out


def integrate(sys, p0, t_end, tol=1e-10, out_dt=0.0, variational=False, max_samples=200_000,
              stm0=None, project=True):
    """Adaptive DOP853 trajectory from ``p0`` over ``[0, t_end]`` (t_end may be negative).

    ``out_dt > 0`` records equally spaced samples, otherwise every accepted step.
    With ``variational`` the 4x4 state transition matrix is carried along.
    ``project`` rescales v after each step so |v|_g stays at its initial value;
    without it the speed drifts linearly in t at a rate proportional to tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    S = sys.surface
    S.check_domain(p0.chart, p0.q)
    sysargs = sys.sysargs()
    chart = int(p0.chart)
    y = np.asarray(p0.state, dtype=float)
    if variational:
        M = np.eye(4) if stm0 is None else np.asarray(stm0, dtype=float)
        y = np.concatenate([y, M.ravel()])
    if S.kind == "sphere":
        chart, qn, vn = S.canonical_chart(chart, y[:2], y[2:4])
        if variational and not np.allclose(qn, y[:2]):
            M = S.switch_jacobian(y[:2], y[2:4]) @ y[4:].reshape(4, 4)
            y = np.concatenate([qn, vn, M.ravel()])
        else:
            y = np.concatenate([qn, vn, y[4:]])
    t = 0.0
    ts, charts, ys, affs = [], [], [], []
    aff = np.array([1.0, 0.0])
    nsteps = nrej = 0
    h = 0.0
    first = True
    rho0 = float(S.norm(y[:2], y[2:4])) if project else 0.0
    while True:
        buf = min(max_samples, 20_000)
        tt, yy, n, status, ns, nr, h = K.run(y, t, t_end, h, tol, tol, chart, sysargs, out_dt, buf,
                                             rho_target=rho0)
        nsteps += ns
        nrej += nr
        start = 0 if first else 1
        ts.append(tt[start:n].copy())
        ys.append(yy[start:n].copy())
        charts.append(np.full(n - start, chart, dtype=np.int64))
        affs.append(np.tile(aff, (n - start, 1)))
        first = False
        t = tt[n - 1]
        y = yy[n - 1].copy()
        if status == 0:
            break
        if status == 1:
            chart, qn, vn = S.switch_chart(chart, y[:2], y[2:4])
            if variational:
                M = S.switch_jacobian(y[:2], y[2:4]) @ y[4:].reshape(4, 4)
                y = np.concatenate([qn, vn, M.ravel()])
            else:
                y = np.concatenate([qn, vn])
            # record the switched state so consecutive samples share a chart
            ts.append(np.array([t]))
            ys.append(y[None, :].copy())
            charts.append(np.array([chart], dtype=np.int64))
            affs.append(aff[None, :].copy())
            continue
        if status == 5:
            # isometry z -> (z - x) / y brings the point back to (0, 1)
            b, c = y[0], y[1]
            aff = np.array([aff[0] * c, aff[0] * b + aff[1]])
            y = y / c
            y[0] = 0.0
            y[1] = 1.0
            ts.append(np.array([t]))
            ys.append(y[None, :].copy())
            charts.append(np.array([chart], dtype=np.int64))
            affs.append(aff[None, :].copy())
            continue
        if status == 2:
            raise StiffnessError(f"step size underflow at t={t:.6g}")
        if status == 4:
            raise GeometryError(f"trajectory left the half-plane at t={t:.6g}")
        if sum(len(a) for a in ts) >= max_samples:
            raise StiffnessError("sample budget exhausted")
    T = np.concatenate(ts)
    Y = np.concatenate(ys)
    C = np.concatenate(charts)
    A = np.concatenate(affs)
    # drop the duplicated pre-switch sample, keep the post-switch one
    keep = np.ones(len(T), dtype=bool)
    keep[:-1] = T[1:] != T[:-1]
    if out_dt > 0:
        k = T / out_dt
        keep &= np.abs(k - np.round(k)) < 1e-7
    T, Y, C, A = T[keep], Y[keep], C[keep], A[keep]
    q = Y[:, :2]
    v = Y[:, 2:4]
    rho = S.norm(q, v)
    if np.any(rho == 0) and p0.rho > 0:
        raise AssertionError("speed collapsed to zero; flow should conserve it")
    stm = Y[:, 4:].reshape(-1, 4, 4) if variational else None
    renorm = S.kind == "hyperbolic-halfplane" and np.any(A != [1.0, 0.0])
    return Trajectory(T, C, q.copy(), v.copy(), rho, stm,
                      {"steps": nsteps, "rejected": nrej, "tol": tol}, A if renorm else None)


def speed_drift(traj):
    return float(np.max(np.abs(traj.rho - traj.rho[0])) / traj.rho[0])


# geodesic curvature -------------------------------------------------------

_D1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
_D2 = np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0
_HALF = 3


def _derivatives(x, dt):
    """First and second derivatives by 7-point central stencils.

    The first and last three samples get NaN; one-sided stencils lose too much
    accuracy to be useful for curvature checks.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    d1 = np.full_like(x, np.nan)
    d2 = np.full_like(x, np.nan)
    if n <= 2 * _HALF:
        return d1, d2
    acc1 = sum(_D1[k] * x[k:n - 6 + k] for k in range(7))
    acc2 = sum(_D2[k] * x[k:n - 6 + k] for k in range(7))
    d1[_HALF:n - _HALF] = acc1 / dt
    d2[_HALF:n - _HALF] = acc2 / dt**2
    return d1, d2


def geodesic_curvature(sys, traj):
    """kappa(t) from sampled positions only: g(nabla_t g', j g') / |g'|^3.

    Needs equally spaced samples (integrate with ``out_dt``); derivatives are
    taken by finite differences of the base curve, independent of the vector
    field that produced it. The three samples at either end are NaN.
    """
    if len(traj) < 2 * _HALF + 1:
        raise ArityError("geodesic curvature needs at least 7 samples")
    dt = np.diff(traj.t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ValueError("geodesic_curvature needs equally spaced samples")
    dt = float(dt[0])
    S = sys.surface
    if S.kind == "sphere":
        P = np.array([S.sphere_point(int(c), q) for c, q in zip(traj.chart, traj.q)])
        d1, d2 = _derivatives(P, dt)
        det = np.einsum("ij,ij->i", P, np.cross(d1, d2))
        speed = np.linalg.norm(d1, axis=1)
        # chart orientation corresponds to the inward normal
        return -S.orientation * det / speed**3
    q = traj.global_q()
    d1, d2 = _derivatives(q, dt)
    acc = d2 + S.christoffel(q, d1, d1)
    speed = S.norm(q, d1)
    return S.inner(q, acc, S.rotate(d1)) / speed**3


def curvature_identity_residual(sys, traj):
    """max |kappa - s f / rho| along the trajectory."""
    kappa = geodesic_curvature(sys, traj)
    f = np.array([float(sys.density(int(c), q)) for c, q in zip(traj.chart, traj.q)])
    return float(np.nanmax(np.abs(kappa - sys.s * f / traj.rho)))


# closed orbits ---------------------------------------------------------------

@dataclass
class ClosedOrbit:
    p0: PhasePoint
    period: float
    residual: float
    homotopy: dict
    prime: bool = True
    order: int = 1

    def to_json(self):
        return {
            "chart": self.p0.chart,
            "q": [float(x) for x in self.p0.q],
            "v": [float(x) for x in self.p0.v],
            "period": float(self.period),
            "residual": float(self.residual),
            "homotopy": self.homotopy,
            "prime": bool(self.prime),
            "order": int(self.order),
        }

    @classmethod
    def from_json(cls, sys, d):
        p0 = PhasePoint.make(sys.surface, int(d["chart"]), d["q"], d["v"])
        return cls(p0, float(d["period"]), float(d.get("residual", 0.0)),
                   dict(d.get("homotopy", {})), bool(d.get("prime", True)), int(d.get("order", 1)))


def _angle(v):
    return math.atan2(v[1], v[0])


def _wrap_pi(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def compare(sys, pa, pb):
    """Residual (dq1, dq2, dangle) of pb relative to pa and the homotopy tag.

    Tori compare modulo integer translations, the half-plane modulo the
    configured deck dilation, the sphere in a common chart.
    """
    S = sys.surface
    qb = np.asarray(pb.q, dtype=float)
    vb = np.asarray(pb.v, dtype=float)
    tag = {}
    if S.kind == "sphere":
        if pb.chart != pa.chart:
            _, qb, vb = S.switch_chart(pb.chart, qb, vb)
        tag = {"class": "contractible"}
        dq = qb - pa.q
    elif S.is_torus:
        dq = qb - pa.q
        w = np.round(dq)
        dq = dq - w
        tag = {"winding": [int(w[0]), int(w[1])]}
    else:
        ell = float(S.params.get("dilation", 0.0) or 0.0)
        m = 0
        if ell > 0:
            m = int(round(math.log(qb[1] / pa.q[1]) / ell))
            qb = qb * math.exp(-m * ell)
            vb = vb * math.exp(-m * ell)
        tag = {"deck_power": m, "closed": True}
        dq = qb - pa.q
    da = _wrap_pi(_angle(vb) - _angle(pa.v))
    return np.array([dq[0], dq[1], da]), tag


def flow_point(sys, p, T, tol):
    if T == 0:
        return p
    return integrate(sys, p, T, tol=tol).end()


def closure(sys, p, T, tol):
    r, tag = compare(sys, p, flow_point(sys, p, T, tol))
    return r, tag


def _section_point(sys, section, u, theta):
    axis = int(section.get("axis", 1))
    q = np.zeros(2)
    q[axis] = float(section["value"])
    q[1 - axis] = u
    return PhasePoint.unit(sys.surface, int(section.get("chart", 0)), q, theta,
                           float(section.get("speed", 1.0)))


def refine_orbit(sys, section, u, theta, T, tol=1e-10, max_iter=40):
    """Gauss-Newton on (u, theta, T) for the 3D closure residual.

    Uses least-squares steps so that degenerate families (whole tori of closed
    orbits) still converge to a member. Returns (z, residual_norm, tag) or None.
    """
    itol = min(1e-12, tol * 1e-3)
    z = np.array([u, theta, T], dtype=float)

    def R(z):
        if z[2] <= 0:
            return None, None
        try:
            p = _section_point(sys, section, z[0], z[1])
            return closure(sys, p, z[2], itol)
        except (GeometryError, StiffnessError):
            return None, None

    r, tag = R(z)
    if r is None:
        return None
    nr = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if nr < tol:
            return z, nr, tag
        J = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            hj = 1e-6 * max(1.0, abs(z[j]))
            e[j] = hj
            rp, _ = R(z + e)
            rm, _ = R(z - e)
            if rp is None or rm is None:
                return None
            J[:, j] = (rp - rm) / (2 * hj)
        step = np.linalg.lstsq(J, -r, rcond=1e-10)[0]
        lam = 1.0
        improved = False
        for _ in range(12):
            zn = z + lam * step
            rn, tn = R(zn)
            if rn is not None and float(np.max(np.abs(rn))) < nr:
                z, r, tag, nr = zn, rn, tn, float(np.max(np.abs(rn)))
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    if nr < tol:
        return z, nr, tag
    return None


def _candidate_times(sys, p, t_max, approach, n_out=4000):
    traj = integrate(sys, p, t_max, tol=1e-9, out_dt=t_max / n_out)
    d = np.array([np.max(np.abs(compare(sys, p, traj.point(i))[0])) for i in range(len(traj))])
    out = []
    left = np.argmax(d > 2 * approach) if np.any(d > 2 * approach) else len(d)
    for i in range(max(left, 1), len(d) - 1):
        if d[i] < approach and d[i] <= d[i - 1] and d[i] <= d[i + 1]:
            out.append(float(traj.t[i]))
    return out


def minimal_period(sys, p, T, tol, k_max=12):
    """Largest k with phi_{T/k}(p) = p; returns (k, T/k)."""
    for k in range(k_max, 1, -1):
        r, _ = closure(sys, p, T / k, min(1e-12, tol * 1e-3))
        if np.max(np.abs(r)) < 100 * tol:
            return k, T / k
    return 1, T


def find_closed_orbits(sys, section, grid=(4, 8), tol=1e-9, t_max=10.0, u_range=(0.0, 1.0),
                       theta_range=(0.0, 2 * math.pi), approach=0.05, max_candidates=2,
                       merge=True):
    """Closed orbits through a section line ``q[axis] = value`` on the unit sphere bundle.

    Seeds on a (u, theta) grid are integrated up to ``t_max``; near-returns seed a
    Gauss-Newton refinement. Non-converging candidates are dropped with a log
    line. Iterates are reduced to their prime orbit (``order`` records k).
    """
    n_u, n_th = grid
    us = np.linspace(u_range[0], u_range[1], n_u, endpoint=n_u == 1 or u_range[1] != 1.0)
    if n_u == 1:
        us = np.array([0.5 * (u_range[0] + u_range[1])])
    ths = np.linspace(theta_range[0], theta_range[1], n_th, endpoint=False)
    seeds = [(u, th) for u in us for th in ths]

    def work(seed):
        u, th = seed
        found = []
        try:
            p = _section_point(sys, section, u, th)
            times = _candidate_times(sys, p, t_max, approach)
        except (GeometryError, StiffnessError) as exc:
            log.info("seed %s skipped: %s", seed, exc)
            return found
        for T in times[:max_candidates]:
            res = refine_orbit(sys, section, u, th, T, tol=tol)
            if res is None:
                log.info("candidate u=%.4g theta=%.4g T=%.6g did not converge", u, th, T)
                continue
            z, nr, tag = res
            p0 = _section_point(sys, section, z[0], z[1])
            k, Tp = minimal_period(sys, p0, z[2], tol)
            if k > 1:
                res2 = refine_orbit(sys, section, z[0], z[1], Tp, tol=tol)
                if res2 is not None:
                    z, nr, tag = res2
                    p0 = _section_point(sys, section, z[0], z[1])
                else:
                    _, tag = closure(sys, p0, Tp, 1e-12)
                    z = np.array([z[0], z[1], Tp])
            found.append(ClosedOrbit(p0, float(z[2]), nr, tag, True, 1))
        return found

    orbits = [o for batch in parallel_map(work, seeds) for o in batch]
    orbits.sort(key=lambda o: o.period)
    if merge:
        orbits = merge_duplicates(sys, orbits, tol)
    return orbits


def orbit_distance(sys, a, b, tol=1e-12, n=400):
    """Phase distance from b's initial point to the orbit of a."""
    traj = integrate(sys, a.p0, a.period, tol=tol, out_dt=a.period / n)
    d = [np.linalg.norm(compare(sys, traj.point(i), b.p0)[0]) for i in range(len(traj))]
    i = int(np.argmin(d))
    from scipy.optimize import minimize_scalar

    dt = a.period / n
    base = traj.point(max(i - 1, 0))
    span = 2 * dt if i > 0 else dt

    def dist(tau):
        p = flow_point(sys, base, tau, tol)
        return float(np.linalg.norm(compare(sys, p, b.p0)[0]))

    res = minimize_scalar(dist, bounds=(0.0, span), method="bounded",
                          options={"xatol": 1e-12})
    return min(float(res.fun), float(d[i]))


def merge_duplicates(sys, orbits, tol):
    kept = []
    for o in orbits:
        dup = False
        for k in kept:
            if abs(k.period - o.period) < 10 * tol * max(1.0, k.period) + 1e-7:
                if orbit_distance(sys, k, o) < max(10 * tol, 1e-7):
                    dup = True
                    break
        if not dup:
            kept.append(o)
    return kept


# closed orbits known in closed form -------------------------------------------

def _checked(sys, p0, T, tol, tag):
    r, got = closure(sys, p0, T, 1e-12)
    res = float(np.max(np.abs(r)))
    if res > tol:
        return None
    return ClosedOrbit(p0, T, res, got if tag is None else tag)


def ray_orbit(sys, radius=1.0, tol=1e-8):
    """Closed orbit of the half-plane model with deck dilation z -> e^l z.

    For f = -1 and 0 <= s < 1 the Euclidean ray from 0 at angle alpha with
    cos(alpha) = s is a trajectory (an equidistant curve of the imaginary
    axis); it closes after one deck step, at time l / sin(alpha).
    """
    S = sys.surface
    ell = float(S.params.get("dilation", 0.0) or 0.0)
    if S.kind != "hyperbolic-halfplane" or ell <= 0:
        raise GeometryError("ray orbits need the half-plane with a deck dilation")
    if not 0 <= sys.s < 1:
        raise GeometryError("ray orbits need 0 <= s < 1")
    alpha = math.acos(sys.s)
    for ang in (alpha, math.pi - alpha):
        q = radius * np.array([math.cos(ang), math.sin(ang)])
        for sgn in (1.0, -1.0):
            v = sgn * q / radius * q[1]  # unit hyperbolic speed
            p0 = PhasePoint.make(S, 0, q, v)
            T = ell / math.sin(alpha)
            try:
                orb = _checked(sys, p0, T, tol, None)
            except (GeometryError, StiffnessError):
                orb = None
            if orb is not None:
                return orb
    raise GeometryError("no ray orbit for this system")


def latitude_orbit(sys, tol=1e-8):
    """Latitude circle |z| = r of the sphere solving kappa = s f.

    Needs a density depending on the height only. In chart 0 the circle of
    radius r, traversed counterclockwise, has geodesic curvature
    orientation * (1 - r^2) / (2 r).
    """
    from scipy.optimize import brentq

    S = sys.surface
    if S.kind != "sphere":
        raise GeometryError("latitude orbits live on the sphere")
    o = S.orientation

    def fr(r):
        return float(sys.density(0, np.array([r, 0.0])))

    for direction in (1.0, -1.0):
        def F(r):
            return direction * o * (1 - r * r) / (2 * r) - sys.s * fr(r)

        rs = np.linspace(1e-3, 3.0, 600)
        vals = [F(r) for r in rs]
        for a, b, fa, fb in zip(rs[:-1], rs[1:], vals[:-1], vals[1:]):
            if fa * fb < 0:
                r = brentq(F, a, b, xtol=1e-15)
                lam = 2 / (1 + r * r)
                p0 = PhasePoint.make(S, 0, [r, 0.0], [0.0, direction / lam])
                orb = _checked(sys, p0, 2 * math.pi * r * lam, tol, {"class": "contractible"})
                if orb is not None:
                    return orb
    raise GeometryError("no latitude orbit found")


def circle_orbit(sys, center, radius, tol=1e-8):
    """Counterclockwise coordinate circle on a flat torus, e.g. the QL loop."""
    S = sys.surface
    if S.kind != "flat-torus":
        raise GeometryError("circle orbits are checked on the flat torus")
    q = np.asarray(center, dtype=float) + np.array([radius, 0.0])
    p0 = PhasePoint.make(S, 0, q, [0.0, 1.0])
    orb = _checked(sys, p0, 2 * math.pi * radius, tol, None)
    if orb is None:
        raise GeometryError("circle is not a trajectory of this system")
    return orb
