"""Contact-type certificates, s-bounds, r0 estimates and QL-magnetic tori."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .config import ConfigError
from .flow import ClosedOrbit
from .geometry import (FunctionSpec, GeometryError, MagneticSystem, OneFormSpec, PhasePoint,
                       SurfaceModel, bump_profile, flux, total_flux)

log = logging.getLogger(__name__)


class NotExactError(ValueError):
    """The magnetic form has non-zero total flux."""


# contact value --------------------------------------------------------------

def _unit_velocity(S, q, phi):
    lam = S.lam(q)
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1) / np.asarray(lam)[..., None]


def contact_value(sys, s, a, chart, q, v):
    """alpha(X + s W) at unit vectors (vectorised over leading axes).

    Tori: 1 - s beta(v) + a (s f - nu(v)). Sphere and half-plane:
    1 - s beta(v) + s^2 f, with beta a primitive of sigma - K mu.
    """
    S = sys.surface
    if sys.beta is None:
        raise ConfigError("contact value needs a primitive beta in the system config")
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    bv = sys.beta.apply(S, chart, q, v)
    f = sys.density(chart, q)
    if S.is_torus:
        return 1.0 - s * bv + a * (s * f - sys.nu(chart, q, v))
    return 1.0 - s * bv + s * s * f


def contact_value_angle(sys, s, a, chart, q, phi):
    v = _unit_velocity(sys.surface, q, phi)
    return contact_value(sys, s, a, chart, q, v)


# certification ----------------------------------------------------------------

@dataclass
class ContactCertificate:
    system: str
    s: float
    a: float
    grid: int
    min_value: float
    margin: float
    verdict: str
    witness: dict | None = None
    stats: dict = field(default_factory=dict)

    @property
    def positive(self):
        return self.verdict == "positive"

    def to_json(self):
        return {
            "system": self.system, "s": self.s, "a": self.a, "grid": self.grid,
            "min_value": self.min_value, "margin": self.margin, "verdict": self.verdict,
            "witness": self.witness, "stats": self.stats,
        }


def _domains(S):
    """(chart, box lower corner, box size, disc radius or None) covering the surface."""
    if S.is_torus:
        return [(0, np.array([0.0, 0.0]), np.array([1.0, 1.0]), None)]
    if S.kind == "sphere":
        return [(c, np.array([-1.0, -1.0]), np.array([2.0, 2.0]), 1.0) for c in (0, 1)]
    ell = float(S.params.get("dilation", 0.0) or 0.0) or 1.0
    # a fundamental annulus of the dilation, over a bounded x-range
    return [(0, np.array([-1.0, 1.0]), np.array([2.0, math.exp(ell) - 1.0]), None)]


def _tile_hessian_bounds(F, lo, size, grid, n=3, h=1e-4):
    """Elementwise |Hessian| bounds of F(x, y, phi) per tile of a grid^3 partition.

    Each tile is sampled at n^3 interior points; the bound of a tile is the
    maximum over itself and its neighbours (periodic in phi), times 1.5.
    """
    step = size / grid
    sub = (np.arange(n) + 0.5) / n
    idx = np.stack(np.meshgrid(*[np.arange(grid)] * 3, indexing="ij"), axis=-1).reshape(-1, 1, 3)
    loc = np.stack(np.meshgrid(sub, sub, sub, indexing="ij"), axis=-1).reshape(1, -1, 3)
    P = (lo + (idx + loc) * step).reshape(-1, 3)
    H = np.zeros((len(P), 3, 3))
    f0 = F(P)
    for i in range(3):
        ei = np.zeros(3)
        ei[i] = h
        H[:, i, i] = np.abs(F(P + ei) - 2 * f0 + F(P - ei)) / h**2
        for j in range(i + 1, 3):
            ej = np.zeros(3)
            ej[j] = h
            val = (F(P + ei + ej) - F(P + ei - ej) - F(P - ei + ej) + F(P - ei - ej)) / (4 * h * h)
            H[:, i, j] = H[:, j, i] = np.abs(val)
    H = H.reshape(grid, grid, grid, n ** 3, 3, 3).max(axis=3)
    out = H.copy()
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dp in (-1, 0, 1):
                sh = np.roll(H, dp, axis=2)
                sh = _shift(_shift(sh, dx, 0), dy, 1)
                out = np.maximum(out, sh)
    return 1.5 * out


def _shift(A, d, axis):
    """Shift along a non-periodic axis, repeating the edge slice."""
    if d == 0:
        return A
    B = np.roll(A, d, axis=axis)
    sl = [slice(None)] * A.ndim
    sl[axis] = 0 if d > 0 else -1
    B[tuple(sl)] = A[tuple(sl)]
    return B


def certify(sys, s=None, a=0.0, grid=16, max_depth=8, max_cells=4_000_000):
    """Grid certificate for alpha(X + s W) > 0 on the unit tangent bundle.

    Cells of (x, y, phi) with half-widths d carry the lower bound
    value(center) - sum |g_i| d_i - d^T |H| d / 2, where g is the gradient at
    the centre and |H| an elementwise Hessian bound sampled on the tile of the
    initial grid containing the cell. Cells whose bound is not positive are
    split (up to ``max_depth``); a cell with a non-positive centre value is a
    witness.
    """
    if grid < 16:
        raise ValueError("grid must be at least 16 per axis")
    s = sys.s if s is None else float(s)
    S = sys.surface
    name = sys.meta.get("name", S.kind)
    worst_center = (math.inf, None)
    worst_bound = math.inf
    margin_used = 0.0
    n_cells = 0
    unresolved = []
    offs = np.array([[dx, dy, dp] for dx in (-1, 1) for dy in (-1, 1) for dp in (-1, 1)])
    for chart, lo2, size2, disc in _domains(S):
        lo = np.array([lo2[0], lo2[1], 0.0])
        size = np.array([size2[0], size2[1], 2 * math.pi])

        def F(P, chart=chart):
            P = np.atleast_2d(P)
            return contact_value_angle(sys, s, a, chart, P[:, :2], P[:, 2])

        Hb = _tile_hessian_bounds(F, lo, size, grid)
        step = size / grid
        idx = np.stack(np.meshgrid(*[np.arange(grid)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        centers = lo + (idx + 0.5) * step
        tiles = idx
        h = step.copy()
        depth = 0
        while len(centers):
            if disc is not None:
                r_xy = 0.5 * math.hypot(h[0], h[1])
                keep = np.hypot(centers[:, 0], centers[:, 1]) - r_xy <= disc
                centers, tiles = centers[keep], tiles[keep]
            n_cells += len(centers)
            d = 0.5 * h
            val = F(centers)
            grad = np.empty_like(centers)
            eps = 1e-6
            for k in range(3):
                e = np.zeros(3)
                e[k] = eps
                grad[:, k] = (F(centers + e) - F(centers - e)) / (2 * eps)
            Hc = Hb[tiles[:, 0], tiles[:, 1], tiles[:, 2]]
            margin = np.abs(grad) @ d + 0.5 * np.einsum("i,nij,j->n", d, Hc, d)
            bound = val - margin
            i = int(np.argmin(val))
            if val[i] < worst_center[0]:
                worst_center = (float(val[i]), (chart, centers[i].copy()))
            bad = bound <= 0
            if np.any(val <= 0):
                break
            good = ~bad
            if np.any(good):
                worst_bound = min(worst_bound, float(np.min(bound[good])))
                margin_used = max(margin_used, float(np.max(margin[good])))
            if not np.any(bad):
                break
            if depth >= max_depth or n_cells + 8 * int(bad.sum()) > max_cells:
                j = np.argmin(bound)
                unresolved.append((float(bound[j]), chart, centers[j].copy()))
                worst_bound = min(worst_bound, float(np.min(bound)))
                break
            # split every undecided cell into 8 children
            h = h / 2
            centers = (centers[bad][:, None, :] + offs[None, :, :] * h / 2).reshape(-1, 3)
            tiles = np.repeat(tiles[bad], 8, axis=0)
            depth += 1
        if worst_center[0] <= 0:
            break
    stats = {"cells": n_cells, "lower_bound": worst_bound}
    if worst_center[0] > 0 and not unresolved:
        return ContactCertificate(name, s, a, grid, worst_center[0], margin_used, "positive",
                                  None, stats)
    # failure: refine the witness by local minimisation
    chart, c0 = worst_center[1]
    if unresolved and worst_center[0] > 0:
        _, chart, c0 = min(unresolved, key=lambda u: u[0])
    wit = _refine_witness(sys, s, a, chart, c0)
    stats["unresolved"] = bool(unresolved and worst_center[0] > 0)
    return ContactCertificate(name, s, a, grid, min(worst_center[0], wit["value"]), margin_used,
                              "failed", wit, stats)


def _refine_witness(sys, s, a, chart, c0):
    def F(P):
        return float(contact_value_angle(sys, s, a, chart, np.asarray(P[:2])[None, :],
                                         np.array([P[2]]))[0])

    res = minimize(F, c0, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000, "maxfev": 40000})
    P = res.x if res.fun < F(c0) else c0
    res2 = minimize(F, P, method="BFGS", options={"gtol": 1e-12})
    if res2.fun < F(P):
        P = res2.x
    q = np.asarray(P[:2], dtype=float)
    if sys.surface.is_torus:
        q = sys.surface.wrap(q)
    return {"chart": int(chart), "q": [float(x) for x in q], "phi": float(P[2] % (2 * math.pi)),
            "value": F(P)}


# s-bounds -------------------------------------------------------------------

def s_bounds(norm_beta, min_f):
    """(s_minus, s_plus): smallest and largest positive roots of 1 - b x + m x^2."""
    b = float(norm_beta)
    m = float(min_f)
    if b < 0:
        raise ValueError("norm_beta must be non-negative")
    roots = []
    if m == 0.0:
        if b > 0:
            roots = [1.0 / b]
    else:
        disc = b * b - 4.0 * m
        if disc >= 0:
            sq = math.sqrt(disc)
            # stable forms 2 / (b -+ sqrt(disc)) and (b +- sqrt(disc)) / (2 m)
            cand = []
            for sgn in (1.0, -1.0):
                den = b - sgn * sq
                if den != 0:
                    cand.append(2.0 / den)
                else:
                    cand.append((b + sgn * sq) / (2 * m))
            roots = [x for x in cand if x > 0 and math.isfinite(x)]
    if not roots:
        return math.inf, 0.0
    return min(roots), max(roots)


def data_bounds(sys, n=256):
    """(sup |beta|, min f) over a sample grid of the surface."""
    S = sys.surface
    pts = []
    for chart, lo, size, disc in _domains(S):
        g = [lo[i] + (np.arange(n) + 0.5) * size[i] / n for i in range(2)]
        Q = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 2)
        if disc is not None:
            Q = Q[np.hypot(Q[:, 0], Q[:, 1]) <= disc]
        pts.append((chart, Q))
    nb = 0.0
    mf = math.inf
    for chart, Q in pts:
        if sys.beta is not None:
            nb = max(nb, float(np.max(sys.beta.norm(S, chart, Q))))
        mf = min(mf, float(np.min(sys.density(chart, Q))))
    return nb, mf


# r0 ---------------------------------------------------------------------------

def fourier_modes(m):
    """First m real Fourier functions on the torus, ordered by |k|^2."""
    ks = []
    R = int(math.ceil(math.sqrt(m))) + 2
    for p in range(-R, R + 1):
        for q in range(-R, R + 1):
            if (p, q) == (0, 0):
                continue
            # one representative of +-k
            if p < 0 or (p == 0 and q < 0):
                continue
            ks.append((p * p + q * q, p, q))
    ks.sort()
    out = []
    for _, p, q in ks:
        out.append((p, q, "cos"))
        if len(out) == m:
            break
        out.append((p, q, "sin"))
        if len(out) == m:
            break
    return out


def _mode_gradients(modes, Q):
    """d(phi_k) at points Q, shape (m, N, 2)."""
    G = np.empty((len(modes), len(Q), 2))
    for i, (p, q, kind) in enumerate(modes):
        arg = 2 * np.pi * (p * Q[:, 0] + q * Q[:, 1])
        d = -np.sin(arg) if kind == "cos" else np.cos(arg)
        G[i, :, 0] = 2 * np.pi * p * d
        G[i, :, 1] = 2 * np.pi * q * d
    return G


def poisson_primitive(sys, n=128):
    """Grid primitive of sigma on a torus: beta = (-d_y psi, d_x psi), lap psi = f lam^2."""
    S = sys.surface
    g = np.arange(n) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    Q = np.stack([X, Y], axis=-1)
    rhs = sys.density(0, Q) * S.lam(Q) ** 2 * S.orientation
    fh = np.fft.fft2(rhs)
    k = np.fft.fftfreq(n, d=1.0 / n) * 2 * np.pi
    KX, KY = np.meshgrid(k, k, indexing="ij")
    k2 = KX**2 + KY**2
    k2[0, 0] = 1.0
    ph = -fh / k2
    ph[0, 0] = 0.0
    b1 = np.real(np.fft.ifft2(-1j * KY * ph))
    b2 = np.real(np.fft.ifft2(1j * KX * ph))
    return Q.reshape(-1, 2), np.stack([b1.ravel(), b2.ravel()], axis=-1)


def _loop_samples(sys, n=512):
    """Points on distinguished loops (the QL circle) added to the r0 samples."""
    if sys.beta is None or sys.beta.kind != "ql-bump":
        return np.zeros((0, 2))
    p = sys.beta.params
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return (np.asarray(p["center"])[None, :] + p["radius"] * np.stack([np.cos(t), np.sin(t)], -1)) % 1.0


def estimate_r0(sys, m=12, grid=96, n_loops=12, sweeps=3):
    """Lower and upper bounds on r0 = inf over primitives of sup |beta|.

    Upper: beta0 + d phi with phi in the first m Fourier modes, minimising a
    softmax of |.|_g by coordinate descent over a temperature schedule; the
    bound is the true max over the sample set. Lower: max over coordinate
    circles of |flux through the disc| / length.
    """
    S = sys.surface
    if not S.is_torus:
        raise GeometryError("r0 estimates are implemented for tori")
    if sys.beta is None:
        # a configured beta is a global primitive, so only this case needs a check
        tf = total_flux(sys, n=512)
        g = (np.arange(512) + 0.5) / 512
        Qc = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
        scale = float(np.mean(np.abs(sys.density(0, Qc)) * S.lam(Qc) ** 2))
        if abs(tf) > 1e-8 * max(1.0, scale):
            raise NotExactError(f"sigma is not exact: total flux {tf:.3e}")
    g = (np.arange(grid) + 0.5) / grid
    Q = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    Q = np.concatenate([Q, _loop_samples(sys)])
    if sys.beta is not None:
        B0 = sys.beta(S, 0, Q)
    else:
        Qp, Bp = poisson_primitive(sys, grid)
        Q, B0 = Qp, Bp
    lam = S.lam(Q)
    modes = fourier_modes(m)
    G = _mode_gradients(modes, Q)

    def norms(c):
        B = B0 + np.tensordot(c, G, axes=(0, 0))
        return np.hypot(B[:, 0], B[:, 1]) / lam

    c = np.zeros(len(modes))
    best_c, best = c.copy(), float(np.max(norms(c)))
    for T in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
        def smooth(c, T=T):
            x = norms(c)
            mx = np.max(x)
            return mx + T * math.log(np.sum(np.exp((x - mx) / T)))

        for _ in range(sweeps):
            for i in range(len(c)):
                def fi(t, i=i):
                    cc = c.copy()
                    cc[i] = t
                    return smooth(cc)

                res = minimize_scalar(fi, bracket=(c[i] - 0.05, c[i] + 0.05), tol=1e-10)
                if res.fun < fi(c[i]):
                    c[i] = res.x
            val = float(np.max(norms(c)))
            if val < best:
                best, best_c = val, c.copy()
    upper = best
    lower = r0_lower(sys, n_loops)
    return {"lower": lower, "upper": upper, "basis": m, "coefficients": best_c.tolist(),
            "modes": [list(md) for md in modes]}


def r0_lower(sys, n_loops=12):
    """max |flux(disc)| / length(circle) over sampled coordinate circles."""
    S = sys.surface
    best = 0.0
    circles = []
    for cx in np.linspace(0, 1, n_loops, endpoint=False):
        for cy in np.linspace(0, 1, n_loops, endpoint=False):
            for r in (0.1, 0.2, 0.3, 0.4):
                circles.append(((cx, cy), r))
    if sys.beta is not None and sys.beta.kind == "ql-bump":
        p = sys.beta.params
        circles.append((tuple(p["center"]), p["radius"]))
    for center, r in circles:
        fl = flux(sys, center, r, n_r=96, n_phi=256)
        t = np.linspace(0, 2 * np.pi, 512, endpoint=False)
        pts = np.asarray(center)[None, :] + r * np.stack([np.cos(t), np.sin(t)], -1)
        length = float(np.sum(S.lam(pts)) * r * 2 * np.pi / len(t))
        best = max(best, abs(fl) / length)
    return best


# QL-magnetic tori ---------------------------------------------------------------

@dataclass(frozen=True)
class QLTorusSpec:
    center: tuple = (0.5, 0.5)
    radius: float = 0.25
    width: float = 0.2
    sharpness: float = 0.3

    @property
    def epsilon(self):
        """kappa_delta - |nu_delta| on the flat torus."""
        return 1.0 / self.radius


def build_ql_torus(spec=QLTorusSpec(), s=1.0, check_grid=256):
    """Flat torus with beta = flat(B), B = b(r) e_phi, |B| = 1 exactly on the circle delta."""
    r, w = float(spec.radius), float(spec.width)
    if r <= 1e-3:
        raise ConfigError("loop radius too small")
    if w <= 0 or w >= r:
        raise ConfigError("bump width must lie in (0, radius) so B vanishes near the centre")
    if r + w >= 0.5:
        raise ConfigError("bump support does not fit in the fundamental square")
    if spec.sharpness <= 0:
        raise ConfigError("sharpness must be positive")
    params = {"center": [float(spec.center[0]), float(spec.center[1])], "radius": r, "width": w,
              "sharpness": float(spec.sharpness)}
    sys = MagneticSystem(SurfaceModel("flat-torus"), FunctionSpec("ql-bump", dict(params)),
                         OneFormSpec("ql-bump", dict(params)), float(s), {"name": "ql-torus"})
    # |B| <= 1 with equality only on delta: grid check away from the loop
    g = (np.arange(check_grid) + 0.5) / check_grid
    Q = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    d = Q - np.asarray(params["center"])
    d -= np.floor(d + 0.5)
    dist = np.abs(np.hypot(d[:, 0], d[:, 1]) - r)
    nb = sys.beta.norm(sys.surface, 0, Q)
    if np.any(nb > 1 + 1e-12):
        raise ConfigError("|B| exceeds 1")
    far = dist > 2.0 / check_grid
    if np.any(nb[far] >= 1.0):
        raise ConfigError("|B| reaches 1 away from the loop")
    q0 = np.asarray(params["center"]) + np.array([r, 0.0])
    p0 = PhasePoint.make(sys.surface, 0, q0, [0.0, 1.0])
    delta = ClosedOrbit(p0, 2 * math.pi * r, 0.0, {"winding": [0, 0]})
    return sys, delta


def ql_profile(sys, r):
    """(|B|, f) along the radial direction at distance r from the centre."""
    p = sys.beta.params
    val, dval = bump_profile((np.asarray(r) - p["radius"]) / p["width"], p.get("sharpness", 1.0))
    return val, dval / p["width"] + val / np.asarray(r)


def default_region(sys, shrink=0.9, n=4000):
    """Annulus around delta on which f > 0 (radial scan), shrunk by ``shrink``."""
    p = sys.beta.params
    r_d, w = p["radius"], p["width"]
    rs = np.linspace(max(r_d - w, 1e-6), r_d + w, n)
    _, f = ql_profile(sys, rs)
    i0 = int(np.argmin(np.abs(rs - r_d)))
    lo = i0
    while lo > 0 and f[lo - 1] > 0:
        lo -= 1
    hi = i0
    while hi < n - 1 and f[hi + 1] > 0:
        hi += 1
    inner = r_d - shrink * (r_d - rs[lo])
    outer = r_d + shrink * (rs[hi] - r_d)
    return inner, outer


def a0_bound(sys, b0=0.05, region=None, n=512):
    """a0 = eps' / max(0, c0) over the torus minus the annulus ``region``.

    eps' = min of 1 - s|beta| and c0 = sup of s f - |nu| for s in [1 - b0, 1 + b0].
    Returns a dict with ``a0`` (inf when c0 <= 0) or a diagnostic when eps' <= 0.
    """
    S = sys.surface
    if sys.beta is None or sys.beta.kind != "ql-bump":
        raise ConfigError("a0 bound needs a QL-torus system")
    if region is None:
        region = default_region(sys)
    inner, outer = region
    g = (np.arange(n) + 0.5) / n
    Q = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    d = Q - np.asarray(sys.beta.params["center"])
    d -= np.floor(d + 0.5)
    rad = np.hypot(d[:, 0], d[:, 1])
    out = (rad <= inner) | (rad >= outer)
    Q = Q[out]
    nb = sys.beta.norm(S, 0, Q)
    f = sys.density(0, Q)
    nu = sys.nu_norm(Q)
    s_hi, s_lo = 1.0 + b0, 1.0 - b0
    eps = float(np.min(1.0 - s_hi * nb))
    c0 = float(np.max(np.maximum(s_hi * f, s_lo * f) - nu))
    # inside the region, s f - |nu| must stay positive over the window
    inside = ~out
    Qi = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)[inside]
    fin = float(np.min(np.minimum(s_hi * sys.density(0, Qi), s_lo * sys.density(0, Qi))
                       - sys.nu_norm(Qi))) if len(Qi) else math.inf
    info = {"eps_prime": eps, "c0": c0, "region": [float(inner), float(outer)], "b0": b0,
            "min_inside": fin}
    if eps <= 0:
        info.update(a0=None, status="window too wide: 1 - s|beta| <= 0 outside the region")
        return info
    if fin <= 0:
        info.update(a0=None, status="s f - |nu| not positive on the region")
        return info
    info.update(a0=math.inf if c0 <= 0 else eps / c0, status="ok")
    return info
