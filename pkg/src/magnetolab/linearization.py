"""Transverse linearized flow of closed orbits and Conley-Zehnder type indices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .flow import integrate
from .geometry import GeometryError, coframe_eval, frame, frame_coefficients

J0 = np.array([[0.0, -1.0], [1.0, 0.0]])

DEGENERACY_TOL = 1e-8
RESONANCE_TOL = 1e-6


class FrameError(GeometryError):
    """The transverse frame degenerates along the orbit."""


class DegeneracyError(ValueError):
    """Endpoint of a symplectic path has eigenvalue 1."""


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class SymplecticPath:
    t: np.ndarray
    psi: np.ndarray  # (N, 2, 2)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.psi = np.asarray(self.psi, dtype=float)
        if self.psi.ndim != 3 or self.psi.shape[1:] != (2, 2) or len(self.t) != len(self.psi):
            raise ValueError("psi must have shape (N, 2, 2) matching t")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("path times must increase")

    @property
    def period(self):
        return float(self.t[-1] - self.t[0])

    @property
    def end(self):
        return self.psi[-1]

    def det_residual(self):
        return float(np.max(np.abs(np.linalg.det(self.psi) - 1.0)))

    def spline(self):
        return CubicSpline(self.t, self.psi, axis=0)

    def resample(self, n):
        """Re-sample on n equally spaced times (used to check naturality)."""
        ts = np.linspace(self.t[0], self.t[-1], n)
        return SymplecticPath(ts, self.spline()(ts), dict(self.meta))

    def reparametrize(self, phi):
        """Path t -> psi(phi(t)) for an increasing map phi of [0, T] onto itself."""
        ts = phi(self.t)
        return SymplecticPath(self.t.copy(), self.spline()(ts), dict(self.meta))

    def iterate(self, k):
        """k-fold concatenation psi(t - jT) psi(T)^j."""
        if k < 1:
            raise ValueError("k must be >= 1")
        T = self.period
        ts = [self.t]
        ps = [self.psi]
        M = self.end
        Mj = np.eye(2)
        for j in range(1, k):
            Mj = M @ Mj
            ts.append(self.t[1:] + j * T)
            ps.append(self.psi[1:] @ Mj)
        return SymplecticPath(np.concatenate(ts), np.concatenate(ps), dict(self.meta, iterate=k))


def transverse_coordinates(sys, p, w):
    """Class of a tangent vector w of the energy level in TΣ / <X_rho>.

    Writes w = a X + d Y + b H + c V = a (X + s f V) + b H + (c - s f a) V and
    returns (c - s f a, b) in the positively oriented basis ([V], [H]).
    """
    cX, cY, cH, cV = frame_coefficients(sys, p, w)
    sf = sys.s * float(sys.density(p.chart, p.q))
    return np.array([cV - sf * cX, cH]), cY


def linearized_flow(sys, orbit, n_samples=800, tol=1e-12):
    """Transverse linearized flow along a closed orbit as a path in Sp(2).

    The variational equation of the full flow is integrated with the orbit;
    images of V and H at the start are expressed in the frame ([V], [H]) of the
    quotient TΣ / <X_rho> at each sample. Both frame vectors have symplectic
    area rho^2, so the path is normalised by that constant.
    """
    T = orbit.period
    if T <= 0:
        raise ValueError("orbit period must be positive")
    p0 = orbit.p0
    rho = float(sys.surface.norm(p0.q, p0.v))
    if rho <= 0:
        raise FrameError("orbit on the zero section")
    traj = integrate(sys, p0, T, tol=tol, out_dt=T / n_samples, variational=True)
    F0 = frame(sys, p0)
    V0, H0 = F0[3], F0[2]
    psi = np.empty((len(traj), 2, 2))
    worst_y = 0.0
    for i in range(len(traj)):
        p = traj.point(i)
        stm = traj.stm[i]
        fr = frame(sys, p)
        cond = np.linalg.cond(fr)
        if not np.isfinite(cond) or cond > 1e12:
            raise FrameError(f"frame degenerate at t={traj.t[i]:.6g}, q={p.q}")
        scale = 1.0
        if traj.affine is not None:
            scale = traj.affine[i, 0]
        a, ya = transverse_coordinates(sys, p, stm @ V0 * scale)
        b, yb = transverse_coordinates(sys, p, stm @ H0 * scale)
        worst_y = max(worst_y, abs(ya), abs(yb))
        psi[i, :, 0] = a
        psi[i, :, 1] = b
    psi[0] = np.eye(2)
    path = SymplecticPath(traj.t - traj.t[0], psi, {"radial_leak": worst_y, "rho": rho})
    return path


def frame_phase_winding(sys, orbit, c=1.0, n_samples=200, tol=1e-12):
    """Turns of the projected frame {P(V), P(H)} against ([V], [H]) along an orbit.

    P projects onto ker(alpha) with alpha = theta + c tau, along span{X_rho, Y};
    the projected vectors are written in the quotient frame and the angle of
    P(V) is followed continuously. A winding below a quarter turn means the
    quotient frame may stand in for the contact-plane frame.
    """
    T = orbit.period
    traj = integrate(sys, orbit.p0, T, tol=tol, out_dt=T / n_samples)
    ang = []
    for i in range(len(traj)):
        p = traj.point(i)
        X, Y, H, V = frame(sys, p)
        sf = sys.s * float(sys.density(p.chart, p.q))
        Xr = X + sf * V
        cols = []
        for w in (V, H):
            # solve alpha(w - a Xr - b Y) = 0 and drho(w - a Xr - b Y) = 0
            A = np.array([[_alpha(sys, p, Xr, c), _alpha(sys, p, Y, c)],
                          [coframe_eval(sys, p, Xr)[1], coframe_eval(sys, p, Y)[1]]])
            rhs = np.array([_alpha(sys, p, w, c), coframe_eval(sys, p, w)[1]])
            a, b = np.linalg.solve(A, rhs)
            cols.append(w - a * Xr - b * Y)
        from_v, _ = transverse_coordinates(sys, p, cols[0])
        ang.append(math.atan2(from_v[1], from_v[0]))
    ang = np.unwrap(np.asarray(ang))
    return float(np.max(np.abs(ang - ang[0])) / (2 * math.pi))


def _alpha(sys, p, w, c):
    theta, _, _, tau = coframe_eval(sys, p, w)
    return theta + c * tau


# index computations -----------------------------------------------------------

def _sign(S):
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    scale = max(1.0, float(np.max(np.abs(w))))
    return int(np.sum(w > 1e-9 * scale) - np.sum(w < -1e-9 * scale))


def _crossing_form(spl, t):
    P = spl(t)
    dP = spl(t, 1)
    return -J0 @ dP @ np.linalg.inv(P)


def _restricted_signature(S, P, tol=1e-4):
    """Signature of S on ker(P - I): full space, a line, or nothing."""
    u, sv, vt = np.linalg.svd(P - np.eye(2))
    scale = max(1.0, float(np.max(np.abs(P))))
    if sv[0] < tol * scale:
        return _sign(S)
    k = vt[-1]
    val = float(k @ (0.5 * (S + S.T)) @ k)
    if abs(val) < 1e-10:
        return 0
    return 1 if val > 0 else -1


def _bisect(g, a, b, tol=1e-10):
    ga = g(a)
    for _ in range(200):
        if b - a < tol:
            break
        m = 0.5 * (a + b)
        gm = g(m)
        if (gm > 0) == (ga > 0):
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)


def crossings(path, refine=8):
    """Interior eigenvalue-1 crossings as (t, kind, contribution).

    Candidates are sign changes of 2 - trace (refined by bisection) and local
    minima of 2 - trace where psi comes close to the identity. Candidates within
    a few sampling cells of a near-identity point form one crossing with a
    two-dimensional kernel; interpolation noise can otherwise split it.
    """
    from scipy.optimize import minimize_scalar

    spl = path.spline()
    t = path.t
    fine = np.linspace(t[0], t[-1], refine * (len(t) - 1) + 1)
    h = fine[1] - fine[0]
    P = spl(fine)
    g = 2.0 - (P[:, 0, 0] + P[:, 1, 1])
    T = t[-1]
    lo = fine[0] + 1e-9 * T
    hi = T - 1e-9 * T
    eye = np.eye(2)

    def gfun(x):
        M = spl(x)
        return 2.0 - (M[0, 0] + M[1, 1])

    def near_identity(x):
        M = spl(x)
        return np.linalg.norm(M - eye) < 1e-4 * max(1.0, float(np.max(np.abs(M))))

    cands = []
    for i in range(1, len(fine) - 1):
        if (g[i] > 0) != (g[i + 1] > 0):
            if i + 1 == len(fine) - 1 and abs(g[-1]) < DEGENERACY_TOL:
                continue
            cands.append((_bisect(gfun, fine[i], fine[i + 1]), "transverse"))
        elif g[i] >= 0 and g[i] < g[i - 1] and g[i] <= g[i + 1]:
            res = minimize_scalar(lambda x: np.linalg.norm(spl(x) - eye),
                                  bounds=(fine[i - 1], fine[i + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if near_identity(res.x):
                cands.append((float(res.x), "identity"))
    cands = sorted(c for c in cands if lo < c[0] < hi)
    # cluster candidates around near-identity points
    out = []
    i = 0
    while i < len(cands):
        j = i
        while j + 1 < len(cands) and cands[j + 1][0] - cands[j][0] < 4 * h:
            j += 1
        group = cands[i:j + 1]
        if len(group) > 1 or group[0][1] == "identity":
            xs = [c[0] for c in group]
            res = minimize_scalar(lambda x: np.linalg.norm(spl(x) - eye),
                                  bounds=(min(xs) - h, max(xs) + h), method="bounded",
                                  options={"xatol": 1e-12})
            if near_identity(res.x):
                x = float(res.x)
                out.append((x, "identity", _sign(_crossing_form(spl, x))))
                i = j + 1
                continue
        for x, _ in group:
            S = _crossing_form(spl, x)
            out.append((x, "transverse", _restricted_signature(S, spl(x))))
        i = j + 1
    return out


def cz_index(path):
    """Robbin-Salamon index of a path in Sp(2) starting at the identity.

    Crossing-form count: half the signature at t = 0 plus the signatures of the
    interior crossings; the endpoint must be non-degenerate.
    """
    M = path.end
    tr = float(M[0, 0] + M[1, 1])
    if abs(tr - 2.0) <= DEGENERACY_TOL:
        raise DegeneracyError(f"degenerate endpoint, trace = {tr:.12g}")
    spl = path.spline()
    S0 = -J0 @ spl(path.t[0], 1)
    sig0 = _sign(S0)
    if sig0 == 0 or abs(np.linalg.det(0.5 * (S0 + S0.T))) < 1e-12 * max(1.0, np.max(np.abs(S0)) ** 2):
        # degenerate start: perturb by a small positive rotation, which is the
        # Robbin-Salamon normalisation for paths with a degenerate initial form
        eps = 1e-3
        Tp = path.period
        pert = np.array([rotation(eps * (s - path.t[0]) / Tp) for s in path.t])
        pert_path = SymplecticPath(path.t, path.psi @ pert, dict(path.meta))
        tr2 = float(np.trace(pert_path.end))
        if abs(tr2 - 2.0) <= DEGENERACY_TOL or (tr2 - 2.0) * (tr - 2.0) < 0 and abs(tr - 2) < 1e-3:
            raise DegeneracyError(f"index unstable under perturbation, trace = {tr:.12g}")
        S0 = -J0 @ pert_path.spline()(path.t[0], 1)
        path, sig0 = pert_path, _sign(S0)
    mu2 = sig0  # twice the index accumulates half-integer endpoint terms
    for _, _, c in crossings(path):
        mu2 += 2 * c
    if mu2 % 2:
        raise DegeneracyError("non-integer crossing count")
    return mu2 // 2


def winding_interval(path, n_dirs=64):
    """Interval of total rotation (in turns) of psi(t) u over unit vectors u."""
    angles = np.linspace(0, np.pi, n_dirs, endpoint=False)
    U = np.stack([np.cos(angles), np.sin(angles)], axis=0)  # 2 x n
    W = path.psi @ U  # N x 2 x n
    ang = np.unwrap(np.arctan2(W[:, 1, :], W[:, 0, :]), axis=0)
    tot = (ang[-1] - ang[0]) / (2 * np.pi)
    return float(tot.min()), float(tot.max())


def winding_index(path, n_dirs=64):
    """Index from the rotation interval; independent of the crossing count."""
    M = path.end
    if abs(np.trace(M) - 2.0) <= DEGENERACY_TOL:
        raise DegeneracyError(f"degenerate endpoint, trace = {np.trace(M):.12g}")
    lo, hi = winding_interval(path, n_dirs)
    k = math.floor(hi)
    if lo < k <= hi or math.isclose(k, hi):
        return 2 * k
    return 2 * math.floor(lo) + 1


def classify(M):
    tr = float(np.trace(M))
    if abs(abs(tr) - 2.0) <= DEGENERACY_TOL:
        return "degenerate"
    return "elliptic" if abs(tr) < 2 else "hyperbolic"


def rotation_angle(M):
    """Rotation angle in (0, 2 pi) of an elliptic symplectic matrix."""
    c = float(np.trace(M)) / 2.0
    th = math.acos(max(-1.0, min(1.0, c)))
    return th if M[1, 0] > 0 else 2 * math.pi - th


def rotation_number(path, mu=None):
    """Delta tilde with mu = 2 floor(Delta) + 1 for an elliptic endpoint.

    Uses the integer part from the index and the fractional part from the
    endpoint's rotation angle, so it is consistent with the crossing count.
    """
    M = path.end
    if classify(M) != "elliptic":
        raise ValueError("rotation number needs an elliptic endpoint")
    if mu is None:
        mu = cz_index(path)
    frac = rotation_angle(M) / (2 * math.pi)
    return (mu - 1) / 2 + frac


def non_resonant(delta, k_max, tol=RESONANCE_TOL):
    return all(abs(k * delta - round(k * delta)) >= tol for k in range(1, k_max + 1))


@dataclass
class OrbitIndexData:
    mu: int
    kind: str
    delta: float | None = None
    trace: float = float("nan")
    goodness: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("elliptic", "hyperbolic"):
            raise ValueError("kind must be elliptic or hyperbolic")
        if self.kind == "elliptic" and self.delta is None:
            raise ValueError("elliptic orbits need a rotation number")


def index_data(path, k_max=8):
    M = path.end
    kind = classify(M)
    if kind == "degenerate":
        raise DegeneracyError(f"transversally degenerate orbit, trace = {np.trace(M):.12g}")
    mu = cz_index(path)
    delta = None
    if kind == "elliptic":
        delta = rotation_number(path, mu)
        if not non_resonant(delta, k_max):
            raise DegeneracyError(f"resonant rotation number {delta:.9g} (k <= {k_max})")
    data = OrbitIndexData(mu, kind, delta, float(np.trace(M)))
    data.goodness = {k: good_bad(mu, kind, k) for k in range(1, k_max + 1)}
    return data


def iterate_index(data, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    if data.kind == "elliptic":
        return 2 * math.floor(k * data.delta) + 1
    return k * data.mu


def grading(mu, n=2):
    return (n - mu - 1, n - mu)


def good_bad(mu, kind, k):
    """True for good iterates: hyperbolic x^k is bad iff mu is odd and k even."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if kind == "elliptic":
        return True
    return not (mu % 2 == 1 and k % 2 == 0)


def iteration_consistency(path, k_max=8, data=None):
    """Compare cz_index of concatenated paths with the iteration formula."""
    if data is None:
        data = index_data(path, k_max)
    rows = []
    for k in range(1, k_max + 1):
        expected = iterate_index(data, k)
        try:
            got = cz_index(path.iterate(k))
            note = ""
        except DegeneracyError as exc:
            got, note = None, f"skipped: {exc}"
        rows.append({"k": k, "formula": expected, "crossing": got,
                     "match": got is None or got == expected, "note": note})
    return {"mu_bar": data.mu, "type": data.kind, "delta_tilde": data.delta, "rows": rows,
            "mismatches": sum(1 for r in rows if not r["match"])}


def index_table(data, k_max, n=2):
    table = []
    for k in range(1, k_max + 1):
        mk = iterate_index(data, k)
        dm, dp = grading(mk, n)
        table.append({"k": k, "mu_bar_k": mk, "deg_minus": dm, "deg_plus": dp,
                      "good": good_bad(data.mu, data.kind, k)})
    return table
