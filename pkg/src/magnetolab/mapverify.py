"""Numerical checks of the symplectomorphism between the magnetic TS^2 and O(-2).

On the round sphere (K = 1, f = 1) the map F_s = m_a(rho) o Phi_b(rho) with
Phi_t the flow of -H and m_a the fibre scaling satisfies
F_s^*((rho^2/2 + s) tau) = theta + s tau. Everything here works in the two
stereographic charts of the sphere model and is vectorised over samples.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

from .geometry import SurfaceModel

SPHERE = SurfaceModel("sphere")


# closed forms -------------------------------------------------------------------

def _check_s(s):
    s = float(s)
    if not s > 0:
        raise ValueError("the map needs s > 0")
    return s


def coefficients(s, rho):
    """(a_s(rho), b_s(rho)) with their removable singularities at rho = 0."""
    s = _check_s(s)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be non-negative")
    a = np.sqrt(2.0 / (np.sqrt(rho**2 + s**2) + s))
    x = rho / s
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    b = np.where(small, -(1.0 - x**2 / 3.0 + x**4 / 5.0) / s, -np.arctan(xs) / np.where(small, 1.0, rho))
    if a.ndim == 0:
        return float(a), float(b)
    return a, b


def radial_coordinate(s, rho):
    """R_s = sqrt((rho^2 + s^2) / (1 + s^2)); equals 1 on the unit sphere bundle."""
    s = float(s)
    rho = np.asarray(rho, dtype=float)
    out = np.sqrt((rho**2 + s**2) / (1.0 + s**2))
    return float(out) if out.ndim == 0 else out


# chart <-> ambient ------------------------------------------------------------------

def _embed(chart, q):
    """Points of S^2 and the chart Jacobian columns d/dx, d/dy (vectorised)."""
    chart = np.asarray(chart)
    x, y = q[..., 0], q[..., 1]
    r2 = x * x + y * y
    den = 1.0 + r2
    sg = np.where(chart == 0, 1.0, -1.0)
    P = np.stack([2 * x / den, sg * 2 * y / den, sg * (r2 - 1) / den], axis=-1)
    d2 = den**2
    Jx = np.stack([2 * (1 - x * x + y * y), -sg * 4 * x * y, sg * 4 * x], axis=-1) / d2[..., None]
    Jy = np.stack([-4 * x * y, sg * 2 * (1 + x * x - y * y), sg * 4 * y], axis=-1) / d2[..., None]
    return P, Jx, Jy


def _to_ambient(chart, q, v):
    P, Jx, Jy = _embed(chart, q)
    return P, Jx * v[..., :1] + Jy * v[..., 1:2]


def _from_ambient(P, U, chart=None):
    """Chart coordinates of (P, U); the chart defaults to the one containing P best."""
    if chart is None:
        chart = np.where(P[..., 2] <= 0, 0, 1)
    chart = np.broadcast_to(np.asarray(chart), P.shape[:-1])
    sg = np.where(chart == 0, 1.0, -1.0)
    den = 1.0 - sg * P[..., 2]
    q = np.stack([P[..., 0] / den, sg * P[..., 1] / den], axis=-1)
    _, Jx, Jy = _embed(chart, q)
    lam2 = (2.0 / (1.0 + np.sum(q * q, axis=-1))) ** 2
    v = np.stack([np.sum(Jx * U, axis=-1), np.sum(Jy * U, axis=-1)], axis=-1) / lam2[..., None]
    return chart, q, v


def _rot(v):
    return SPHERE.rotate(v)


# the maps ------------------------------------------------------------------------------

def phi_flow(b, chart, q, v, chart_out=None):
    """Time-b flow of -H: (gamma(t), j gamma'(t)) along the great circle with gamma' = -j v."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    b = np.asarray(b, dtype=float)
    P, _ = _to_ambient(chart, q, v)
    _, W = _to_ambient(chart, q, -_rot(v))
    rho = np.sqrt(np.sum(W * W, axis=-1))
    safe = np.where(rho > 0, rho, 1.0)
    c = np.cos(b * rho)[..., None]
    sn = np.sin(b * rho)[..., None]
    Pb = P * c + W / safe[..., None] * sn
    Wb = -P * (rho[..., None] * sn) + W * c
    ch, qb, gdot = _from_ambient(Pb, Wb, chart_out)
    return ch, qb, _rot(gdot)


def apply_Fs(s, chart, q, v, chart_out=None):
    """F_s = m_{a_s(rho)} o Phi_{b_s(rho)} in chart coordinates (vectorised)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    rho = SPHERE.norm(q, v)
    a, b = coefficients(s, rho)
    ch, qb, vb = phi_flow(b, chart, q, v, chart_out)
    return ch, qb, np.asarray(a)[..., None] * vb


def phi_flow_ode(b, chart, q, v, rtol=1e-13, atol=1e-14):
    """Phi_b by integrating q' = -j v, v' = -Gamma(q', v) in one chart (cross-check)."""
    def rhs(t, y):
        qq, vv = y[:2], y[2:]
        dq = -_rot(vv)
        return np.concatenate([dq, -SPHERE.christoffel(qq, dq, vv)])

    sol = solve_ivp(rhs, (0.0, float(b)), np.concatenate([q, v]), method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"geodesic integration failed: {sol.message}")
    y = sol.y[:, -1]
    return chart, y[:2], y[2:]


def invert_Fs(s, chart, q, v, guess=None, tol=1e-13, max_iter=50, h=1e-7):
    """Newton inversion of F_s at one image point; the preimage is in the same chart."""
    x = np.concatenate([q, v]) if guess is None else np.asarray(guess, dtype=float).copy()
    target = np.concatenate([q, v])

    def G(z):
        _, qq, vv = apply_Fs(s, chart, z[:2], z[2:], chart_out=chart)
        return np.concatenate([qq, vv]) - target

    for _ in range(max_iter):
        g = G(x)
        if np.max(np.abs(g)) < tol:
            break
        J = np.empty((4, 4))
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            J[:, i] = (G(x + e) - G(x - e)) / (2 * h)
        x = x - np.linalg.solve(J, g)
    return x[:2], x[2:]


# forms and pullbacks ----------------------------------------------------------------

def theta_tau(q, v, w):
    """(theta(w), tau(w)) at (q, v) on the sphere chart (vectorised over leading axes)."""
    rho2 = SPHERE.inner(q, v, v)
    dq = w[..., :2]
    nv = w[..., 2:] + SPHERE.christoffel(q, v, dq)
    return SPHERE.inner(q, v, dq), SPHERE.inner(q, nv, _rot(v)) / rho2


def test_vectors(q, v):
    """Frame X/rho, Y/rho, H/rho, V at each sample, shape (4, N, 4)."""
    rho = np.sqrt(SPHERE.inner(q, v, v))[..., None]
    jv = _rot(v)
    X = np.concatenate([v, -SPHERE.christoffel(q, v, v)], axis=-1) / rho
    Y = np.concatenate([np.zeros_like(v), v], axis=-1) / rho
    H = np.concatenate([jv, -SPHERE.christoffel(q, v, jv)], axis=-1) / rho
    V = np.concatenate([np.zeros_like(v), jv], axis=-1)
    return np.stack([X, Y, H, V])


def _directional(F, chart, q, v, w, h, richardson=True):
    """Central difference of F(chart, q, v) -> (q', v') along w, optionally Richardson-extrapolated."""
    def D(hh):
        hh = np.asarray(hh, dtype=float)[..., None]
        qp, vp = q + hh * w[..., :2], v + hh * w[..., 2:]
        qm, vm = q - hh * w[..., :2], v - hh * w[..., 2:]
        _, a1, b1 = F(chart, qp, vp)
        _, a2, b2 = F(chart, qm, vm)
        return np.concatenate([a1 - a2, b1 - b2], axis=-1) / (2 * hh)

    if not richardson:
        return D(h)
    return (4.0 * D(h / 2) - D(h)) / 3.0


def pullback_residual(s, chart, q, v, h=1e-3, richardson=True):
    """max |F_s^*((rho^2/2 + s) tau) - (theta + s tau)| over the test vectors, per sample."""
    s = _check_s(s)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    chart = np.broadcast_to(np.asarray(chart), q.shape[:-1])
    ch_out, q1, v1 = apply_Fs(s, chart, q, v)
    rho1 = SPHERE.norm(q1, v1)

    def F(c, qq, vv):
        return apply_Fs(s, c, qq, vv, chart_out=ch_out)

    step = h * np.maximum(1.0, SPHERE.norm(q, v))
    worst = np.zeros(len(q))
    for w in test_vectors(q, v):
        dF = _directional(F, chart, q, v, w, step, richardson)
        _, tau1 = theta_tau(q1, v1, dF)
        lhs = (rho1**2 / 2 + s) * tau1
        th, ta = theta_tau(q, v, w)
        worst = np.maximum(worst, np.abs(lhs - (th + s * ta)))
    return worst


def phi_pullback_residual(b, chart, q, v, h=1e-3, richardson=True):
    """max |Phi_b^* tau - (-sin(b rho)/rho theta + cos(b rho) tau)| over the test vectors."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), q.shape[:-1])
    chart = np.broadcast_to(np.asarray(chart), q.shape[:-1])
    ch_out, q1, v1 = phi_flow(b, chart, q, v)
    rho = SPHERE.norm(q, v)

    def F(c, qq, vv):
        return phi_flow(b, c, qq, vv, chart_out=ch_out)

    step = h * np.maximum(1.0, rho)
    worst = np.zeros(len(q))
    for w in test_vectors(q, v):
        dF = _directional(F, chart, q, v, w, step, richardson)
        _, tau1 = theta_tau(q1, v1, dF)
        th, ta = theta_tau(q, v, w)
        expect = -np.sin(b * rho) / rho * th + np.cos(b * rho) * ta
        worst = np.maximum(worst, np.abs(tau1 - expect))
    return worst


def convergence_order(s, chart, q, v, steps=(4e-2, 2e-2, 1e-2)):
    """Observed order of the plain central-difference pullback residual in the step size."""
    r = [float(np.max(pullback_residual(s, chart, q, v, h=h, richardson=False))) for h in steps]
    orders = [math.log(r[i] / r[i + 1]) / math.log(steps[i] / steps[i + 1]) for i in range(len(r) - 1)]
    return {"steps": list(steps), "residuals": r, "orders": orders}


# Liouville field and the radial coordinate --------------------------------------------

def omega_matrix(s, q, v):
    """Matrix of omega_s = d theta - s pi^* mu in chart coordinates (q1, q2, v1, v2)."""
    lam2 = float(SPHERE.lam(q)) ** 2
    g = SPHERE.grad_log_lambda(q)
    dlam2 = 2 * lam2 * g  # gradient of lam^2
    W = np.zeros((4, 4))
    # theta = lam^2 v_i dq_i; d theta = lam^2 dv_i ^ dq_i + d_j(lam^2) v_i dq_j ^ dq_i
    for i in range(2):
        W[2 + i, i] += lam2
        W[i, 2 + i] -= lam2
        for j in range(2):
            W[j, i] += dlam2[j] * v[i]
            W[i, j] -= dlam2[j] * v[i]
    mu = SPHERE.orientation * lam2
    W[0, 1] -= s * mu
    W[1, 0] += s * mu
    return W


def liouville_field(s, q, v):
    """Z_s with omega_s(Z_s, .) = theta + s tau."""
    W = omega_matrix(s, q, v)
    E = np.eye(4)
    th, ta = theta_tau(np.broadcast_to(q, (4, 2)), np.broadcast_to(v, (4, 2)), E)
    alpha = th + s * ta
    # omega(Z, e_j) = sum_i Z_i W[i, j]
    return np.linalg.solve(W.T, alpha)


def liouville_check(s, chart, q, v, r, rtol=1e-12, atol=1e-13):
    """Flow Z_s for time r from a unit vector; returns |R_s(end) - e^r|."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)

    def rhs(t, y):
        return liouville_field(s, y[:2], y[2:])

    sol = solve_ivp(rhs, (0.0, float(r)), np.concatenate([q, v]), method="DOP853",
                    rtol=rtol, atol=atol)
    y = sol.y[:, -1]
    rho = float(SPHERE.norm(y[:2], y[2:]))
    return abs(radial_coordinate(s, rho) - math.exp(r)), rho


# sampling and the full report ----------------------------------------------------------

def random_samples(n, rng, rho_range=(0.1, 5.0)):
    """Uniform points on S^2 with uniform directions and speeds in rho_range, canonical charts."""
    P = rng.normal(size=(n, 3))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    T = rng.normal(size=(n, 3))
    T -= np.sum(T * P, axis=1, keepdims=True) * P
    T /= np.linalg.norm(T, axis=1, keepdims=True)
    rho = rng.uniform(rho_range[0], rho_range[1], size=n)
    chart, q, v = _from_ambient(P, T * rho[:, None])
    return np.asarray(chart), q, v


def verify_appendix(s_values=(0.1, 1.0, 10.0), samples=1000, seed=0, phi_samples=100):
    """Residuals of the pullback identities for each s, as a JSON-ready dict."""
    rng = np.random.default_rng(seed)
    out = {"seed": seed, "samples": samples, "results": []}
    for s in s_values:
        chart, q, v = random_samples(samples, rng)
        res = pullback_residual(s, chart, q, v)
        rho = SPHERE.norm(q, v)
        _, q1, v1 = apply_Fs(s, chart, q, v)
        a, _ = coefficients(s, rho)
        speed = float(np.max(np.abs(SPHERE.norm(q1, v1) - np.sqrt(2 * (np.sqrt(rho**2 + s**2) - s)))))
        pc, pq, pv = random_samples(phi_samples, rng)
        b = rng.uniform(-1, 1, size=phi_samples)
        pres = phi_pullback_residual(b, pc, pq, pv)
        conv = convergence_order(s, chart[:8], q[:8], v[:8])
        out["results"].append({
            "s": float(s),
            "pullback_max_residual": float(np.max(res)),
            "phi_pullback_max_residual": float(np.max(pres)),
            "speed_law_max_error": speed,
            "convergence_orders": conv["orders"],
            "min_convergence_order": float(min(conv["orders"])),
        })
    out["max_residual"] = max(r["pullback_max_residual"] for r in out["results"])
    out["max_phi_residual"] = max(r["phi_pullback_max_residual"] for r in out["results"])
    out["min_convergence_order"] = min(r["min_convergence_order"] for r in out["results"])
    return out
