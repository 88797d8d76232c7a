"""Hot loops: conformal-chart magnetic vector field and a DOP853 stepper.

Every function here is scalar or loop based so that it compiles under
numba and still runs unchanged as plain Python when numba is disabled.
System data travels as the tuple ``(skind, sp, fkind, fp, s, orient)``.
"""

import math

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from ._accel import njit

# surface kinds
FLAT_TORUS = 0
CONFORMAL_TORUS = 1
SPHERE = 2
HALFPLANE = 3

# density kinds
F_CONSTANT = 0
F_FOURIER = 1
F_AMBIENT = 2
F_QLBUMP = 3

SPHERE_SWITCH = 1.5
HALFPLANE_LO = 1e-4
HALFPLANE_HI = 1e4

_NS = _dop.N_STAGES
DOP_A = np.ascontiguousarray(_dop.A[:_NS, :_NS], dtype=np.float64)
DOP_B = np.ascontiguousarray(_dop.B, dtype=np.float64)
DOP_C = np.ascontiguousarray(_dop.C[:_NS], dtype=np.float64)
DOP_E3 = np.ascontiguousarray(_dop.E3, dtype=np.float64)
DOP_E5 = np.ascontiguousarray(_dop.E5, dtype=np.float64)

TWO_PI = 2.0 * math.pi


@njit
def log_lambda(skind, sp, x, y):
    if skind == FLAT_TORUS:
        return 0.0
    if skind == CONFORMAL_TORUS:
        acc = 0.0
        n = int(sp[0])
        for i in range(n):
            p, q, a, b = sp[1 + 4 * i], sp[2 + 4 * i], sp[3 + 4 * i], sp[4 + 4 * i]
            arg = TWO_PI * (p * x + q * y)
            acc += a * math.cos(arg) + b * math.sin(arg)
        return acc
    if skind == SPHERE:
        return math.log(2.0 / (1.0 + x * x + y * y))
    return -math.log(y)


@njit
def grad_log_lambda(skind, sp, x, y):
    if skind == FLAT_TORUS:
        return 0.0, 0.0
    if skind == CONFORMAL_TORUS:
        gx = 0.0
        gy = 0.0
        n = int(sp[0])
        for i in range(n):
            p, q, a, b = sp[1 + 4 * i], sp[2 + 4 * i], sp[3 + 4 * i], sp[4 + 4 * i]
            arg = TWO_PI * (p * x + q * y)
            d = -a * math.sin(arg) + b * math.cos(arg)
            gx += TWO_PI * p * d
            gy += TWO_PI * q * d
        return gx, gy
    if skind == SPHERE:
        den = 1.0 + x * x + y * y
        return -2.0 * x / den, -2.0 * y / den
    return 0.0, -1.0 / y


@njit
def sphere_point(chart, x, y):
    r2 = x * x + y * y
    den = 1.0 + r2
    if chart == 0:
        return 2.0 * x / den, 2.0 * y / den, (r2 - 1.0) / den
    return 2.0 * x / den, -2.0 * y / den, (1.0 - r2) / den


@njit
def bump(u, c):
    """exp(c (1 - 1/(1-u^2))) on |u| < 1: smooth, equal to 1 only at u = 0."""
    if abs(u) >= 1.0:
        return 0.0, 0.0
    d = 1.0 - u * u
    val = math.exp(c * (1.0 - 1.0 / d))
    return val, val * c * (-2.0 * u / (d * d))


@njit
def density(fkind, fp, skind, chart, x, y):
    if fkind == F_CONSTANT:
        return fp[0]
    if fkind == F_FOURIER:
        acc = fp[0]
        n = int(fp[1])
        for i in range(n):
            p, q, a, b = fp[2 + 4 * i], fp[3 + 4 * i], fp[4 + 4 * i], fp[5 + 4 * i]
            arg = TWO_PI * (p * x + q * y)
            acc += a * math.cos(arg) + b * math.sin(arg)
        return acc
    if fkind == F_AMBIENT:
        px, py, pz = sphere_point(chart, x, y)
        return fp[0] + fp[1] * px + fp[2] * py + fp[3] * pz
    # QL bump: f = b'(r) + b(r)/r for the rotational field b(r) e_phi
    # fp = [cx, cy, radius, width, sharpness]
    dx = x - fp[0]
    dy = y - fp[1]
    dx -= math.floor(dx + 0.5)
    dy -= math.floor(dy + 0.5)
    r = math.sqrt(dx * dx + dy * dy)
    if r == 0.0:
        return 0.0
    val, dval = bump((r - fp[2]) / fp[3], fp[4])
    return dval / fp[3] + val / r


@njit
def rhs4(state, chart, skind, sp, fkind, fp, s, orient, out):
    x = state[0]
    y = state[1]
    v1 = state[2]
    v2 = state[3]
    gx, gy = grad_log_lambda(skind, sp, x, y)
    vg = v1 * gx + v2 * gy
    vv = v1 * v1 + v2 * v2
    f = density(fkind, fp, skind, chart, x, y)
    sf = s * f * orient
    out[0] = v1
    out[1] = v2
    out[2] = -(2.0 * v1 * vg - vv * gx) - sf * v2
    out[3] = -(2.0 * v2 * vg - vv * gy) + sf * v1


@njit
def hess_log_lambda(skind, sp, x, y):
    if skind == FLAT_TORUS:
        return 0.0, 0.0, 0.0
    if skind == CONFORMAL_TORUS:
        hxx = 0.0
        hxy = 0.0
        hyy = 0.0
        n = int(sp[0])
        for i in range(n):
            p, q, a, b = sp[1 + 4 * i], sp[2 + 4 * i], sp[3 + 4 * i], sp[4 + 4 * i]
            arg = TWO_PI * (p * x + q * y)
            d2 = -(a * math.cos(arg) + b * math.sin(arg)) * TWO_PI * TWO_PI
            hxx += p * p * d2
            hxy += p * q * d2
            hyy += q * q * d2
        return hxx, hxy, hyy
    if skind == SPHERE:
        den = 1.0 + x * x + y * y
        d2 = den * den
        return -2.0 / den + 4.0 * x * x / d2, 4.0 * x * y / d2, -2.0 / den + 4.0 * y * y / d2
    return 0.0, 0.0, 1.0 / (y * y)


@njit
def bump2(u, c):
    """Second derivative of the bump profile."""
    if abs(u) >= 1.0:
        return 0.0
    d = 1.0 - u * u
    val = math.exp(c * (1.0 - 1.0 / d))
    g = -2.0 * c * u / (d * d)
    dg = c * (-2.0 / (d * d) - 8.0 * u * u / (d * d * d))
    return val * (g * g + dg)


@njit
def grad_density(fkind, fp, skind, chart, x, y):
    if fkind == F_CONSTANT:
        return 0.0, 0.0
    if fkind == F_FOURIER:
        gx = 0.0
        gy = 0.0
        n = int(fp[1])
        for i in range(n):
            p, q, a, b = fp[2 + 4 * i], fp[3 + 4 * i], fp[4 + 4 * i], fp[5 + 4 * i]
            arg = TWO_PI * (p * x + q * y)
            d = (-a * math.sin(arg) + b * math.cos(arg)) * TWO_PI
            gx += p * d
            gy += q * d
        return gx, gy
    if fkind == F_AMBIENT:
        den = 1.0 + x * x + y * y
        d2 = den * den
        pxx = (2.0 * den - 4.0 * x * x) / d2
        pxy = -4.0 * x * y / d2
        pyx = -4.0 * x * y / d2
        pyy = (2.0 * den - 4.0 * y * y) / d2
        pzx = 4.0 * x / d2
        pzy = 4.0 * y / d2
        if chart == 1:
            pyx = -pyx
            pyy = -pyy
            pzx = -pzx
            pzy = -pzy
        return (fp[1] * pxx + fp[2] * pyx + fp[3] * pzx,
                fp[1] * pxy + fp[2] * pyy + fp[3] * pzy)
    dx = x - fp[0]
    dy = y - fp[1]
    dx -= math.floor(dx + 0.5)
    dy -= math.floor(dy + 0.5)
    r = math.sqrt(dx * dx + dy * dy)
    if r == 0.0:
        return 0.0, 0.0
    w = fp[3]
    u = (r - fp[2]) / w
    val, dval = bump(u, fp[4])
    fr = bump2(u, fp[4]) / (w * w) + dval / (w * r) - val / (r * r)
    return fr * dx / r, fr * dy / r


@njit
def jac4(state, chart, skind, sp, fkind, fp, s, orient, jac):
    """Analytic Jacobian of rhs4 with respect to (x, y, v1, v2)."""
    x = state[0]
    y = state[1]
    v1 = state[2]
    v2 = state[3]
    gx, gy = grad_log_lambda(skind, sp, x, y)
    hxx, hxy, hyy = hess_log_lambda(skind, sp, x, y)
    f = density(fkind, fp, skind, chart, x, y)
    fx, fy = grad_density(fkind, fp, skind, chart, x, y)
    vg = v1 * gx + v2 * gy
    vv = v1 * v1 + v2 * v2
    so = s * orient
    for i in range(4):
        for j in range(4):
            jac[i, j] = 0.0
    jac[0, 2] = 1.0
    jac[1, 3] = 1.0
    # d/dq of -(2 v (v.g) - |v|^2 g) + s f o (-v2, v1)
    vhx = v1 * hxx + v2 * hxy
    vhy = v1 * hxy + v2 * hyy
    jac[2, 0] = -(2.0 * v1 * vhx - vv * hxx) - so * fx * v2
    jac[2, 1] = -(2.0 * v1 * vhy - vv * hxy) - so * fy * v2
    jac[3, 0] = -(2.0 * v2 * vhx - vv * hxy) + so * fx * v1
    jac[3, 1] = -(2.0 * v2 * vhy - vv * hyy) + so * fy * v1
    # d/dv
    jac[2, 2] = -2.0 * vg
    jac[2, 3] = -(2.0 * v1 * gy - 2.0 * v2 * gx) - so * f
    jac[3, 2] = -(2.0 * v2 * gx - 2.0 * v1 * gy) + so * f
    jac[3, 3] = -2.0 * vg


@njit
def rhs_full(state, chart, skind, sp, fkind, fp, s, orient, out):
    """Flow plus (optionally) the 4x4 variational equation, flattened row-major."""
    rhs4(state, chart, skind, sp, fkind, fp, s, orient, out)
    if state.shape[0] == 4:
        return
    jac = np.empty((4, 4))
    jac4(state, chart, skind, sp, fkind, fp, s, orient, jac)
    for i in range(4):
        for k in range(4):
            acc = 0.0
            for j in range(4):
                acc += jac[i, j] * state[4 + 4 * j + k]
            out[4 + 4 * i + k] = acc


@njit
def _error_norm(K, h, y, ynew, rtol, atol, E3, E5, ascale, nfree):
    # the first nfree components are translation invariant coordinates: their
    # error is measured on the scale of the geometry, not of their value
    n = y.shape[0]
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        if i < nfree:
            sc = (atol + rtol) * ascale
        else:
            sc = atol * ascale + rtol * max(abs(y[i]), abs(ynew[i]))
        a5 = 0.0
        a3 = 0.0
        for j in range(K.shape[0]):
            a5 += K[j, i] * E5[j]
            a3 += K[j, i] * E3[j]
        e5 += (a5 / sc) ** 2
        e3 += (a3 / sc) ** 2
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    den = e5 + 0.01 * e3
    return abs(h) * e5 / math.sqrt(den * n)


@njit
def dop853_run(y0, t0, t_end, h0, rtol, atol, chart, skind, sp, fkind, fp, s, orient,
               out_dt, out_origin, rho_target, max_samples, A, B, C, E3, E5):
    """Integrate from t0 toward t_end (either direction).

    Returns (ts, ys, n, status, nsteps, nrej, h_last). Status: 0 reached
    t_end, 1 left the sphere chart, 2 step underflow, 3 sample buffer full,
    4 left the half-plane, 5 half-plane point needs renormalising.
    With ``rho_target > 0`` every accepted step is projected back onto the
    speed level |v|_g = rho_target (standard projection method).
    """
    n = y0.shape[0]
    ns = A.shape[0]
    direction = 1.0 if t_end >= t0 else -1.0
    ts = np.empty(max_samples)
    ys = np.empty((max_samples, n))
    ts[0] = t0
    for i in range(n):
        ys[0, i] = y0[i]
    count = 1
    if t_end == t0:
        return ts, ys, count, 0, 0, 0, h0
    y = y0.copy()
    t = t0
    K = np.empty((ns + 1, n))
    f0 = np.empty(n)
    rhs_full(y, chart, skind, sp, fkind, fp, s, orient, f0)
    h = abs(h0)
    if h == 0.0:
        h = min(abs(t_end - t0), 1e-2)
    nsteps = 0
    nrej = 0
    ystage = np.empty(n)
    ynew = np.empty(n)
    fnew = np.empty(n)
    kbuf = np.empty(n)
    next_out = t_end
    k = 0
    if out_dt > 0.0:
        # output grid out_origin + k * out_dt, continued across restarts
        k = math.floor((t0 - out_origin) * direction / out_dt + 1e-9) + 1
        next_out = out_origin + direction * k * out_dt
    status = 0
    while True:
        remaining = (t_end - t) * direction
        if remaining <= 0.0:
            break
        target = t_end
        if out_dt > 0.0 and (next_out - t) * direction < remaining - 1e-9 * out_dt:
            target = next_out
        to_target = (target - t) * direction
        if h < to_target and h < 1e-14 * max(1.0, abs(t)):
            status = 2
            break
        hs = min(h, to_target)
        for i in range(n):
            K[0, i] = f0[i]
        for st in range(1, ns):
            for i in range(n):
                acc = 0.0
                for j in range(st):
                    acc += A[st, j] * K[j, i]
                ystage[i] = y[i] + direction * hs * acc
            rhs_full(ystage, chart, skind, sp, fkind, fp, s, orient, kbuf)
            for i in range(n):
                K[st, i] = kbuf[i]
        for i in range(n):
            acc = 0.0
            for j in range(ns):
                acc += B[j] * K[j, i]
            ynew[i] = y[i] + direction * hs * acc
        rhs_full(ynew, chart, skind, sp, fkind, fp, s, orient, fnew)
        for i in range(n):
            K[ns, i] = fnew[i]
        # on the half-plane all displacements scale with y (dilation invariance)
        ascale = 1.0
        nfree = 0
        if skind == HALFPLANE:
            ascale = min(abs(y[1]), abs(ynew[1]))
            nfree = 1
        elif skind == FLAT_TORUS or skind == CONFORMAL_TORUS:
            nfree = 2
        err = _error_norm(K, hs, y, ynew, rtol, atol, E3, E5, ascale, nfree)
        if not np.isfinite(err):
            h = hs * 0.1
            nrej += 1
            continue
        if err < 1.0:
            landed = hs == to_target
            t = target if landed else t + direction * hs
            for i in range(n):
                y[i] = ynew[i]
                f0[i] = fnew[i]
            if rho_target > 0.0:
                lam = math.exp(log_lambda(skind, sp, y[0], y[1]))
                rho = lam * math.sqrt(y[2] * y[2] + y[3] * y[3])
                if rho > 0.0:
                    y[2] *= rho_target / rho
                    y[3] *= rho_target / rho
                    rhs_full(y, chart, skind, sp, fkind, fp, s, orient, f0)
            nsteps += 1
            if err == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, 0.9 * err ** (-1.0 / 8.0))
            if not landed or hs == h:
                h = hs * fac
            record = out_dt <= 0.0 or landed
            if record:
                if count >= max_samples:
                    status = 3
                    break
                ts[count] = t
                for i in range(n):
                    ys[count, i] = y[i]
                count += 1
                if out_dt > 0.0 and landed and target == next_out:
                    k += 1
                    next_out = out_origin + direction * k * out_dt
            if skind == SPHERE and y[0] * y[0] + y[1] * y[1] > SPHERE_SWITCH * SPHERE_SWITCH:
                if not record:
                    if count >= max_samples:
                        status = 3
                        break
                    ts[count] = t
                    for i in range(n):
                        ys[count, i] = y[i]
                    count += 1
                status = 1
                break
            if skind == HALFPLANE:
                if y[1] <= 0.0:
                    status = 4
                    break
                if y[1] < HALFPLANE_LO or y[1] > HALFPLANE_HI:
                    if not record:
                        if count >= max_samples:
                            status = 3
                            break
                        ts[count] = t
                        for i in range(n):
                            ys[count, i] = y[i]
                        count += 1
                    status = 5
                    break
        else:
            nrej += 1
            h = hs * max(0.2, 0.9 * err ** (-1.0 / 8.0))
    return ts, ys, count, status, nsteps, nrej, h


def run(y0, t0, t_end, h0, rtol, atol, chart, sysargs, out_dt, max_samples, out_origin=0.0,
        rho_target=0.0):
    skind, sp, fkind, fp, s, orient = sysargs
    return dop853_run(np.ascontiguousarray(y0, dtype=np.float64), float(t0), float(t_end),
                      float(h0), float(rtol), float(atol), int(chart), int(skind), sp,
                      int(fkind), fp, float(s), float(orient), float(out_dt), float(out_origin), float(rho_target), int(max_samples),
                      DOP_A, DOP_B, DOP_C, DOP_E3, DOP_E5)
