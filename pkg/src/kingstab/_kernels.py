"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``KINGSTAB_DISABLE_NUMBA=1`` in the environment to force the numpy
implementations (useful for debugging and for benchmarking the two paths
against each other). Both paths must agree to rounding; the test suite
checks this.

Profile tables are passed as the tuple ``(h, U, dU, m, dm, R, M)``: values
and exact derivatives of the potential and enclosed mass on the uniform
grid ``r_i = i*h`` covering ``[0, R]``. Beyond ``R`` the exterior Kepler
branch ``U = -M/r``, ``m = M`` is used. ``R = 0`` turns every profile into
a point-mass field, which is how the Kepler test stub is represented.
"""

import math
import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("KINGSTAB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

_SQRT2 = math.sqrt(2.0)
_DEPTH_PREFACTOR = 4.0 * math.pi * _SQRT2

# 3-point Gauss-Legendre on [0, 1]
_G3_X = np.array([0.5 - 0.5 * math.sqrt(0.6), 0.5, 0.5 + 0.5 * math.sqrt(0.6)])
_G3_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
_G8_X, _G8_W = np.polynomial.legendre.leggauss(8)
_G8_X = 0.5 * (_G8_X + 1.0)
_G8_W = 0.5 * _G8_W


def _jit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


# ---------------------------------------------------------------------------
# density of depth
# ---------------------------------------------------------------------------

def _depth_series_scalar(psi):
    # sum_{k>=0} psi^(k+3/2) Gamma(3/2)/Gamma(k+5/2); returns (full, full - k0 term)
    if psi <= 0.0:
        return 0.0, 0.0
    t = psi * math.sqrt(psi) * (2.0 / 3.0)
    t0 = t
    total = t
    k = 0
    while True:
        t = t * psi / (k + 2.5)
        total += t
        k += 1
        if t < 1e-17 * total or k > 2000:
            break
    return total, total - t0


_depth_series_nb = _jit(_depth_series_scalar)


def _depth_density_loop(psi, out_rho, out_drho):
    for i in range(psi.shape[0]):
        full, tail = _depth_series_nb(psi[i])
        out_rho[i] = _DEPTH_PREFACTOR * tail
        out_drho[i] = _DEPTH_PREFACTOR * full


_depth_density_loop_nb = _jit(_depth_density_loop)


def _depth_density_np(psi):
    psi = np.asarray(psi, dtype=float)
    p = np.where(psi > 0.0, psi, 0.0)
    t = p * np.sqrt(p) * (2.0 / 3.0)
    t0 = t.copy()
    total = t.copy()
    k = 0
    while True:
        t = t * p / (k + 2.5)
        total += t
        k += 1
        if np.all(t <= 1e-17 * total) or k > 2000:
            break
    return _DEPTH_PREFACTOR * (total - t0), _DEPTH_PREFACTOR * total


def depth_density(psi):
    """Return (rho, drho/dpsi) for an array of depths psi = E0 - U."""
    psi = np.ascontiguousarray(psi, dtype=float)
    if USE_NUMBA:
        flat = psi.ravel()
        rho = np.empty_like(flat)
        drho = np.empty_like(flat)
        _depth_density_loop_nb(flat, rho, drho)
        return rho.reshape(psi.shape), drho.reshape(psi.shape)
    return _depth_density_np(psi)


# ---------------------------------------------------------------------------
# profile interpolation (cubic Hermite with exact nodal slopes)
# ---------------------------------------------------------------------------

def _profile_scalar(r, h, U, dU, m, dm, R, M):
    # returns U(r), m(r), dm/dr(r)
    if r >= R:
        return -M / r, M, 0.0
    n = U.shape[0]
    x = r / h
    i = int(x)
    if i > n - 2:
        i = n - 2
    t = x - i
    t2 = t * t
    t3 = t2 * t
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + t
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    u = h00 * U[i] + h10 * h * dU[i] + h01 * U[i + 1] + h11 * h * dU[i + 1]
    mm = h00 * m[i] + h10 * h * dm[i] + h01 * m[i + 1] + h11 * h * dm[i + 1]
    g00 = (6.0 * t2 - 6.0 * t) / h
    g10 = 3.0 * t2 - 4.0 * t + 1.0
    g11 = 3.0 * t2 - 2.0 * t
    dmm = g00 * (m[i] - m[i + 1]) + g10 * dm[i] + g11 * dm[i + 1]
    return u, mm, dmm


_profile_nb = _jit(_profile_scalar)


def _profile_loop(r, h, U, dU, m, dm, R, M, outU, outm, outdm):
    for k in range(r.shape[0]):
        a, b, c = _profile_nb(r[k], h, U, dU, m, dm, R, M)
        outU[k] = a
        outm[k] = b
        outdm[k] = c


_profile_loop_nb = _jit(_profile_loop)


def _profile_np(r, h, U, dU, m, dm, R, M):
    r = np.asarray(r, dtype=float)
    outside = r >= R
    n = U.shape[0]
    if n < 2:
        with np.errstate(divide="ignore"):
            return -M / r, np.full_like(r, M), np.zeros_like(r)
    x = np.where(outside, 0.0, r / h)
    i = np.minimum(x.astype(np.int64), n - 2)
    t = x - i
    t2 = t * t
    t3 = t2 * t
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + t
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    u = h00 * U[i] + h10 * h * dU[i] + h01 * U[i + 1] + h11 * h * dU[i + 1]
    mm = h00 * m[i] + h10 * h * dm[i] + h01 * m[i + 1] + h11 * h * dm[i + 1]
    g00 = (6.0 * t2 - 6.0 * t) / h
    g10 = 3.0 * t2 - 4.0 * t + 1.0
    g11 = 3.0 * t2 - 2.0 * t
    dmm = g00 * (m[i] - m[i + 1]) + g10 * dm[i] + g11 * dm[i + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(outside, -M / np.where(outside, r, 1.0), u)
    mm = np.where(outside, M, mm)
    dmm = np.where(outside, 0.0, dmm)
    return u, mm, dmm


def profile_eval(r, tables):
    """Evaluate U(r), m(r), m'(r) for an array of radii."""
    r = np.ascontiguousarray(r, dtype=float)
    if USE_NUMBA:
        flat = r.ravel()
        a = np.empty_like(flat)
        b = np.empty_like(flat)
        c = np.empty_like(flat)
        _profile_loop_nb(flat, *tables, a, b, c)
        return a.reshape(r.shape), b.reshape(r.shape), c.reshape(r.shape)
    return _profile_np(r, *tables)


# ---------------------------------------------------------------------------
# effective potential roots
# ---------------------------------------------------------------------------

def _rl_scalar(L, h, U, dU, m, dm, R, M):
    # root of m(r) - L/r = 0 (strictly increasing)
    lo = 0.5 * L / M
    hi = L / M
    for _ in range(200):
        _, mm, _ = _profile_nb(hi, h, U, dU, m, dm, R, M)
        if mm - L / hi >= 0.0:
            break
        lo = hi
        hi = 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(200):
        _, mm, dmm = _profile_nb(x, h, U, dU, m, dm, R, M)
        F = mm - L / x
        if F == 0.0:
            return x
        if F < 0.0:
            lo = x
        else:
            hi = x
        dF = dmm + L / (x * x)
        xn = x - F / dF
        if not (xn > lo and xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-15 * x or hi - lo <= 2e-16 * hi:
            return xn
        x = xn
    return x


_rl_nb = _jit(_rl_scalar)


def _psi_scalar(r, L, h, U, dU, m, dm, R, M):
    u, mm, _ = _profile_nb(r, h, U, dU, m, dm, R, M)
    return u + 0.5 * L / (r * r), (mm - L / r) / (r * r)


_psi_nb = _jit(_psi_scalar)


def _turn_scalar(E, L, a, b, h, U, dU, m, dm, R, M):
    # root of Psi_L(r) - E on [a, b]; sign of Psi - E differs at the ends
    fa, _ = _psi_nb(a, L, h, U, dU, m, dm, R, M)
    sa = fa - E
    lo = a
    hi = b
    x = 0.5 * (lo + hi)
    for _ in range(300):
        p, dp = _psi_nb(x, L, h, U, dU, m, dm, R, M)
        F = p - E
        if F == 0.0:
            return x
        if (F > 0.0) == (sa > 0.0):
            lo = x
        else:
            hi = x
        xn = x - F / dp if dp != 0.0 else 0.5 * (lo + hi)
        a1 = min(lo, hi)
        b1 = max(lo, hi)
        if not (xn > a1 and xn < b1):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-15 * x or abs(hi - lo) <= 2e-16 * max(abs(hi), abs(lo)):
            return xn
        x = xn
    return x


_turn_nb = _jit(_turn_scalar)


def _orbit_loop(E, L, h, U, dU, m, dm, R, M, out_rl, out_pmin, out_rm, out_rp):
    for k in range(E.shape[0]):
        Lk = L[k]
        rl = _rl_nb(Lk, h, U, dU, m, dm, R, M)
        pmin, _ = _psi_nb(rl, Lk, h, U, dU, m, dm, R, M)
        out_rl[k] = rl
        out_pmin[k] = pmin
        Ek = E[k]
        if not (Ek > pmin and Ek < 0.0):
            out_rm[k] = np.nan
            out_rp[k] = np.nan
            continue
        lo = 0.999 * Lk / (2.0 * M)
        hi = M / (-Ek)
        out_rm[k] = _turn_nb(Ek, Lk, lo, rl, h, U, dU, m, dm, R, M)
        out_rp[k] = _turn_nb(Ek, Lk, rl, hi, h, U, dU, m, dm, R, M)


_orbit_loop_nb = _jit(_orbit_loop)


def _bisect_np(fun, lo, hi, sign_lo, iters=110):
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        same = (fm > 0.0) == sign_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def _orbit_np(E, L, h, U, dU, m, dm, R, M):
    tables = (h, U, dU, m, dm, R, M)
    E = np.asarray(E, dtype=float)
    L = np.asarray(L, dtype=float)
    lo = 0.5 * L / M
    hi = L / M
    for _ in range(200):
        _, mm, _ = _profile_np(hi, *tables)
        neg = mm - L / hi < 0.0
        if not np.any(neg):
            break
        lo = np.where(neg, hi, lo)
        hi = np.where(neg, 2.0 * hi, hi)

    def frl(x):
        return _profile_np(x, *tables)[1] - L / x

    rl = _bisect_np(frl, lo, hi, False, iters=80)
    # polish with two Newton steps
    for _ in range(2):
        _, mm, dmm = _profile_np(rl, *tables)
        rl = rl - (mm - L / rl) / (dmm + L / rl**2)
    pmin = _profile_np(rl, *tables)[0] + 0.5 * L / rl**2
    ok = (E > pmin) & (E < 0.0)
    Es = np.where(ok, E, np.where(pmin < 0, 0.5 * pmin, -1.0))

    def fpsi(x):
        return _profile_np(x, *tables)[0] + 0.5 * L / x**2 - Es

    a = 0.999 * L / (2.0 * M)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = M / (-Es)
        rm = _bisect_np(fpsi, a, rl, True)
        rp = _bisect_np(fpsi, rl, b, False)
    rm = np.where(ok, rm, np.nan)
    rp = np.where(ok, rp, np.nan)
    return rl, pmin, rm, rp


def orbit_roots(E, L, tables):
    """Vectorized (r_L, Psi_L(r_L), r_minus, r_plus); NaN turning points where no orbit."""
    E, L = np.broadcast_arrays(np.asarray(E, dtype=float), np.asarray(L, dtype=float))
    shape = E.shape
    E = np.ascontiguousarray(E).ravel()
    L = np.ascontiguousarray(L).ravel()
    if USE_NUMBA:
        out = [np.empty_like(E) for _ in range(4)]
        _orbit_loop_nb(E, L, *tables, *out)
    else:
        out = _orbit_np(E, L, *tables)
    return tuple(o.reshape(shape) for o in out)


# ---------------------------------------------------------------------------
# particle pushing
# ---------------------------------------------------------------------------

def _drift_loop(r, w, L, dt):
    # exact free flight in 3D, written in (r, w, L)
    for k in range(r.shape[0]):
        rk = r[k]
        wk = w[k]
        x = rk + wk * dt
        rn2 = x * x + L[k] * dt * dt / (rk * rk)
        rn = math.sqrt(rn2)
        v2 = wk * wk + L[k] / (rk * rk)
        if rn > 0.0:
            w[k] = (rk * wk + v2 * dt) / rn
        else:
            w[k] = abs(wk)
        r[k] = rn


_drift_nb = _jit(_drift_loop)


def _drift_np(r, w, L, dt):
    x = r + w * dt
    cent = L / (r * r)
    rn = np.sqrt(x * x + cent * dt * dt)
    v2 = w * w + cent
    with np.errstate(divide="ignore", invalid="ignore"):
        wn = np.where(rn > 0.0, (r * w + v2 * dt) / rn, np.abs(w))
    r[:] = rn
    w[:] = wn


def drift(r, w, L, dt):
    """In-place free-flight drift of (r, w) over ``dt`` with L fixed."""
    if USE_NUMBA:
        _drift_nb(r, w, L, dt)
    else:
        _drift_np(r, w, L, dt)


def _shell_mass_loop(order, weight, out):
    # enclosed mass at each particle: strictly-inner mass plus half its own weight
    acc = 0.0
    for j in range(order.shape[0]):
        i = order[j]
        out[i] = acc + 0.5 * weight[i]
        acc += weight[i]


_shell_mass_nb = _jit(_shell_mass_loop)


def shell_mass(r, weight):
    """Return (order, enclosed mass per particle) from a radius sort."""
    order = np.argsort(r, kind="stable")
    if USE_NUMBA:
        out = np.empty_like(r)
        _shell_mass_nb(order, weight, out)
        return order, out
    ws = weight[order]
    cum = np.cumsum(ws) - 0.5 * ws
    out = np.empty_like(r)
    out[order] = cum
    return order, out


def _field_diff_loop(rs, cm, h, U, dU, m, dm, R, M, gx, gw, g8x, g8w):
    # 4*pi * int (m_f - m0)^2 / r^2 dr, m_f a step function jumping at rs
    total = 0.0
    prev = 0.0
    mcur = 0.0
    n = rs.shape[0]
    for k in range(n + 1):
        if k < n:
            b = rs[k]
        else:
            b = R if R > prev else prev
        a = prev
        if b > a:
            use8 = k == n
            npts = 8 if use8 else 3
            s = 0.0
            for q in range(npts):
                if use8:
                    x = a + (b - a) * g8x[q]
                    wq = g8w[q]
                else:
                    x = a + (b - a) * gx[q]
                    wq = gw[q]
                _, m0, _ = _profile_nb(x, h, U, dU, m, dm, R, M)
                d = mcur - m0
                s += wq * d * d / (x * x)
            total += s * (b - a)
        if k < n:
            mcur = cm[k]
            prev = b
        else:
            prev = b
    tail = prev if prev > R else R
    if tail > 0.0:
        total += (mcur - M) ** 2 / tail
    return 4.0 * math.pi * total


_field_diff_nb = _jit(_field_diff_loop)


def _field_diff_np(rs, cm, h, U, dU, m, dm, R, M):
    tables = (h, U, dU, m, dm, R, M)
    a = np.concatenate(([0.0], rs))
    b = np.concatenate((rs, [max(R, rs[-1])]))
    mc = np.concatenate(([0.0], cm))
    total = 0.0
    ln = b - a
    # 3-point rule everywhere except the last (possibly long) interval
    x = a[:-1, None] + ln[:-1, None] * _G3_X[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = _profile_np(x.ravel(), *tables)[1].reshape(x.shape)
        integrand = (mc[:-1, None] - m0) ** 2 / (x * x)
    integrand = np.where(ln[:-1, None] > 0, integrand, 0.0)
    total += float(np.sum((integrand * _G3_W[None, :]).sum(axis=1) * ln[:-1]))
    if ln[-1] > 0:
        x8 = a[-1] + ln[-1] * _G8_X
        m0 = _profile_np(x8, *tables)[1]
        total += float(np.sum(_G8_W * (mc[-1] - m0) ** 2 / x8**2) * ln[-1])
    tail = max(b[-1], R)
    if tail > 0.0:
        total += (mc[-1] - M) ** 2 / tail
    return 4.0 * math.pi * total


def field_diff_norm(rs, cm, tables):
    """||grad U_f - grad U_0||^2 for a step enclosed-mass profile.

    ``rs`` sorted radii, ``cm[k]`` the enclosed mass just outside ``rs[k]``.
    """
    rs = np.ascontiguousarray(rs, dtype=float)
    cm = np.ascontiguousarray(cm, dtype=float)
    if USE_NUMBA:
        return float(_field_diff_nb(rs, cm, *tables, _G3_X, _G3_W, _G8_X, _G8_W))
    return _field_diff_np(rs, cm, *tables)


# ---------------------------------------------------------------------------
# cloud-in-cell deposition on a uniform (r, w, L) node grid
# ---------------------------------------------------------------------------

def _cic_loop(r, w, L, q, r0, dr, w0, dw, l0, dl, out):
    nr, nw, nl = out.shape
    lost = 0.0
    for p in range(r.shape[0]):
        x = (r[p] - r0) / dr
        y = (w[p] - w0) / dw
        z = (L[p] - l0) / dl
        i = int(math.floor(x))
        j = int(math.floor(y))
        k = int(math.floor(z))
        if i < 0 or j < 0 or k < 0 or i > nr - 2 or j > nw - 2 or k > nl - 2:
            if x == nr - 1 or y == nw - 1 or z == nl - 1:
                i = min(i, nr - 2)
                j = min(j, nw - 2)
                k = min(k, nl - 2)
                if i < 0 or j < 0 or k < 0:
                    lost += q[p]
                    continue
            else:
                lost += q[p]
                continue
        fx = x - i
        fy = y - j
        fz = z - k
        for a in range(2):
            wa = fx if a == 1 else 1.0 - fx
            for b in range(2):
                wb = fy if b == 1 else 1.0 - fy
                for c in range(2):
                    wc = fz if c == 1 else 1.0 - fz
                    out[i + a, j + b, k + c] += q[p] * wa * wb * wc
    return lost


_cic_nb = _jit(_cic_loop)


def _cic_np(r, w, L, q, r0, dr, w0, dw, l0, dl, out):
    nr, nw, nl = out.shape
    x = (r - r0) / dr
    y = (w - w0) / dw
    z = (L - l0) / dl
    i = np.floor(x).astype(np.int64)
    j = np.floor(y).astype(np.int64)
    k = np.floor(z).astype(np.int64)
    i = np.where(x == nr - 1, nr - 2, i)
    j = np.where(y == nw - 1, nw - 2, j)
    k = np.where(z == nl - 1, nl - 2, k)
    inside = (i >= 0) & (j >= 0) & (k >= 0) & (i <= nr - 2) & (j <= nw - 2) & (k <= nl - 2)
    lost = float(np.sum(q[~inside]))
    i, j, k = i[inside], j[inside], k[inside]
    fx, fy, fz = x[inside] - i, y[inside] - j, z[inside] - k
    qq = q[inside]
    flat = out.reshape(-1)
    for a in (0, 1):
        wa = fx if a else 1.0 - fx
        for b in (0, 1):
            wb = fy if b else 1.0 - fy
            for c in (0, 1):
                wc = fz if c else 1.0 - fz
                idx = ((i + a) * nw + (j + b)) * nl + (k + c)
                flat += np.bincount(idx, weights=qq * wa * wb * wc, minlength=flat.size)
    return lost


def cic_deposit(r, w, L, q, origin, spacing, shape):
    """Deposit charges ``q`` trilinearly onto grid nodes; returns (grid, lost mass)."""
    out = np.zeros(shape)
    args = (np.ascontiguousarray(r, float), np.ascontiguousarray(w, float),
            np.ascontiguousarray(L, float), np.ascontiguousarray(q, float),
            float(origin[0]), float(spacing[0]), float(origin[1]), float(spacing[1]),
            float(origin[2]), float(spacing[2]), out)
    lost = _cic_nb(*args) if USE_NUMBA else _cic_np(*args)
    return out, float(lost)
