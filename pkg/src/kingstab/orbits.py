"""Effective potential Psi_L(r) = U0(r) + L/(2 r^2) and singular orbit integrals.

Orbit integrals of the form int F(r, w(r), L) dr / w(r), w = sqrt(2E - 2 Psi_L),
are split at the minimizer r_L and each half is mapped by
r = r_L -/+ Delta sin(theta). The map cancels the inverse-square-root
endpoint singularity, leaving a smooth integrand in theta that Gauss-Legendre
handles at spectral rate.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import _kernels
from .errors import BracketFailure, NoOrbit, QuadratureNonConvergence
from .tables import write_table

NEAR_CIRCULAR = 1e-10
# below this relative depth E - Psi_min the gap is integrated from Psi_L'
SHALLOW_WELL = 1e-4
ORBIT_COLUMNS = ("E", "L", "r_minus", "r_plus", "r_L", "time_integral")


@dataclass(frozen=True)
class OrbitRecord:
    E: float
    L: float
    r_minus: float
    r_plus: float
    r_L: float
    psi_min: float
    psi_second: float
    time_integral: float


class EffectivePotential:
    def __init__(self, profile, L):
        self.profile = profile
        self.L = float(L)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.profile.potential_at(r) + 0.5 * self.L / r**2

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return (self.profile.mass_at(r) - self.L / r) / r**2

    def second_derivative(self, r):
        r = np.asarray(r, dtype=float)
        m = self.profile.mass_at(r)
        return 4.0 * math.pi * self.profile.density_at(r) - 2.0 * m / r**3 + 3.0 * self.L / r**4


def find_r_L(profile, L):
    """Minimizer of Psi_L: returns (r_L, Psi_L(r_L), Psi_L''(r_L))."""
    if not L > 0:
        raise ValueError("L must be positive")
    rl, pmin, _, _ = _kernels.orbit_roots(np.array([-1.0]), np.array([float(L)]), profile.tables)
    rl = float(rl[0])
    if not np.isfinite(rl) or rl <= 0:
        raise BracketFailure(f"no minimizer found for L = {L:g}")
    second = 4.0 * math.pi * float(profile.density_at(rl)) + L / rl**4
    return rl, float(pmin[0]), second


def turning_points(profile, E, L):
    """Pericenter and apocenter radii where Psi_L(r) = E."""
    rl, pmin, rm, rp = _kernels.orbit_roots(np.array([float(E)]), np.array([float(L)]),
                                            profile.tables)
    if not (E > pmin[0] and E < 0.0):
        raise NoOrbit(f"E = {E:g} outside (Psi_min, 0) = ({pmin[0]:g}, 0) for L = {L:g}")
    return float(rm[0]), float(rp[0])


def _half_integral(profile, field, E, L, rl, delta, sign, th_lo, th_hi, n, shallow=False):
    """int over theta in [th_lo, th_hi] of F * Delta cos(theta) / w, r = rl + sign*Delta*sin(theta).

    For shallow wells E - Psi_L(r) is a difference of two nearly equal numbers,
    so it is replaced by the integral of Psi_L' from r to the turning point,
    which keeps full relative precision up to the endpoint.
    """
    x, wts = _leggauss(n)
    half = 0.5 * (th_hi - th_lo)
    th = th_lo + half * (x + 1.0)
    r = rl + sign * delta * np.sin(th)
    if shallow:
        # distance to the turning point, delta (1 - sin theta) written without cancellation
        u = 2.0 * delta * np.sin(0.5 * (0.5 * math.pi - th)) ** 2
        gx, gw = _leggauss(16)
        gx = 0.5 * (gx + 1.0)
        start = r if sign > 0 else r - u
        s_nodes = start[:, None] + u[:, None] * gx[None, :]
        slope = EffectivePotential(profile, L).derivative(s_nodes)
        gap = sign * u * (0.5 * slope @ gw)
    else:
        gap = E - profile.potential_at(r) - 0.5 * L / r**2
    gap = np.maximum(gap, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        jac = delta * np.cos(th) / np.sqrt(2.0 * gap)
    jac = np.where(np.isfinite(jac), jac, 0.0)
    vals = jac if field is None else jac * field(r, np.sqrt(2.0 * gap), np.full_like(r, L))
    return float(np.sum(wts * vals) * half)


_LEG_CACHE = {}


def _leggauss(n):
    if n not in _LEG_CACHE:
        _LEG_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _LEG_CACHE[n]


def _adaptive(fun, tol, n0=32, n_max=4096):
    n = n0
    prev = fun(n)
    while n < n_max:
        n *= 2
        cur = fun(n)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise QuadratureNonConvergence(f"orbit quadrature did not converge with {n_max} nodes")


def orbit(profile, E, L, tol=1e-9):
    rl, pmin, second = find_r_L(profile, L)
    rm, rp = turning_points(profile, E, L)
    t = radial_time_integral(profile, E, L, tol=tol)
    return OrbitRecord(E=float(E), L=float(L), r_minus=rm, r_plus=rp, r_L=rl,
                       psi_min=pmin, psi_second=second, time_integral=t)


def radial_time_integral(profile, E, L, tol=1e-9):
    """int_{r-}^{r+} dr / sqrt(2E - 2 Psi_L(r)): half the radial period."""
    return orbit_line_integral(profile, None, E, L, tol=tol)


def orbit_line_integral(profile, field, E, L, upper=None, tol=1e-9):
    """int_{r-}^{upper} F(s, w(s), L) ds / w(s) along the w > 0 branch.

    ``field`` is a vectorized callable F(r, w, L) or None for F = 1;
    ``upper`` defaults to r_plus.
    """
    E = float(E)
    L = float(L)
    if not L > 0:
        raise ValueError("orbit integrals need L > 0")
    rl, pmin, second = find_r_L(profile, L)
    if not (E > pmin and E < 0.0):
        raise NoOrbit(f"E = {E:g} outside (Psi_min, 0) for L = {L:g}")
    if E - pmin < NEAR_CIRCULAR:
        # harmonic limit of the well
        t = math.pi / math.sqrt(second)
        if field is None:
            val = 1.0
        else:
            val = float(np.asarray(field(np.array([rl]), np.array([0.0]), np.array([L])))[0])
        if upper is None:
            return t * val
        return t * val * (0.0 if upper <= rl else 1.0)
    rm, rp = turning_points(profile, E, L)
    if upper is None:
        upper = rp
    if not (rm <= upper <= rp):
        raise ValueError("upper must lie in [r_minus, r_plus]")
    dm = rl - rm
    dp = rp - rl
    shallow = E - pmin < SHALLOW_WELL * (abs(E) + abs(pmin))

    def evaluate(n):
        if upper <= rl:
            s = min(1.0, (rl - upper) / dm)
            return _half_integral(profile, field, E, L, rl, dm, -1.0, math.asin(s), 0.5 * math.pi,
                                  n, shallow)
        inner = _half_integral(profile, field, E, L, rl, dm, -1.0, 0.0, 0.5 * math.pi, n, shallow)
        s = min(1.0, (upper - rl) / dp)
        return inner + _half_integral(profile, field, E, L, rl, dp, 1.0, 0.0, math.asin(s), n,
                                      shallow)

    if shallow:
        return _adaptive(evaluate, tol)
    # residual rounding in E - Psi just above the shallow-well switch
    floor = 2e-12 * (abs(E) + abs(pmin)) / (E - pmin)
    return _adaptive(evaluate, max(tol, floor))


def orbit_grid(profile, E_cut, L_lo, n_E=20, n_L=20, L_hi=None):
    """(E, L) sample grid of the compact set {Psi_min(L) < E <= E_cut, L >= L_lo}."""
    if L_hi is None:
        L_hi = max_L_below(profile, E_cut)
    Ls = np.linspace(L_lo, L_hi * (1 - 1e-6), n_L)
    _, pmin, _, _ = _kernels.orbit_roots(np.full(n_L, -1.0), Ls, profile.tables)
    t = np.linspace(0.0, 1.0, n_E + 1)[1:]
    E = pmin[:, None] + t[None, :] * (E_cut - pmin[:, None])
    return E, np.broadcast_to(Ls[:, None], E.shape).copy()


def max_L_below(profile, E_cut):
    """Largest L with Psi_min(L) <= E_cut (bisection on the monotone map L -> Psi_min)."""
    def pmin(L):
        return _kernels.orbit_roots(np.array([-1.0]), np.array([L]), profile.tables)[1][0]

    lo, hi = 0.0, 1.0
    while pmin(hi) < E_cut:
        lo, hi = hi, 2 * hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if pmin(mid) < E_cut:
            lo = mid
        else:
            hi = mid
    return lo


def orbit_table(profile, E, L, tol=1e-9):
    """Rows (E, L, r_minus, r_plus, r_L, time_integral) for paired arrays E, L."""
    E = np.ravel(E)
    L = np.ravel(L)
    rl, pmin, rm, rp = _kernels.orbit_roots(E, L, profile.tables)
    t = np.array([radial_time_integral(profile, e, l, tol=tol) for e, l in zip(E, L)])
    return np.column_stack([E, L, rm, rp, rl, t])


def write_orbit_csv(path, table):
    write_table(path, ORBIT_COLUMNS, table)


def empirical_constants(profile, E_cut, L_lo, n=20, n_r=64):
    """Empirical (C_m, eta_m): sup of the radial time and inf of |Psi'|/sqrt(Psi - Psi_min)."""
    E, L = orbit_grid(profile, E_cut, L_lo, n, n)
    table = orbit_table(profile, E, L)
    c_m = float(np.max(table[:, 5]))
    eta = math.inf
    for e, l, rm, rp, rl in table[:, :5]:
        if not np.isfinite(rm):
            continue
        psi = EffectivePotential(profile, l)
        pmin = float(psi(rl))
        r = np.concatenate([np.linspace(rm, rl, n_r), np.linspace(rl, rp, n_r)])
        gap = psi(r) - pmin
        near = np.abs(r - rl) < 1e-3 * (rp - rm)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(psi.derivative(r)) / np.sqrt(gap)
        limit = math.sqrt(2.0 * float(psi.second_derivative(rl)))
        ratio = np.where(near | ~np.isfinite(ratio), limit, ratio)
        eta = min(eta, float(np.min(ratio)))
    return c_m, eta
