"""Quadrature on reduced phase space (r, w, L).

With r = |x|, w = x.v/r and L = |x cross v|^2 the six-dimensional measure
reduces to ``dx dv = 4 pi^2 dr dw dL`` over w in R, and the velocity measure
at fixed x to ``dv = (pi / r^2) dw dL``.

Two tensor-product rules are provided:

``SupportQuadrature``
    Gauss nodes in (tau, s, c) filling ``{E <= E_top}``: r = r_top (1 - tau^2),
    |v| = s vmax(r), c = w/|v|. Every integrand that is smooth on the closed
    energy ball is integrated at spectral rate, which lets identities be
    checked far below the tolerances of a uniform grid.

``OrbitQuadrature``
    Nodes in (L, E, theta) over ``{Psi_min(L) <= E <= E_top, L_lo <= L <= L_hi}``
    laid out along whole orbits, so cumulative integrals along an orbit are
    available for reconstructing functions from their derivative along the
    steady flow.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .orbits import max_L_below

_GAUSS01 = {}
_CUMUL = {}


def gauss01(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if n not in _GAUSS01:
        x, w = np.polynomial.legendre.leggauss(n)
        _GAUSS01[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS01[n]


def cumulative_matrix(n):
    """Matrix C with (C @ f)_i = int_0^{x_i} f for f sampled at ``gauss01(n)`` nodes.

    Exact for polynomials of degree < n (interpolate, then integrate).
    """
    if n not in _CUMUL:
        xi, wi = np.polynomial.legendre.leggauss(n)
        V = np.polynomial.legendre.legvander(xi, n - 1)
        # coefficients from samples by the discrete Legendre transform
        k = np.arange(n)
        T = (V * wi[:, None]).T * ((2 * k + 1) / 2.0)[:, None]
        # antiderivative of each P_k vanishing at -1, evaluated at the nodes
        A = np.empty((n, n))
        for j in range(n):
            c = np.zeros(n)
            c[j] = 1.0
            A[:, j] = np.polynomial.legendre.legval(xi, np.polynomial.legendre.legint(c, lbnd=-1))
        _CUMUL[n] = 0.5 * A @ T
    return _CUMUL[n]


def radius_at_potential(profile, U_target):
    """Radius where the (increasing) potential equals ``U_target`` inside the support."""
    if U_target >= profile.potential_at(profile.R):
        return float(profile.R)
    if U_target <= profile.U_center:
        raise ValueError("target potential below the central value")
    return brentq(lambda x: profile.potential_at(x) - U_target, 0.0, profile.R, xtol=1e-15,
                  rtol=1e-15)


class SupportQuadrature:
    """Spectral rule on the energy ball ``{E <= E_top}`` of a King model."""

    def __init__(self, model, E_top=None, n_r=64, n_s=32, n_c=32):
        if n_c % 2:
            raise ValueError("n_c must be even so that no node sits on w = 0")
        self.model = model
        self.E_top = float(model.E0 if E_top is None else min(E_top, model.E0))
        self.r_top = radius_at_potential(model, self.E_top)
        self.shape = (n_r, n_s, n_c)
        tau, wt = gauss01(n_r)
        s, ws = gauss01(n_s)
        c, wc = np.polynomial.legendre.leggauss(n_c)
        self.tau = tau
        self.tau_weights = wt
        r = self.r_top * (1.0 - tau**2)
        self.dr = 2.0 * self.r_top * tau * wt
        U = model.potential_at(r)
        self.vmax = np.sqrt(2.0 * np.maximum(self.E_top - U, 0.0))
        self.r_nodes = r
        v = s[None, :] * self.vmax[:, None]
        self.r = np.broadcast_to(r[:, None, None], self.shape).copy()
        self.w = v[:, :, None] * c[None, None, :]
        self.L = (r[:, None, None] ** 2) * (v[:, :, None] ** 2) * (1.0 - c[None, None, :] ** 2)
        # velocity-space weights at fixed r: dv = 2 pi v^2 dv dc
        self.velocity_weights = (2.0 * math.pi * v[:, :, None] ** 2 * self.vmax[:, None, None]
                                 * ws[None, :, None] * wc[None, None, :])
        self.weights = 4.0 * math.pi * (r**2 * self.dr)[:, None, None] * self.velocity_weights
        self._U = U
        self._m0 = model.mass_at(r)

    @property
    def energy(self):
        return 0.5 * self.w**2 + 0.5 * self.L / self.r**2 + self._U[:, None, None]

    def integrate(self, values):
        return float(np.sum(self.weights * values))

    def density(self, values):
        """Spatial density int f dv at each radial node."""
        return np.sum(self.velocity_weights * values, axis=(1, 2))

    def velocity_moment(self, values):
        """int F dv at each radial node (alias of ``density`` for arbitrary integrands)."""
        return self.density(values)

    def enclosed_mass(self, rho):
        """m(r_i) = int_0^{r_i} 4 pi s^2 rho(s) ds at the radial nodes."""
        n = self.tau.size
        integrand = 4.0 * math.pi * self.r_nodes**2 * rho * 2.0 * self.r_top * self.tau
        cum = cumulative_matrix(n) @ integrand
        # tau runs from the edge (0) to the centre (1)
        return float(np.sum(integrand * self.tau_weights)) - cum

    def field_energy(self, rho):
        """||grad U||^2 = 4 pi int m^2 / r^2 dr for the field of density ``rho`` (zero outside)."""
        m = self.enclosed_mass(rho)
        total = float(np.sum(self.dr * m**2 / self.r_nodes**2))
        m_top = float(np.sum(4.0 * math.pi * self.r_nodes**2 * rho * self.dr))
        return 4.0 * math.pi * (total + m_top**2 / self.r_top)

    def field_difference_energy(self, rho):
        """||grad U_f - grad U_0||^2 with U_f generated by ``rho``; U_0 is the model field."""
        m = self.enclosed_mass(rho)
        inner = float(np.sum(self.dr * (m - self._m0) ** 2 / self.r_nodes**2))
        m_top = float(np.sum(4.0 * math.pi * self.r_nodes**2 * rho * self.dr))
        tail = 0.0
        if self.r_top < self.model.R:
            # beyond r_top the density of f is zero but m0 still grows
            tail = _outer_field_diff(self.model, self.r_top, m_top)
        else:
            tail = (m_top - self.model.M) ** 2 / self.model.R
        return 4.0 * math.pi * (inner + tail)

    def mirror(self, values):
        """values at (r, -w, L): the c grid is symmetric."""
        return values[:, :, ::-1]


def _outer_field_diff(model, a, m_const, n=64):
    x, w = gauss01(n)
    r = a + (model.R - a) * x
    inner = float(np.sum(w * (m_const - model.mass_at(r)) ** 2 / r**2)) * (model.R - a)
    return inner + (m_const - model.M) ** 2 / model.R


@dataclass
class PhaseFunction:
    """Values of a scalar field on the nodes of a quadrature rule.

    ``evaluator`` optionally gives the closed form F(r, w, L) the values came from.
    """

    quad: object
    values: np.ndarray
    evaluator: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.quad.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.quad.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("phase function values must be finite")

    @classmethod
    def sample(cls, quad, fn):
        return cls(quad, fn(quad.r, quad.w, quad.L), fn)

    def integrate(self):
        return self.quad.integrate(self.values)


class OrbitQuadrature:
    """Rule over whole orbits of the steady field in ``{E <= E_top, L >= L_lo}``.

    Node arrays have shape ``(n_L, n_E, 2, n_theta)``; axis 2 separates the
    inner half (pericentre to r_L) from the outer half (r_L to apocentre).
    Integrals over phase space include both signs of w with the returned
    ``weights`` (the w > 0 branch carries half).
    """

    def __init__(self, model, E_top, L_lo, n_L=24, n_E=24, n_theta=32, L_hi=None):
        self.model = model
        self.E_top = float(E_top)
        self.L_lo = float(L_lo)
        self.L_hi = float(max_L_below(model, E_top) if L_hi is None else L_hi)
        if not self.L_hi > self.L_lo:
            raise ValueError("empty orbit region: L_lo exceeds the largest admissible L")
        self.shape = (n_L, n_E, 2, n_theta)
        xl, wl = gauss01(n_L)
        Ls = self.L_lo + (self.L_hi - self.L_lo) * xl
        wL = (self.L_hi - self.L_lo) * wl
        rl, pmin, _, _ = _kernels.orbit_roots(np.full(n_L, -1.0), Ls, model.tables)
        xe, we = gauss01(n_E)
        E = pmin[:, None] + xe[None, :] * (self.E_top - pmin[:, None])
        wE = we[None, :] * (self.E_top - pmin[:, None])
        LL = np.broadcast_to(Ls[:, None], E.shape)
        RL = np.broadcast_to(rl[:, None], E.shape)
        _, _, rm, rp = _kernels.orbit_roots(E.ravel(), LL.ravel(), model.tables)
        rm = rm.reshape(E.shape)
        rp = rp.reshape(E.shape)
        th, wth = gauss01(n_theta)
        th = 0.5 * math.pi * th
        wth = 0.5 * math.pi * wth
        self.theta = th
        self.theta_weights = wth
        delta = np.stack([RL - rm, rp - RL], axis=-1)  # (n_L, n_E, 2)
        sign = np.array([-1.0, 1.0])
        r = RL[..., None, None] + sign[None, None, :, None] * delta[..., None] * np.sin(th)
        Lb = np.broadcast_to(LL[..., None, None], r.shape)
        Eb = np.broadcast_to(E[..., None, None], r.shape)
        gap = Eb - model.potential_at(r) - 0.5 * Lb / r**2
        speed = np.sqrt(2.0 * np.maximum(gap, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            jac = delta[..., None] * np.cos(th) / speed
        jac = np.where(np.isfinite(jac), jac, 0.0)
        self.r = r
        self.speed = speed
        self.L = np.ascontiguousarray(Lb)
        self.E = np.ascontiguousarray(Eb)
        self.r_L = RL
        self.psi_min = np.broadcast_to(pmin[:, None], E.shape)
        self.r_minus = rm
        self.r_plus = rp
        # d(orbit coordinate)/w per node, times theta weight
        self.line_weights = jac * wth
        self.orbit_weights = wL[:, None] * wE  # (n_L, n_E)
        self.weights = 4.0 * math.pi**2 * self.orbit_weights[..., None, None] * self.line_weights

    def integrate(self, plus, minus=None):
        """Phase-space integral of a function with values ``plus`` at w > 0 and ``minus`` at w < 0."""
        if minus is None:
            minus = plus
        return float(np.sum(self.weights * (plus + minus)))

    def full_orbit(self, values):
        """int_{r-}^{r+} F ds / w along each orbit, shape (n_L, n_E)."""
        return np.sum(self.line_weights * values, axis=(-2, -1))

    def cumulative(self, values):
        """int_{r-}^{r} F ds / w at every node along the orbit (w > 0 branch)."""
        n = self.theta.size
        C = cumulative_matrix(n) * (0.5 * math.pi)
        f = values * self.line_weights / self.theta_weights  # integrand in theta
        inner = f[..., 0, :]
        outer = f[..., 1, :]
        inner_total = inner @ self.theta_weights
        # inner half runs from theta = pi/2 (pericentre) down to 0
        inner_cum = inner_total[..., None] - inner @ C.T
        outer_cum = inner_total[..., None] + outer @ C.T
        return np.stack([inner_cum, outer_cum], axis=-2)
