"""Second variation of the energy-Casimir functional and the identities around it.

Conventions follow ``perturbation``: D = w d_r + (L/r^3 - U0') d_w is the
steady transport operator, g = {f0, h} = exp(E0 - E) D h, and
U_g'(r) = m_g(r)/r^2 = -4 pi int w phi0'(E) h dv.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate

from .errors import OrthogonalityViolation, ParityViolation, SupportViolation
from .perturbation import bracket_with_f0, fd_grad, gradient, transport
from .phase import OrbitQuadrature, PhaseFunction, SupportQuadrature
from .steady_state import density_of_depth


@dataclass(frozen=True)
class CutoffRegion:
    """Omega = {E <= E0 - eps_E, L >= eps_L}."""

    eps_E: float
    eps_L: float

    def __post_init__(self):
        if not (self.eps_E > 0 and self.eps_L > 0):
            raise ValueError("cutoff margins must be positive")

    @classmethod
    def default(cls, model):
        return cls(0.05 * model.W0, 1e-2 * model.M * model.R)

    def E_top(self, model):
        return model.E0 - self.eps_E

    def orbit_rule(self, model, n_L=24, n_E=24, n_theta=32):
        return OrbitQuadrature(model, self.E_top(model), self.eps_L, n_L, n_E, n_theta)


def _values(fn, quad):
    if isinstance(fn, PhaseFunction):
        return fn.values
    return fn(quad.r, quad.w, quad.L)


def _probe_support(model, fn, n=4000, tol=1e-12):
    rng = np.random.default_rng(12345)
    r = rng.uniform(1e-3, 1.5, n) * model.R
    w = rng.uniform(-2.0, 2.0, n) * model.w_max
    L = rng.uniform(0.0, 1.5, n) * model.L_max
    E = model.energy(r, w, L)
    out = E > model.E0
    vals = np.abs(fn(r[out], w[out], L[out]))
    inner = np.abs(fn(r[~out], w[~out], L[~out]))
    ref = max(float(np.max(inner, initial=0.0)), 1e-300)
    if np.max(vals, initial=0.0) > tol * ref:
        raise SupportViolation("function is nonzero outside {E <= E0}")


@dataclass
class FormValue:
    kinetic: float
    field: float

    @property
    def value(self):
        return self.kinetic - self.field


def quadratic_form(model, g, quad=None, probe=True):
    """1/2 int g^2 / (-phi0'(E)) - (1/8 pi) ||grad U_g||^2."""
    quad = quad or SupportQuadrature(model)
    if probe and not isinstance(g, PhaseFunction):
        _probe_support(model, g)
    gv = _values(g, quad)
    E = quad.energy
    kin = 0.5 * quad.integrate(gv**2 * np.exp(E - model.E0))
    fld = quad.field_energy(quad.density(gv)) / (8.0 * math.pi)
    return FormValue(kin, fld)


def bracket_potential_derivative(model, h, quad=None):
    """U_g' for g = {f0, h} at the radial nodes: -4 pi int w phi0'(E) h dv."""
    quad = quad or SupportQuadrature(model)
    hv = _values(h, quad)
    integrand = quad.w * model.dphi0(quad.energy) * hv
    return quad.r_nodes, -4.0 * math.pi * quad.velocity_moment(integrand)


def field_energy_from_derivative(quad, Uprime):
    """||grad U||^2 = 4 pi int U'^2 r^2 dr (U' vanishes beyond the rule)."""
    return 4.0 * math.pi * float(np.sum(quad.dr * Uprime**2 * quad.r_nodes**2))


def check_odd(model, h, n=2000, tol=1e-12):
    rng = np.random.default_rng(777)
    r = rng.uniform(0.01, 1.0, n) * model.R
    w = rng.uniform(-1.0, 1.0, n) * model.w_max
    L = rng.uniform(0.0, 1.0, n) * model.L_max
    a = h(r, w, L)
    b = h(r, -w, L)
    scale = max(float(np.max(np.abs(a))), 1e-300)
    if np.max(np.abs(a + b)) > tol * scale:
        raise ParityViolation("h is not odd in w")


def _mu_and_transport(model, h, r, w, L):
    if hasattr(h, "mu") and hasattr(h, "mu_transport"):
        return h.mu(r, w, L), h.mu_transport(r, w, L)
    # generic h: mu = h/(r w) and D mu = (D h - mu D(r w)) / (r w); no node has w = 0
    hv = h(r, w, L)
    mu = hv / (r * w)
    lift = w**2 + L / r**2 - r * model.force_at(r)
    return mu, (transport(model, h, r, w, L) - mu * lift) / (r * w)


@dataclass
class AntonovCheck:
    lhs: float
    rhs: float
    kinetic: float
    field: float
    scale: float
    tol: float

    @property
    def margin(self):
        return self.lhs - self.rhs

    @property
    def passed(self):
        return self.margin >= -self.tol * self.scale

    def as_dict(self):
        return dict(lhs=self.lhs, rhs=self.rhs, margin=self.margin, kinetic=self.kinetic,
                    field=self.field, scale=self.scale, tolerance=self.tol * self.scale,
                    passed=bool(self.passed))


def antonov_bound_check(model, h, quad=None, tol=1e-4):
    """Compare D^2 H_C[{f0, h}] with
    -1/2 int phi0'(E) [(r w)^2 (D mu)^2 + (U0'/r) h^2],  mu = h/(r w)."""
    check_odd(model, h)
    if quad is None:
        quad = SupportQuadrature(model, getattr(h, "E_cut", None))
    form = quadratic_form(model, bracket_with_f0(model, h), quad, probe=False)
    r, w, L = quad.r, quad.w, quad.L
    E = quad.energy
    mu, dmu = _mu_and_transport(model, h, r, w, L)
    hv = r * w * mu
    weight = np.exp(E - model.E0)
    rhs = 0.5 * quad.integrate(weight * ((r * w * dmu) ** 2 + model.force_at(r) / r * hv**2))
    scale = max(abs(form.kinetic), abs(form.field), abs(rhs), 1e-300)
    return AntonovCheck(form.value, rhs, form.kinetic, form.field, scale, tol)


# ---------------------------------------------------------------------------
# velocity-space identities
# ---------------------------------------------------------------------------

def second_moment_density(model, r, epsabs=0.0, epsrel=1e-12):
    """-int w^2 phi0'(E) dv at radius r by 2D quadrature in (w, L), dv = (pi/r^2) dw dL."""
    psi = float(model.E0 - model.potential_at(r))
    if psi <= 0:
        return 0.0
    wmax = math.sqrt(2.0 * psi)

    def inner(L, w):
        return w * w * math.exp(psi - 0.5 * w * w - 0.5 * L / r**2)

    val, _ = integrate.dblquad(inner, -wmax, wmax, 0.0, lambda w: r * r * (2.0 * psi - w * w),
                               epsabs=epsabs, epsrel=epsrel)
    return math.pi / r**2 * val


def appendix_identity(model, radii):
    """Rows (r, lhs, rhs, relative error) of -int w^2 phi0'(E) dv = rho0(r)."""
    rows = []
    for r in radii:
        lhs = second_moment_density(model, r)
        rhs = float(density_of_depth(model.E0 - model.potential_at(r)))
        rows.append((float(r), lhs, rhs, abs(lhs - rhs) / abs(rhs)))
    return rows


def bracket_decomposition_check(model, n=1000, rng=None):
    """Max relative deviation of {E, {E, r w}} (nested numeric brackets) from
    -r w (4 pi rho0 + U0'/r) at random interior points."""
    rng = rng or np.random.default_rng(2024)
    r = rng.uniform(0.05, 0.95, n) * model.R
    w = rng.uniform(-1.0, 1.0, n) * model.w_max
    L = rng.uniform(0.0, 1.0, n) * model.L_max

    def energy_grad(a, b, c):
        return model.force_at(a) - c / a**3, b

    def inner(a, b, c):
        er, ew = energy_grad(a, b, c)
        # d_r (r w) = w, d_w (r w) = r
        return er * a - ew * b

    ir, iw = fd_grad(inner, r, w, L, step=1e-3)
    er, ew = energy_grad(r, w, L)
    nested = er * iw - ew * ir
    expect = -r * w * (4.0 * math.pi * model.density_at(r) + model.force_at(r) / r)
    rel = np.abs(nested - expect) / np.maximum(np.abs(expect), 1e-300)
    return float(np.max(rel)), nested, expect


# ---------------------------------------------------------------------------
# reconstruction of h from g = {f0, h}
# ---------------------------------------------------------------------------

@dataclass
class Reconstruction:
    oq: OrbitQuadrature
    h_plus: np.ndarray  # values on the w > 0 branch; h is odd in w
    g_plus: np.ndarray
    orthogonality: np.ndarray  # full-orbit integrals of g / w
    scale: float

    def h(self):
        return self.h_plus

    def norm(self):
        return math.sqrt(self.oq.integrate(self.h_plus**2))


def reconstruct_h(model, g, cutoff=None, oq=None, tol=1e-6):
    """Solve D h = exp(E - E0) g on whole orbits in Omega with h = 0 at pericentre.

    ``g`` is an even-in-w callable. Raises OrthogonalityViolation when some
    full-orbit integral of g/w is not zero to ``tol`` relative to
    sup|g| times the orbit's radial time.
    """
    if oq is None:
        cutoff = cutoff or CutoffRegion.default(model)
        oq = cutoff.orbit_rule(model)
    gp = g(oq.r, oq.speed, oq.L)
    full = oq.full_orbit(gp)
    times = oq.full_orbit(np.ones(oq.shape))
    gmax = max(float(np.max(np.abs(gp))), 1e-300)
    resid = np.abs(full) / (gmax * times)
    if np.max(resid) > tol:
        raise OrthogonalityViolation(
            f"full-orbit integral of g reaches {np.max(resid):.3e} (relative), "
            f"above {tol:g}: g is not a bracket with f0")
    cum = oq.cumulative(gp)
    h_plus = np.exp(oq.E - model.E0) * cum
    return Reconstruction(oq, h_plus, gp, full, gmax)


def reconstruction_error(rec, h_star):
    """Relative L2(Omega) error of the reconstruction against a known h*."""
    oq = rec.oq
    ref = h_star(oq.r, oq.speed, oq.L)
    num = oq.integrate((rec.h_plus - ref) ** 2)
    den = oq.integrate(ref**2)
    return math.sqrt(num / den)


def weak_identity_check(model, rec, psi):
    """int {f0, psi} h 1_Omega = -int g 1_Omega psi; returns (lhs, rhs, residual).

    The residual is |lhs - rhs| / (||h||_2 ||psi||_C1) over Omega.
    """
    oq = rec.oq
    lhs_parts = []
    rhs_parts = []
    c1 = 0.0
    for sign in (1.0, -1.0):
        w = sign * oq.speed
        pv = psi(oq.r, w, oq.L)
        pr, pw = gradient(psi, oq.r, w, oq.L)
        dpsi = w * pr + (oq.L / oq.r**3 - model.force_at(oq.r)) * pw
        bracket = np.exp(model.E0 - oq.E) * dpsi
        lhs_parts.append(bracket * sign * rec.h_plus)
        rhs_parts.append(-rec.g_plus * pv)
        c1 = max(c1, float(np.max(np.abs(pv) + np.abs(pr) + np.abs(pw))))
    lhs = oq.integrate(lhs_parts[0], lhs_parts[1])
    rhs = oq.integrate(rhs_parts[0], rhs_parts[1])
    denom = max(rec.norm() * c1, 1e-300)
    return lhs, rhs, abs(lhs - rhs) / denom
