"""Brackets in reduced coordinates and dynamically accessible perturbations.

A perturbation is produced by transporting f0 with the Hamiltonian flow of a
generator H(r, w, L): dr/ds = dH/dw, dw/ds = -dH/dr, L frozen. The flow
preserves phase volume and carries f along, so every Casimir is conserved.

Sign convention: {a, b} = d_r a d_w b - d_w a d_r b. With the steady
transport operator D = w d_r + (L/r^3 - U0') d_w one has {E, h} = -D h and
{f0, h} = exp(E0 - E) D h inside the support.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import FlowBlowup
from .functionals import CASIMIR_BATTERY, ParticleEnsemble, casimir
from .phase import PhaseFunction


def fd_grad(fn, r, w, L, step=1e-4):
    """4th-order central differences of fn in r and w (relative step in r)."""
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    hr = step * np.maximum(r, 1e-3)
    hw = step * np.maximum(np.abs(w), 1e-1)

    def d(shift_r, shift_w, h):
        return (-fn(r + 2 * shift_r, w + 2 * shift_w, L) + 8 * fn(r + shift_r, w + shift_w, L)
                - 8 * fn(r - shift_r, w - shift_w, L) + fn(r - 2 * shift_r, w - 2 * shift_w, L)) / (12 * h)

    return d(hr, 0.0, hr), d(0.0, hw, hw)


def gradient(fn, r, w, L):
    if hasattr(fn, "grad"):
        return fn.grad(r, w, L)
    return fd_grad(fn, r, w, L)


def reduced_bracket(a, b):
    """Callable (r, w, L) -> d_r a d_w b - d_w a d_r b."""

    def bracket(r, w, L):
        ar, aw = gradient(a, r, w, L)
        br, bw = gradient(b, r, w, L)
        return ar * bw - aw * br

    return bracket


class ModelEnergy:
    """E(r, w, L) = w^2/2 + L/(2 r^2) + U0(r) with its gradient."""

    def __init__(self, model):
        self.model = model

    def __call__(self, r, w, L):
        return self.model.energy(r, w, L)

    def grad(self, r, w, L):
        r = np.asarray(r, dtype=float)
        return self.model.force_at(r) - L / r**3, np.asarray(w, dtype=float) + 0.0 * r


def transport(model, h, r, w, L):
    """D h = w d_r h + (L/r^3 - U0'(r)) d_w h."""
    if hasattr(h, "transport"):
        return h.transport(r, w, L)
    hr, hw = gradient(h, r, w, L)
    return w * hr + (L / r**3 - model.force_at(r)) * hw


def bracket_with_f0(model, h):
    """g = {f0, h} = -phi0'(E) D h, zero outside the support of f0."""

    def g(r, w, L):
        E = model.energy(r, w, L)
        return -model.dphi0(E) * transport(model, h, r, w, L)

    return g


class EnergyGenerator(ModelEnergy):
    """H = E: the steady flow itself, which leaves f0 invariant."""


class OddBumpGenerator:
    """H = a chi(E) r w q(r^2, L), odd in w and supported in E < E0 - eps.

    chi(E) = exp(kappa/W - kappa/(E_cut - E)) with E_cut = E0 - eps and
    W = E_cut - U0(0), so chi = 1 at the bottom of the well and chi is
    C-infinity with every derivative vanishing at E_cut. q is a polynomial
    in the scaled variables r^2/R^2 and L/(M R).
    """

    family = "odd_bump"

    def __init__(self, model, amplitude=1.0, coeffs=((1.0,),), eps=None, kappa=0.5):
        self.model = model
        self.amplitude = float(amplitude)
        self.coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        self.eps = 0.05 * model.W0 if eps is None else float(eps)
        if not 0 < self.eps < model.W0:
            raise ValueError("eps must lie in (0, W0)")
        self.E_cut = model.E0 - self.eps
        self.depth = self.E_cut - model.U_center
        self.kappa = float(kappa) * self.depth
        self.r2_scale = model.R**2
        self.L_scale = model.M * model.R

    @classmethod
    def random(cls, model, rng, degree=2, **kw):
        c = rng.uniform(-1.0, 1.0, size=(degree + 1, degree + 1))
        c[0, 0] = 1.0 + abs(c[0, 0])
        return cls(model, coeffs=c, **kw)

    def params(self):
        return dict(family=self.family, amplitude=self.amplitude, eps=self.eps,
                    kappa=self.kappa / self.depth, coeffs=self.coeffs.tolist())

    def chi(self, E):
        E = np.asarray(E, dtype=float)
        gap = self.E_cut - E
        safe = np.where(gap > 0, gap, 1.0)
        val = np.exp(self.kappa / self.depth - self.kappa / safe)
        return np.where(gap > 0, val, 0.0)

    def chi_prime(self, E):
        E = np.asarray(E, dtype=float)
        gap = self.E_cut - E
        safe = np.where(gap > 0, gap, 1.0)
        return np.where(gap > 0, -self.kappa / safe**2 * self.chi(E), 0.0)

    def _q_pair(self, r, L):
        """q and dq/d(r^2) by Horner in both scaled variables."""
        x = r**2 / self.r2_scale
        y = np.asarray(L) / self.L_scale
        c = self.coeffs
        q = np.zeros(np.broadcast(x, y).shape)
        q1 = np.zeros_like(q)
        for j in range(c.shape[0] - 1, -1, -1):
            row = np.zeros_like(q)
            for k in range(c.shape[1] - 1, -1, -1):
                row = row * y + c[j, k]
            q1 = q1 * x + q
            q = q * x + row
        return q, q1 / self.r2_scale

    def q(self, r, L):
        return self._q_pair(r, L)[0]

    def q_r2(self, r, L):
        """dq/d(r^2)."""
        return self._q_pair(r, L)[1]

    def _parts(self, r, w, L):
        r = np.asarray(r, dtype=float)
        w = np.asarray(w, dtype=float)
        U, m = self.model.profile(r)
        E = 0.5 * w**2 + 0.5 * L / r**2 + U
        chi = self.chi(E)
        q, q1 = self._q_pair(r, L)
        return r, w, m / r**2, E, chi, q, q1

    def mu(self, r, w, L):
        """h / (r w), finite everywhere."""
        _, _, _, _, chi, q, _ = self._parts(r, w, L)
        return self.amplitude * chi * q

    def mu_transport(self, r, w, L):
        """D mu = a chi(E) 2 r w dq/d(r^2), since D E = 0."""
        r, w, _, _, chi, _, q1 = self._parts(r, w, L)
        return self.amplitude * chi * 2.0 * r * w * q1

    def __call__(self, r, w, L):
        r, w, _, _, chi, q, _ = self._parts(r, w, L)
        return self.amplitude * r * w * chi * q

    def grad(self, r, w, L):
        r, w, force, E, chi, q, q1 = self._parts(r, w, L)
        a = self.amplitude
        gap = self.E_cut - E
        dchi = np.where(gap > 0, -self.kappa / np.where(gap > 0, gap, 1.0) ** 2 * chi, 0.0)
        Er = force - L / r**3
        hr = a * (dchi * Er * r * w * q + chi * w * q + chi * r * w * q1 * 2.0 * r)
        hw = a * (dchi * w * r * w * q + chi * r * q)
        return hr, hw

    def transport(self, r, w, L):
        """D h = a chi [q (w^2 + L/r^2 - r U0') + 2 r^2 w^2 dq/d(r^2)]."""
        r, w, force, _, chi, q, q1 = self._parts(r, w, L)
        lift = w**2 + L / r**2 - r * force
        return self.amplitude * chi * (q * lift + 2.0 * r**2 * w**2 * q1)


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowBox:
    r_max: float
    w_max: float

    @classmethod
    def for_model(cls, model, factor=4.0):
        return cls(factor * model.R, factor * model.w_max)


def _rk4(gen, r, w, L, s, n, box):
    # points outside the support of H are fixed points and stay outside
    if hasattr(gen, "E_cut"):
        active = gen.model.energy(r, w, L) < gen.E_cut
        if not np.all(active):
            r_out = np.array(r, dtype=float, copy=True)
            w_out = np.array(w, dtype=float, copy=True)
            ra, wa = _rk4_core(gen, r_out[active], w_out[active], np.broadcast_to(L, r_out.shape)[active],
                               s, n, box)
            r_out[active] = ra
            w_out[active] = wa
            return r_out, w_out
    return _rk4_core(gen, r, w, L, s, n, box)


def _rk4_core(gen, r, w, L, s, n, box):
    h = s / n
    for _ in range(n):
        k1r, k1w = _velocity(gen, r, w, L)
        k2r, k2w = _velocity(gen, r + 0.5 * h * k1r, w + 0.5 * h * k1w, L)
        k3r, k3w = _velocity(gen, r + 0.5 * h * k2r, w + 0.5 * h * k2w, L)
        k4r, k4w = _velocity(gen, r + h * k3r, w + h * k3w, L)
        r = r + h / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
        w = w + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        bad = ~np.isfinite(r) | ~np.isfinite(w) | (r <= 0) | (r > box.r_max) | (np.abs(w) > box.w_max)
        if np.any(bad):
            raise FlowBlowup(f"{int(np.count_nonzero(bad))} trajectories left the box "
                             f"r <= {box.r_max:g}, |w| <= {box.w_max:g}")
    return r, w


def _velocity(gen, r, w, L):
    hr, hw = gen.grad(r, w, L)
    return hw, -hr


def flow_points(model, gen, r, w, L, s, tol=1e-10, n_min=64, n_max=1 << 14, box=None):
    """Flow points for pseudo-time s with RK4, doubling the step count until
    successive results agree to ``tol`` (relative to the box size)."""
    box = box or FlowBox.for_model(model)
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    if s == 0:
        return r.copy(), w.copy(), 0
    n = n_min
    prev = _rk4(gen, r, w, L, s, n, box)
    while n < n_max:
        n *= 2
        cur = _rk4(gen, r, w, L, s, n, box)
        err = max(np.max(np.abs(cur[0] - prev[0])) / model.R,
                  np.max(np.abs(cur[1] - prev[1])) / model.w_max)
        if err < tol:
            return cur[0], cur[1], n
        prev = cur
    return prev[0], prev[1], n


def flow(ens, gen, s, model, tol=1e-10, box=None):
    """Transport markers along the generator flow; f_value, weight and L are carried."""
    r, w, _ = flow_points(model, gen, ens.r, ens.w, ens.L, s, tol=tol, box=box)
    return ParticleEnsemble(r, w, ens.L.copy(), ens.f_value.copy(), ens.weight.copy())


def flowed_density(quad, model, gen, s, tol=1e-6, n_min=64, n_max=1 << 12, box=None):
    """f_s = f0 o (flow by -s) on the nodes of ``quad``.

    The step count doubles until the Casimir battery of f_s agrees with that of
    f0 to ``tol`` relative, and the last two step counts agree to the same
    level. Returns (PhaseFunction, info).
    """
    box = box or FlowBox.for_model(model)
    ref = PhaseFunction(quad, model.f0_of_energy(quad.energy))
    target = np.array([casimir(ref, phi) for _, phi in CASIMIR_BATTERY])
    n = n_min
    prev = None
    while True:
        r, w = _rk4(gen, quad.r, quad.w, quad.L, -s, n, box)
        vals = model.f0_of_energy(model.energy(r, w, quad.L))
        pf = PhaseFunction(quad, vals)
        bat = np.array([casimir(pf, phi) for _, phi in CASIMIR_BATTERY])
        dev = float(np.max(np.abs(bat - target) / np.abs(target)))
        change = math.inf if prev is None else float(np.max(np.abs(vals - prev)))
        if (dev < tol and change < tol * model.f0_sup) or n >= n_max:
            return pf, dict(steps=n, battery_deviation=dev, last_change=change)
        prev = vals
        n *= 2


# ---------------------------------------------------------------------------
# membership report
# ---------------------------------------------------------------------------

def verify_S_membership(ens, ref, model, threshold=1e-6, battery=CASIMIR_BATTERY):
    """Casimir battery of ``ens`` against ``ref`` plus sup-norm and sorted-value checks."""
    rows = []
    ok = True
    for name, phi in battery:
        a = casimir(ens, phi)
        b = casimir(ref, phi)
        dev = abs(a - b) / max(abs(b), 1e-300)
        rows.append(dict(name=name, value=a, reference=b, deviation=dev, tolerance=threshold,
                         passed=bool(dev < threshold)))
        ok &= dev < threshold
    sup = float(np.max(ens.f_value))
    same_values = bool(np.array_equal(np.sort(ens.f_value), np.sort(ref.f_value)))
    return dict(casimirs=rows, sup_f=sup, f0_sup=model.f0_sup,
                sup_within=bool(sup <= model.f0_sup * (1 + 1e-12)),
                sorted_values_equal=same_values, passed=bool(ok and same_values))
