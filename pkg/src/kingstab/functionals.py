"""Conserved functionals and the distance to the steady state.

Two representations of a phase-space density are supported:

* ``PhaseFunction`` values on a ``SupportQuadrature`` (smooth, spectral);
* ``ParticleEnsemble`` markers carrying their phase density and mass.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import _kernels
from .errors import DomainError, GridCoverageError
from .phase import PhaseFunction
from .tables import write_table


def phi0(f):
    """(1 + f) log(1 + f) - f."""
    f = np.asarray(f, dtype=float)
    return (1.0 + f) * np.log1p(f) - f


CASIMIR_BATTERY = (
    ("f2", lambda f, L: f**2),
    ("f3", lambda f, L: f**3),
    ("f2L", lambda f, L: f**2 * L),
    ("f2expL", lambda f, L: f**2 * np.exp(-L)),
    ("f2_over_1pL", lambda f, L: f**2 / (1.0 + L)),
)


@dataclass
class ParticleEnsemble:
    """Weighted markers in reduced coordinates.

    ``weight`` is the mass carried (phase volume times ``f_value``).
    """

    r: np.ndarray
    w: np.ndarray
    L: np.ndarray
    f_value: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        for name in ("r", "w", "L", "f_value", "weight"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        n = self.r.shape
        if any(getattr(self, k).shape != n for k in ("w", "L", "f_value", "weight")):
            raise ValueError("ensemble arrays must share one shape")
        if self.r.size == 0:
            raise ValueError("empty ensemble")
        if np.any(self.weight <= 0):
            raise ValueError("weights must be positive")
        if np.any(self.L < 0):
            raise ValueError("L must be nonnegative")

    def __len__(self):
        return self.r.size

    @property
    def total_mass(self):
        return float(np.sum(self.weight))

    @property
    def volume(self):
        """Phase-space volume represented by each marker."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.f_value > 0, self.weight / self.f_value, 0.0)

    def copy(self):
        return ParticleEnsemble(self.r.copy(), self.w.copy(), self.L.copy(),
                                self.f_value.copy(), self.weight.copy())


# ---------------------------------------------------------------------------
# particle fields and energies
# ---------------------------------------------------------------------------

@dataclass
class ParticleField:
    order: np.ndarray
    r_sorted: np.ndarray
    m_outer: np.ndarray  # enclosed mass just outside each sorted radius
    m_mid: np.ndarray  # per particle, inner mass plus half its own weight
    field_diff2: float = math.nan

    def enclosed_mass(self, r):
        idx = np.searchsorted(self.r_sorted, np.asarray(r, dtype=float), side="right")
        padded = np.concatenate(([0.0], self.m_outer))
        return padded[idx]


def field_from_particles(ens, model=None):
    """Shell-theorem field of an ensemble: enclosed masses and, given a model,
    ||grad U_f - grad U_0||^2 = 4 pi int (m_f - m_0)^2 / r^2 dr."""
    order, m_mid = _kernels.shell_mass(ens.r, ens.weight)
    rs = ens.r[order]
    m_outer = np.cumsum(ens.weight[order])
    fd = math.nan
    if model is not None:
        fd = _kernels.field_diff_norm(rs, m_outer, model.tables)
    return ParticleField(order, rs, m_outer, m_mid, fd)


def kinetic_energy(ens):
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(ens.L > 0, ens.L / ens.r**2, 0.0)
    return 0.5 * float(np.sum(ens.weight * (ens.w**2 + c)))


def potential_energy(ens, fld=None):
    """Shell interaction energy -sum_i w_i (m_i^- + w_i/2) / r_i."""
    fld = fld or field_from_particles(ens)
    return -float(np.sum(ens.weight * fld.m_mid / ens.r))


def potential_energy_field_form(fld):
    """-(1/8 pi) ||grad U_f||^2 = -1/2 int m_f^2 / r^2 dr for the step mass profile."""
    rs = fld.r_sorted
    m = fld.m_outer
    inv = 1.0 / rs
    gaps = inv - np.concatenate((inv[1:], [0.0]))
    return -0.5 * float(np.sum(m**2 * gaps))


def energy(ens, fld=None):
    """(E_kin, E_pot, H) of an ensemble."""
    fld = fld or field_from_particles(ens)
    ek = kinetic_energy(ens)
    ep = potential_energy(ens, fld)
    return ek, ep, ek + ep


# ---------------------------------------------------------------------------
# grid functionals
# ---------------------------------------------------------------------------

def grid_energy(pf):
    """(E_kin, E_pot, H) for a density sampled on a ``SupportQuadrature``."""
    q = pf.quad
    ek = 0.5 * q.integrate((q.w**2 + q.L / q.r**2) * pf.values)
    ep = -q.field_energy(q.density(pf.values)) / (8.0 * math.pi)
    return ek, ep, ek + ep


def _probe_domain(phi):
    Ls = np.array([0.0, 1e-3, 0.5, 1.0, 10.0])
    vals = np.asarray(phi(np.zeros_like(Ls), Ls), dtype=float)
    if np.any(np.abs(vals) > 1e-14):
        raise DomainError("Casimir function must vanish at f = 0")


def casimir(rep, phi, probe=True):
    """int int Phi(f, L) dv dx on a grid function or an ensemble."""
    if probe:
        _probe_domain(phi)
    if isinstance(rep, PhaseFunction):
        q = rep.quad
        return q.integrate(phi(rep.values, q.L))
    keep = rep.f_value > 0
    vol = rep.weight[keep] / rep.f_value[keep]
    return float(np.sum(vol * phi(rep.f_value[keep], rep.L[keep])))


def casimir_battery(rep, battery=CASIMIR_BATTERY):
    return {name: casimir(rep, phi) for name, phi in battery}


def energy_casimir(pf):
    """H_C(f) = H(f) + int Phi_0(f)."""
    _, _, H = grid_energy(pf)
    return H + casimir(pf, lambda f, L: phi0(f), probe=False)


@dataclass
class DistanceReport:
    d: float
    convex_term: float
    field_term: float
    decrel_rhs: float
    mismatch: float
    mass_defect: float
    convexity_violations: int
    convexity_min_margin: float
    scale: float

    def as_dict(self):
        return dict(self.__dict__)


def energy_scale(model):
    """M^2 / R, the natural size of energies of the model."""
    return model.M**2 / model.R


def convexity_integrand(model, f, f0, E):
    with np.errstate(invalid="ignore"):
        return phi0(f) - phi0(f0) + (E - model.E0) * (f - f0)


def distance_d(pf, model, mass_tol=1e-6):
    """d(f, f0) on a ``SupportQuadrature`` covering ``{E <= E0}``.

    Also evaluates H_C(f) - H_C(f0) + (1/4 pi) ||grad U_f - grad U_0||^2 from
    independently computed energies, whose mismatch with d measures how well
    the discrete integration by parts behind that relation holds.
    """
    q = pf.quad
    if q.E_top < model.E0:
        raise GridCoverageError("distance needs a rule covering the whole support")
    E = q.energy
    f = pf.values
    f0 = model.f0_of_energy(E)
    mass = q.integrate(f)
    mass0 = q.integrate(f0)
    defect = (mass - mass0) / model.M
    if abs(defect) > mass_tol:
        raise ValueError(f"mass of f differs from M by {defect:.3e} (relative)")
    integrand = convexity_integrand(model, f, f0, E)
    convex = q.integrate(integrand)
    fd2 = q.field_difference_energy(q.density(f))
    field_term = fd2 / (8.0 * math.pi)
    d = convex + field_term
    ref = PhaseFunction(q, f0)
    rhs = energy_casimir(pf) - energy_casimir(ref) + fd2 / (4.0 * math.pi)
    inside = (f >= 0) & (f <= model.f0_sup)
    margin = integrand - model.C0 * (f - f0) ** 2
    viol = int(np.count_nonzero(inside & (margin < -1e-12)))
    return DistanceReport(
        d=d, convex_term=convex, field_term=field_term, decrel_rhs=rhs, mismatch=d - rhs,
        mass_defect=defect, convexity_violations=viol,
        convexity_min_margin=float(np.min(np.where(inside, margin, np.inf))),
        scale=energy_scale(model),
    )


def l2_distance_squared(pf, model):
    q = pf.quad
    return q.integrate((pf.values - model.f0_of_energy(q.energy)) ** 2)


def distance_d_paired(ens, ref, model, fld=None):
    """d for an ensemble obtained from ``ref`` by a phase-volume preserving map.

    Marker i of ``ens`` is the image of marker i of ``ref``; then
    int Phi_0(f) = int Phi_0(f0) and the first term of d is
    sum_i w_i (E(z_i) - E(z_i^ref)) with E the steady-state particle energy.
    Returns (d, energy_term, field_term).
    """
    if len(ens) != len(ref):
        raise ValueError("paired ensembles must have equal size")
    e_now = model.energy(ens.r, ens.w, ens.L)
    e_ref = model.energy(ref.r, ref.w, ref.L)
    t1 = float(np.sum(ens.weight * (e_now - e_ref)))
    fld = fld or field_from_particles(ens, model)
    if math.isnan(fld.field_diff2):
        fld = field_from_particles(ens, model)
    t2 = fld.field_diff2 / (8.0 * math.pi)
    return t1 + t2, t1, t2


# ---------------------------------------------------------------------------
# cloud-in-cell reconstruction on a box grid
# ---------------------------------------------------------------------------

@dataclass
class BoxGrid:
    """Node-centred box in (r, w, L); nodes sit at cell centres in r and L."""

    r_hi: float
    w_hi: float
    L_hi: float
    shape: tuple = (128, 128, 64)

    @classmethod
    def for_model(cls, model, shape=(128, 128, 64), margin=0.05):
        return cls(model.R * (1 + margin), model.w_max * (1 + margin),
                   model.L_max * (1 + margin), tuple(shape))

    @property
    def spacing(self):
        nr, nw, nl = self.shape
        return (self.r_hi / nr, 2.0 * self.w_hi / (nw - 1), self.L_hi / nl)

    @property
    def origin(self):
        dr, dw, dl = self.spacing
        return (0.5 * dr, -self.w_hi, 0.5 * dl)

    def nodes(self):
        (r0, w0, l0), (dr, dw, dl) = self.origin, self.spacing
        nr, nw, nl = self.shape
        r = r0 + dr * np.arange(nr)
        w = w0 + dw * np.arange(nw)
        L = l0 + dl * np.arange(nl)
        return np.meshgrid(r, w, L, indexing="ij")

    @property
    def cell_measure(self):
        dr, dw, dl = self.spacing
        return 4.0 * math.pi**2 * dr * dw * dl

    def deposit(self, ens):
        """Phase density on the nodes from trilinear deposition of marker mass."""
        (r0, _, l0), _ = self.origin, self.spacing
        r = np.maximum(ens.r, r0)
        L = np.maximum(ens.L, l0)
        grid, lost = _kernels.cic_deposit(r, ens.w, L, ens.weight, self.origin, self.spacing,
                                          self.shape)
        return grid / self.cell_measure, lost


def distance_d_cic(ens, model, grid=None, fld=None):
    """d from a CIC reconstruction of f; returns (d, energy_term, field_term, lost_mass)."""
    grid = grid or BoxGrid.for_model(model)
    f, lost = grid.deposit(ens)
    if lost > 1e-3 * model.M:
        raise GridCoverageError(f"mass {lost:.3e} fell outside the reconstruction box")
    r, w, L = grid.nodes()
    E = model.energy(r, w, L)
    f0 = model.f0_of_energy(E)
    integrand = convexity_integrand(model, f, f0, E)
    t1 = float(np.sum(integrand)) * grid.cell_measure
    fld = fld or field_from_particles(ens, model)
    if math.isnan(fld.field_diff2):
        fld = field_from_particles(ens, model)
    t2 = fld.field_diff2 / (8.0 * math.pi)
    return t1 + t2, t1, t2, lost


# ---------------------------------------------------------------------------
# time series
# ---------------------------------------------------------------------------

SERIES_COLUMNS = ("t", "Ekin", "Epot", "H", "HC", "d", "fieldnorm2") + tuple(
    f"casimir_{i + 1}" for i in range(len(CASIMIR_BATTERY)))


@dataclass
class DiagnosticsSeries:
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def append(self, t, ekin, epot, hc, d, fieldnorm2, casimirs):
        if self.rows and not t > self.rows[-1][0]:
            raise ValueError("time stamps must increase")
        row = [float(t), float(ekin), float(epot), float(ekin + epot), float(hc), float(d),
               float(fieldnorm2)] + [float(c) for c in casimirs]
        if not all(math.isfinite(x) for x in row):
            raise ValueError(f"non-finite diagnostics at t = {t}")
        self.rows.append(row)

    def column(self, name):
        return np.array([row[SERIES_COLUMNS.index(name)] for row in self.rows])

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path, stamp=True):
        write_table(path, SERIES_COLUMNS, np.array(self.rows).reshape(-1, len(SERIES_COLUMNS)),
                    stamp=stamp)

    def summary(self):
        out = dict(self.extra)
        if self.rows:
            H = self.column("H")
            d = self.column("d")
            out.update(
                steps=len(self.rows), t_end=self.rows[-1][0],
                H_drift=float(np.max(np.abs(H - H[0])) / abs(H[0])),
                d_initial=float(d[0]), d_max=float(np.max(d)),
            )
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
