"""King steady state: radial profiles of the isothermal-with-cutoff model.

Units have G = 1. The model is indexed by its central depth ``W0 = E0 - U0(0)``;
the cutoff energy ``E0 = -M/R`` is recovered after the outward integration.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .errors import DepthNeverVanishes, NonMonotonePotential
from .tables import write_table

SNAPSHOT_MAGIC = "kingstab-model"
SNAPSHOT_VERSION = 1


def density_of_depth(w):
    """Spatial density 4*sqrt(2)*pi * int_0^w (e^(w-eps) - 1) sqrt(eps) d eps.

    Zero for ``w <= 0``. Accepts scalars or arrays.
    """
    arr = np.asarray(w, dtype=float)
    rho, _ = _kernels.depth_density(np.atleast_1d(arr))
    return float(rho[0]) if arr.ndim == 0 else rho.reshape(arr.shape)


def density_slope_of_depth(w):
    """d rho / d w, which equals 4*sqrt(2)*pi * e^w * gamma(3/2, w)."""
    arr = np.asarray(w, dtype=float)
    _, drho = _kernels.depth_density(np.atleast_1d(arr))
    return float(drho[0]) if arr.ndim == 0 else drho.reshape(arr.shape)


@dataclass(frozen=True)
class KingParameters:
    W0: float = 2.0
    r_max_hint: float | None = None
    ode_tolerance: float = 1e-6
    grid_size: int = 4001

    def __post_init__(self):
        if not self.W0 > 0:
            raise ValueError("W0 must be positive")
        if not self.ode_tolerance > 0:
            raise ValueError("ode_tolerance must be positive")
        if int(self.grid_size) < 100:
            raise ValueError("grid_size must be at least 100")
        if self.r_max_hint is not None and not self.r_max_hint > 0:
            raise ValueError("r_max_hint must be positive")


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Spherical potential/mass profile on a uniform grid with a Kepler exterior.

    ``R == 0`` (a single grid node) gives a point mass, used as a test stub.
    """

    r: np.ndarray
    U: np.ndarray
    m: np.ndarray
    rho: np.ndarray
    R: float
    M: float
    tables: tuple = field(init=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            dU = np.where(r > 0, self.m / r**2, 0.0)
        dm = 4.0 * math.pi * r**2 * self.rho
        h = float(r[1] - r[0]) if r.size > 1 else 1.0
        for a in (dU, dm):
            a.setflags(write=False)
        object.__setattr__(
            self, "tables",
            (h, np.ascontiguousarray(self.U), dU, np.ascontiguousarray(self.m), dm,
             float(self.R), float(self.M)),
        )

    def potential_at(self, r):
        r = np.asarray(r, dtype=float)
        out = _kernels.profile_eval(np.atleast_1d(r), self.tables)[0]
        return float(out[0]) if r.ndim == 0 else out.reshape(r.shape)

    def mass_at(self, r):
        r = np.asarray(r, dtype=float)
        out = _kernels.profile_eval(np.atleast_1d(r), self.tables)[1]
        return float(out[0]) if r.ndim == 0 else out.reshape(r.shape)

    def profile(self, r):
        """(U(r), m(r)) in one pass."""
        r = np.asarray(r, dtype=float)
        U, m, _ = _kernels.profile_eval(np.ascontiguousarray(r).reshape(-1), self.tables)
        return U.reshape(r.shape), m.reshape(r.shape)

    def force_at(self, r):
        """U'(r) = m(r)/r^2."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, self.mass_at(r) / r**2, 0.0)
        return float(out) if r.ndim == 0 else out

    def density_at(self, r):
        return np.zeros_like(np.asarray(r, dtype=float)) + 0.0

    @property
    def U_center(self):
        return float(self.U[0]) if self.R > 0 else -math.inf


def kepler_stub(M=1.0):
    """Point-mass profile m(r) = M, U(r) = -M/r."""
    z = np.zeros(1)
    return RadialProfile(r=z, U=z.copy(), m=z.copy(), rho=z.copy(), R=0.0, M=float(M))


@dataclass(frozen=True, eq=False)
class KingModel(RadialProfile):
    """Frozen King steady state f0 = (exp(E0 - E) - 1)_+ with its profiles."""

    E0: float = 0.0
    W0: float = 0.0
    ode_tolerance: float = 1e-6

    @property
    def f0_sup(self):
        return math.expm1(self.W0)

    @property
    def C0(self):
        return 1.0 / (2.0 + 2.0 * self.f0_sup)

    def density_at(self, r):
        r = np.asarray(r, dtype=float)
        depth = self.E0 - self.potential_at(r)
        out = np.where(r < self.R, density_of_depth(np.where(r < self.R, depth, 0.0)), 0.0)
        return float(out) if r.ndim == 0 else out

    def depth_at(self, r):
        """E0 - U0(r), clipped at zero outside the support."""
        return np.maximum(self.E0 - self.potential_at(r), 0.0)

    # f0 = phi0(E)
    def f0_of_energy(self, E):
        E = np.asarray(E, dtype=float)
        out = np.expm1(np.maximum(self.E0 - E, 0.0))
        return float(out) if out.ndim == 0 else out

    def dphi0(self, E):
        """phi0'(E): -exp(E0 - E) inside the support, 0 beyond."""
        E = np.asarray(E, dtype=float)
        out = np.where(E < self.E0, -np.exp(np.minimum(self.E0 - E, 700.0)), 0.0)
        return float(out) if out.ndim == 0 else out

    def energy(self, r, w, L):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 0.5 * np.asarray(w) ** 2 + 0.5 * np.asarray(L) / r**2 + self.potential_at(r)

    @property
    def L_max(self):
        """Largest L = 2 r^2 (E0 - U0(r)) reachable inside the support."""
        return float(np.max(2.0 * self.r**2 * (self.E0 - self.U)))

    @property
    def w_max(self):
        return math.sqrt(2.0 * self.W0)

    def poisson_residual(self):
        """max |m' - 4 pi r^2 rho| / (1 + m) on interior nodes, m' by 4th-order differences."""
        h = self.tables[0]
        m = self.m
        dm_fd = (m[:-4] - 8 * m[1:-3] + 8 * m[3:-1] - m[4:]) / (12 * h)
        rr = self.r[2:-2]
        target = 4.0 * math.pi * rr**2 * self.rho[2:-2]
        return float(np.max(np.abs(dm_fd - target) / (1.0 + m[2:-2])))

    def force_residual(self):
        """max |U' - m/r^2| * r^2/(1+m) on interior nodes, U' by 4th-order differences."""
        h = self.tables[0]
        U = self.U
        dU_fd = (U[:-4] - 8 * U[1:-3] + 8 * U[3:-1] - U[4:]) / (12 * h)
        rr = self.r[2:-2]
        return float(np.max(np.abs(dU_fd * rr**2 - self.m[2:-2]) / (1.0 + self.m[2:-2])))

    def to_csv(self, path):
        write_table(path, ("r", "U0", "rho0", "m0"), np.column_stack([self.r, self.U, self.rho, self.m]))

    def save(self, path):
        np.savez(
            path, magic=SNAPSHOT_MAGIC, version=SNAPSHOT_VERSION,
            r=self.r, U=self.U, m=self.m, rho=self.rho,
            scalars=np.array([self.R, self.M, self.E0, self.W0, self.ode_tolerance]),
        )

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            if str(z["magic"]) != SNAPSHOT_MAGIC:
                raise ValueError(f"{path}: not a model snapshot")
            if int(z["version"]) != SNAPSHOT_VERSION:
                raise ValueError(f"{path}: unsupported snapshot version {int(z['version'])}")
            R, M, E0, W0, tol = z["scalars"]
            return cls(r=z["r"], U=z["U"], m=z["m"], rho=z["rho"], R=float(R), M=float(M),
                       E0=float(E0), W0=float(W0), ode_tolerance=float(tol))


def _depth_rhs(r, y):
    psi, m = y
    _, tail = _kernels._depth_series_scalar(psi)
    return [-m / (r * r), 4.0 * math.pi * r * r * _kernels._DEPTH_PREFACTOR * tail]


def _depth_zero(r, y):
    return y[0]


_depth_zero.terminal = True
_depth_zero.direction = -1


def build_king(params=None):
    """Integrate the semilinear Poisson equation outward from a regular center.

    The depth psi = E0 - U obeys psi' = -m/r^2, m' = 4 pi r^2 rho(psi) with
    psi(0) = W0. The support radius R is where psi first vanishes.
    """
    params = params or KingParameters()
    W0 = float(params.W0)
    rho_c = density_of_depth(W0)
    r_core = math.sqrt(9.0 / (4.0 * math.pi * rho_c))
    r_hint = params.r_max_hint if params.r_max_hint is not None else 1e4 * r_core
    rtol = min(1e-12, params.ode_tolerance * 1e-6)

    # Taylor seed at small r0 avoids the 1/r^2 singularity
    drho_c = density_slope_of_depth(W0)
    r0 = 1e-4 * r_core
    c2 = 2.0 * math.pi / 3.0 * rho_c
    psi0 = W0 - c2 * r0**2
    m0 = 4.0 * math.pi / 3.0 * rho_c * r0**3 - 4.0 * math.pi / 5.0 * drho_c * c2 * r0**5

    sol = solve_ivp(
        _depth_rhs, (r0, r_hint), [psi0, m0], method="DOP853", rtol=rtol,
        atol=[1e-16 * W0, 1e-300], events=_depth_zero, dense_output=True,
    )
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise DepthNeverVanishes(f"depth still positive at r_max_hint = {r_hint:g}; increase it")
    R = float(sol.t_events[0][0])
    M = float(sol.y_events[0][0][1])
    E0 = -M / R

    n = int(params.grid_size)
    r = np.linspace(0.0, R, n)
    psi = np.empty(n)
    m = np.empty(n)
    inner = r < r0
    psi[inner] = W0 - c2 * r[inner] ** 2
    m[inner] = 4.0 * math.pi / 3.0 * rho_c * r[inner] ** 3
    ys = sol.sol(r[~inner])
    psi[~inner] = ys[0]
    m[~inner] = ys[1]
    psi[-1] = 0.0
    m[-1] = M
    psi = np.maximum(psi, 0.0)
    rho = density_of_depth(psi)
    U = E0 - psi

    if not np.all(np.diff(U) > 0):
        raise NonMonotonePotential("U0 is not strictly increasing on the grid; step-size failure")
    _check_hermite_monotone(r, U, m)
    return KingModel(r=r, U=U, m=m, rho=rho, R=R, M=M, E0=E0, W0=W0,
                     ode_tolerance=params.ode_tolerance)


def _check_hermite_monotone(r, U, m):
    # Fritsch-Carlson sufficient condition for each Hermite interval
    h = r[1] - r[0]
    dU = np.zeros_like(r)
    dU[1:] = m[1:] / r[1:] ** 2
    for vals, slopes in ((U, dU),):
        sec = np.diff(vals) / h
        a = slopes[:-1] / sec
        b = slopes[1:] / sec
        if np.any(a * a + b * b > 9.0 * (1 + 1e-9)) or np.any(sec <= 0):
            raise NonMonotonePotential("Hermite interpolant of U0 would not be monotone")
