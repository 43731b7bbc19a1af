"""Self-consistent spherical Vlasov-Poisson evolution with shell markers.

Each marker is a spherical shell (r, w, L). The field is exact for shells:
a marker feels -m/r^2 with m the mass strictly inside plus half its own
weight, the gradient of the shell energy W = -sum_i w_i (m_i^- + w_i/2)/r_i.
The step is kick-drift-kick where the drift is exact free flight, so the
centrifugal barrier and passages through the centre need no sub-stepping.
"""

from dataclasses import asdict, dataclass
import math
import struct

import numpy as np

from . import _kernels
from .errors import RejectionStarvation, StepBlowup
from .functionals import (
    CASIMIR_BATTERY, DiagnosticsSeries, ParticleEnsemble, casimir, distance_d_cic,
    distance_d_paired, energy, field_from_particles, phi0, BoxGrid,
)
from .orbits import find_r_L, radial_time_integral

CHECKPOINT_MAGIC = b"KSTBPART"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIQdQ")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    N: int = 100_000
    field_update: str = "every-step"
    softening: float = 0.0
    seed: int = 0
    output_stride: int = 10
    checkpoint_stride: int = 0
    box_factor: float = 50.0
    cic_stride: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.N) < 1000:
            raise ValueError("N must be at least 1000")
        if self.field_update != "every-step":
            raise ValueError("only field_update = 'every-step' is supported")
        if self.softening < 0:
            raise ValueError("softening must be nonnegative")
        if int(self.output_stride) < 1:
            raise ValueError("output_stride must be at least 1")

    def validate_for(self, model):
        if not self.softening < 1e-3 * model.R:
            raise ValueError("softening must stay below 1e-3 R")
        return self

    @property
    def n_steps(self):
        return int(math.ceil(self.horizon / self.dt - 1e-9))


def sample_steady_state(model, N, seed=0, batch=None, min_acceptance=1e-4):
    """Rejection sampling of f0 over the box [0, R] x [-w_max, w_max] x [0, L_max].

    The reduced measure is flat in (r, w, L), so the proposal is uniform and
    the acceptance test compares f0 with its maximum.
    """
    rng = np.random.default_rng(seed)
    N = int(N)
    batch = batch or max(4 * N, 10_000)
    top = model.f0_sup
    out_r, out_w, out_L = [], [], []
    have = 0
    tried = 0
    accepted = 0
    while have < N:
        r = rng.uniform(0.0, model.R, batch)
        w = rng.uniform(-model.w_max, model.w_max, batch)
        L = rng.uniform(0.0, model.L_max, batch)
        u = rng.uniform(0.0, top, batch)
        with np.errstate(divide="ignore"):
            f = model.f0_of_energy(model.energy(r, w, L))
        keep = (u < f) & (r > 0)
        tried += batch
        accepted += int(np.count_nonzero(keep))
        if tried >= 10 * batch and accepted / tried < min_acceptance:
            raise RejectionStarvation(f"acceptance rate {accepted / tried:.2e} below {min_acceptance:g}")
        out_r.append(r[keep])
        out_w.append(w[keep])
        out_L.append(L[keep])
        have += int(np.count_nonzero(keep))
    r = np.concatenate(out_r)[:N]
    w = np.concatenate(out_w)[:N]
    L = np.concatenate(out_L)[:N]
    fv = model.f0_of_energy(model.energy(r, w, L))
    return ParticleEnsemble(r, w, L, fv, np.full(N, model.M / N))


def dynamical_time(model, L_ref):
    """2 x radial time at E = E0 - W0/2 and angular momentum ``L_ref``.

    When that energy lies below the well bottom for ``L_ref`` the energy is
    raised to the midpoint between the well bottom and E0.
    """
    E = model.E0 - 0.5 * model.W0
    _, pmin, _ = find_r_L(model, L_ref)
    if E <= pmin:
        E = 0.5 * (pmin + model.E0)
    return 2.0 * radial_time_integral(model, E, L_ref)


class ShellState:
    """Markers plus the cached self-field accelerations."""

    def __init__(self, ens, t=0.0, softening=0.0, frozen_model=None):
        self.ens = ens
        self.t = float(t)
        self.softening = float(softening)
        self.frozen_model = frozen_model
        self.field = None
        self.acc = self._accelerations()

    def _accelerations(self):
        r = self.ens.r
        if self.frozen_model is not None:
            m = self.frozen_model.mass_at(r)
            self.field = None
        else:
            self.field = field_from_particles(self.ens)
            m = self.field.m_mid
        if self.softening > 0:
            return -m * r / (r * r + self.softening**2) ** 1.5
        return -m / (r * r)

    def step(self, dt, r_box=math.inf):
        """One kick-drift-kick step; one field solve per step."""
        e = self.ens
        e.w += 0.5 * dt * self.acc
        _kernels.drift(e.r, e.w, e.L, dt)
        bad = ~np.isfinite(e.r) | ~np.isfinite(e.w) | (e.r > r_box)
        if np.any(bad):
            raise StepBlowup(f"{int(np.count_nonzero(bad))} markers left r <= {r_box:g}",
                             time=self.t + dt)
        self.acc = self._accelerations()
        e.w += 0.5 * dt * self.acc
        self.t += dt


def step(ens, dt, softening=0.0, frozen_model=None):
    """Advance ``ens`` in place by one step (convenience wrapper)."""
    state = ShellState(ens, softening=softening, frozen_model=frozen_model)
    state.step(dt)
    return ens


def _record(series, state, model, ref, grid, cic, hc_casimir, battery):
    e = state.ens
    fld = field_from_particles(e, model)
    ek, ep, H = energy(e, fld)
    d, _, _ = distance_d_paired(e, ref, model, fld)
    series.append(state.t, ek, ep, H + hc_casimir, d, fld.field_diff2, battery)
    if cic:
        series.extra.setdefault("d_cic", []).append(
            (state.t, distance_d_cic(e, model, grid, fld)[0]))


def run(ens, model, config, ref=None, start_time=0.0, checkpoint_path=None, progress=None):
    """Evolve ``ens`` (modified in place) to ``config.horizon``.

    ``ref`` is the f0 sample the initial state was obtained from by a
    phase-volume preserving map; it pairs markers for the distance d and
    defaults to a copy of the initial ensemble. Returns a DiagnosticsSeries.
    """
    config.validate_for(model)
    ref = ref if ref is not None else ens.copy()
    state = ShellState(ens, t=start_time, softening=config.softening)
    series = DiagnosticsSeries()
    series.extra["config"] = asdict(config)
    hc_casimir = casimir(ens, lambda f, L: phi0(f), probe=False)
    battery = [casimir(ens, phi) for _, phi in CASIMIR_BATTERY]
    grid = BoxGrid.for_model(model) if config.cic_stride else None
    r_box = config.box_factor * model.R
    L0 = ens.L.copy()
    f_sorted = np.sort(ens.f_value)
    mass0 = ens.total_mass
    n = int(round((config.horizon - start_time) / config.dt))
    _record(series, state, model, ref, grid, bool(config.cic_stride), hc_casimir, battery)
    for k in range(1, n + 1):
        state.step(config.dt, r_box)
        if k % config.output_stride == 0 or k == n:
            cic = bool(config.cic_stride) and (k % config.cic_stride == 0 or k == n)
            _record(series, state, model, ref, grid, cic, hc_casimir, battery)
        if checkpoint_path and config.checkpoint_stride and k % config.checkpoint_stride == 0:
            write_checkpoint(checkpoint_path, ens, state.t, k)
        if progress:
            progress(k, n)
    series.extra["L_invariant"] = bool(np.array_equal(L0, ens.L))
    series.extra["f_sorted_invariant"] = bool(np.array_equal(f_sorted, np.sort(ens.f_value)))
    series.extra["mass_invariant"] = bool(ens.total_mass == mass0)
    return series


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, ens, t, step_index=0):
    """Binary snapshot: header (magic, version, N, t, step) then float64 records."""
    records = np.column_stack([ens.r, ens.w, ens.L, ens.f_value, ens.weight]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(ens), float(t),
                              int(step_index)))
        fh.write(records.tobytes())


def read_checkpoint(path):
    """Returns (ensemble, t, step)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated checkpoint header")
        magic, version, n, t, k = _HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a particle checkpoint")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 5 * n:
        raise ValueError(f"{path}: expected {n} records, found {data.size / 5:g}")
    data = data.reshape(n, 5)
    ens = ParticleEnsemble(*(np.array(data[:, i]) for i in range(5)))
    return ens, t, k
