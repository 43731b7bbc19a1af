import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kingstab.errors import DomainError, GridCoverageError
from kingstab.functionals import (
    CASIMIR_BATTERY, SERIES_COLUMNS, DiagnosticsSeries, ParticleEnsemble, casimir,
    convexity_integrand, distance_d, distance_d_paired, energy, energy_scale,
    field_from_particles, grid_energy, phi0, potential_energy, potential_energy_field_form,
)
from kingstab.perturbation import OddBumpGenerator, flowed_density
from kingstab.phase import PhaseFunction, SupportQuadrature
from kingstab.sim import sample_steady_state
from kingstab.tables import read_table


def ensemble(r, w=None, L=None, mass=None):
    r = np.asarray(r, dtype=float)
    n = r.size
    w = np.zeros(n) if w is None else np.asarray(w, dtype=float)
    L = np.zeros(n) if L is None else np.asarray(L, dtype=float)
    mass = np.full(n, 1.0 / n) if mass is None else np.asarray(mass, dtype=float)
    return ParticleEnsemble(r, w, L, np.ones(n), mass)


@pytest.fixture(scope="module")
def quad(model):
    return SupportQuadrature(model)


@given(st.floats(0.0, 1e3))
def test_phi0_is_nonnegative_with_reciprocal_curvature(f):
    assert phi0(f) >= 0
    h = 1e-3 * (1 + f)
    x = max(f, h)
    curv = (phi0(x + h) - 2 * phi0(x) + phi0(x - h)) / h**2
    assert curv == pytest.approx(1 / (1 + x), rel=1e-4)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(-0.8, 0.3))
@settings(max_examples=200)
def test_pointwise_convexity(model, a, b, E_shift):
    f = a * model.f0_sup
    E = model.E0 + E_shift
    f0 = model.f0_of_energy(E)
    lhs = convexity_integrand(model, f, f0, E)
    assert lhs >= model.C0 * (f - f0) ** 2 - 1e-12


def test_two_shell_potential_energy():
    # W = -m1^2 / (2 r1) - m2 (m1 + m2 / 2) / r2
    e = ensemble([0.5, 2.0], mass=[0.3, 0.7])
    expect = -0.3**2 / (2 * 0.5) - 0.7 * (0.3 + 0.35) / 2.0
    assert potential_energy(e) == pytest.approx(expect, rel=1e-14)
    assert potential_energy_field_form(field_from_particles(e)) == pytest.approx(expect, rel=1e-14)


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=50, unique=True))
def test_potential_energy_two_forms_agree(radii):
    e = ensemble(radii)
    fld = field_from_particles(e)
    assert potential_energy(e, fld) == pytest.approx(potential_energy_field_form(fld), rel=1e-12)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ParticleEnsemble([1.0], [0.0], [0.0], [1.0], [0.0])
    with pytest.raises(ValueError):
        ParticleEnsemble([1.0], [0.0], [-1.0], [1.0], [1.0])
    with pytest.raises(ValueError):
        ParticleEnsemble([1.0, 2.0], [0.0], [0.0], [1.0], [1.0])


def test_casimir_needs_zero_at_zero(model, quad):
    pf = PhaseFunction(quad, model.f0_of_energy(quad.energy))
    with pytest.raises(DomainError):
        casimir(pf, lambda f, L: f**2 + 1.0)


def test_grid_energy_virial(model, quad):
    pf = PhaseFunction(quad, model.f0_of_energy(quad.energy))
    ek, ep, H = grid_energy(pf)
    assert ek > 0 and ep < 0
    # isolated stationary system: 2 E_kin + E_pot = 0
    assert 2 * ek + ep == pytest.approx(0.0, abs=1e-9 * abs(ep))


def test_distance_vanishes_at_steady_state(model, quad):
    pf = PhaseFunction(quad, model.f0_of_energy(quad.energy))
    rep = distance_d(pf, model)
    assert abs(rep.d) < 1e-12 * energy_scale(model)
    assert rep.convexity_violations == 0


def test_distance_of_flowed_density(model, quad):
    pf, info = flowed_density(quad, model, OddBumpGenerator(model), 0.1)
    rep = distance_d(pf, model)
    assert rep.d > 0 and rep.convex_term > 0 and rep.field_term > 0
    assert abs(rep.mismatch) < 1e-8 * energy_scale(model)
    assert info["battery_deviation"] < 1e-6


def test_distance_rejects_mass_change_and_short_rules(model, quad):
    pf = PhaseFunction(quad, 1.01 * model.f0_of_energy(quad.energy))
    with pytest.raises(ValueError):
        distance_d(pf, model)
    short = SupportQuadrature(model, model.E0 - 0.1)
    with pytest.raises(GridCoverageError):
        distance_d(PhaseFunction(short, model.f0_of_energy(short.energy)), model)


def test_paired_distance_of_identical_samples(model):
    ref = sample_steady_state(model, 5000, seed=3)
    d, t1, t2 = distance_d_paired(ref.copy(), ref, model)
    assert t1 == 0.0
    assert d == t2 > 0


def test_particle_casimirs_use_carried_values(model):
    ref = sample_steady_state(model, 5000, seed=4)
    shuffled = ref.copy()
    shuffled.r = shuffled.r[::-1].copy()
    for _, phi in CASIMIR_BATTERY:
        assert casimir(shuffled, phi) == casimir(ref, phi)


def test_energy_of_sample_is_close_to_grid(model, quad):
    ens = sample_steady_state(model, 50_000, seed=1)
    _, _, H = energy(ens)
    _, _, H_grid = grid_energy(PhaseFunction(quad, model.f0_of_energy(quad.energy)))
    assert H == pytest.approx(H_grid, rel=2e-2)


def test_series_csv(tmp_path):
    s = DiagnosticsSeries()
    s.append(0.0, 1.0, -2.0, -1.0, 0.0, 0.0, [1.0] * len(CASIMIR_BATTERY))
    s.append(0.5, 1.1, -2.1, -1.0, 0.1, 0.0, [1.0] * len(CASIMIR_BATTERY))
    with pytest.raises(ValueError):
        s.append(0.5, 1.0, -2.0, -1.0, 0.0, 0.0, [1.0] * len(CASIMIR_BATTERY))
    with pytest.raises(ValueError):
        s.append(0.7, math.nan, -2.0, -1.0, 0.0, 0.0, [1.0] * len(CASIMIR_BATTERY))
    path = tmp_path / "series.csv"
    s.to_csv(path)
    cols, data = read_table(path)
    assert tuple(cols) == SERIES_COLUMNS
    assert data.shape == (2, len(SERIES_COLUMNS))
    assert s.summary()["H_drift"] == pytest.approx(0.0, abs=1e-15)
