import math

import numpy as np
import pytest
from scipy import stats

from kingstab.errors import StepBlowup
from kingstab.functionals import ParticleEnsemble, energy
from kingstab.sim import (
    ShellState, SimConfig, dynamical_time, read_checkpoint, run, sample_steady_state,
    write_checkpoint,
)


def single(r, w, L, mass=1e-12):
    return ParticleEnsemble([r], [w], [L], [1.0], [mass])


def test_kepler_radial_period(kepler):
    # E = -1/2, M = 1: radial period 2 pi; start at pericentre
    E, L = -0.5, 0.5
    disc = math.sqrt(1 + 2 * E * L)
    rm = (1 - disc) / (-2 * E)
    errors = []
    for n in (10_000, 20_000):
        ens = single(rm, 0.0, L)
        st = ShellState(ens, frozen_model=kepler)
        for _ in range(n):
            st.step(2 * math.pi / n)
        assert ens.r[0] == pytest.approx(rm, rel=1e-6)
        errors.append(abs(ens.w[0]))
    assert errors[1] < 1e-3
    # second order in dt
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)


def test_radial_orbit_through_centre(model):
    # L = 0: the marker falls through the centre and comes back out
    ens = single(0.9 * model.R, 0.0, 0.0)
    st = ShellState(ens, frozen_model=model)
    E0 = model.energy(ens.r, ens.w, ens.L)[0]
    passed_centre = False
    for _ in range(2000):
        w_before = ens.w[0]
        st.step(5e-4)
        assert ens.r[0] >= 0.0
        passed_centre |= w_before < 0 < ens.w[0] and ens.r[0] < 0.1 * model.R
    assert passed_centre
    assert model.energy(ens.r, ens.w, ens.L)[0] == pytest.approx(E0, rel=1e-5)


def test_frozen_field_is_time_reversible(model):
    ens = sample_steady_state(model, 2000, seed=11)
    start = ens.copy()
    st = ShellState(ens, frozen_model=model)
    for _ in range(200):
        st.step(1e-3)
    ens.w *= -1
    st = ShellState(ens, frozen_model=model)
    for _ in range(200):
        st.step(1e-3)
    ens.w *= -1
    assert np.max(np.abs(ens.r - start.r)) < 1e-10 * model.R
    assert np.max(np.abs(ens.w - start.w)) < 1e-10 * model.w_max


def test_two_shell_energy_conservation():
    ens = ParticleEnsemble([0.5, 1.0], [0.3, -0.2], [0.1, 0.4], [1.0, 1.0], [0.4, 0.6])
    H0 = energy(ens)[2]
    st = ShellState(ens)
    crossed = False
    for _ in range(20_000):
        st.step(2e-4)
        crossed |= ens.r[0] > ens.r[1]
    assert crossed
    assert energy(ens)[2] == pytest.approx(H0, rel=1e-4)


def test_sampling_matches_mass_profile(model):
    ens = sample_steady_state(model, 20_000, seed=12)
    # 20 equal-mass radial bins
    edges = np.interp(np.linspace(0, model.M, 21), model.m, model.r)
    counts, _ = np.histogram(ens.r, bins=edges)
    chi2, p = stats.chisquare(counts)
    assert p > 1e-3
    assert np.all(model.energy(ens.r, ens.w, ens.L) < model.E0)
    assert np.allclose(ens.f_value, model.f0_of_energy(model.energy(ens.r, ens.w, ens.L)))


def test_sampling_is_seeded(model):
    a = sample_steady_state(model, 1000, seed=5)
    b = sample_steady_state(model, 1000, seed=5)
    assert np.array_equal(a.r, b.r) and np.array_equal(a.w, b.w)


def test_dynamical_time_frozen(model):
    assert dynamical_time(model, 0.00504) == pytest.approx(0.34008, rel=1e-3)


def test_run_invariants(model):
    ens = sample_steady_state(model, 2000, seed=13)
    T = dynamical_time(model, float(np.median(ens.L)))
    series = run(ens, model, SimConfig(dt=T / 100, horizon=T, N=2000, output_stride=10))
    summary = series.summary()
    assert summary["L_invariant"] and summary["f_sorted_invariant"] and summary["mass_invariant"]
    assert summary["H_drift"] < 1e-3
    assert len(series) == 11


def test_config_validation(model):
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, horizon=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, horizon=1.0, N=10)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, horizon=1.0, field_update="lazy")
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, horizon=1.0, softening=1.0).validate_for(model)


def test_escape_raises_with_time(model):
    ens = single(0.1, 100.0, 0.01)
    st = ShellState(ens)
    with pytest.raises(StepBlowup) as info:
        st.step(1.0, r_box=10.0)
    assert info.value.time == pytest.approx(1.0)


def test_checkpoint_round_trip(model, tmp_path):
    ens = sample_steady_state(model, 1000, seed=14)
    path = tmp_path / "state.ckpt"
    write_checkpoint(path, ens, 1.25, 42)
    back, t, k = read_checkpoint(path)
    assert t == 1.25 and k == 42
    for name in ("r", "w", "L", "f_value", "weight"):
        assert np.array_equal(getattr(back, name), getattr(ens, name))
    path.write_bytes(b"garbage" * 10)
    with pytest.raises(ValueError):
        read_checkpoint(path)


def test_resume_matches_uninterrupted_run(model, tmp_path):
    base = sample_steady_state(model, 1000, seed=15)
    dt = 2e-3
    full = base.copy()
    st = ShellState(full)
    for _ in range(20):
        st.step(dt)
    part = base.copy()
    st = ShellState(part)
    for _ in range(10):
        st.step(dt)
    write_checkpoint(tmp_path / "c.ckpt", part, st.t, 10)
    resumed, t, _ = read_checkpoint(tmp_path / "c.ckpt")
    st = ShellState(resumed, t=t)
    for _ in range(10):
        st.step(dt)
    assert np.array_equal(resumed.r, full.r) and np.array_equal(resumed.w, full.w)
