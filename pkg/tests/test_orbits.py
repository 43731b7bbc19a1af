import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from kingstab import orbits
from kingstab.errors import NoOrbit
from kingstab.orbits import EffectivePotential


def kepler_roots(E, L, M=1.0):
    disc = math.sqrt(M * M + 2 * E * L)
    return (M - disc) / (-2 * E), (M + disc) / (-2 * E)


def midpoint_time(profile, E, L, n=1_000_000):
    """Naive oracle: midpoint rule on a slightly clipped interval plus end caps."""
    rm, rp = orbits.turning_points(profile, E, L)
    psi = EffectivePotential(profile, L)
    d = 1e-4 * (rp - rm)
    r = np.linspace(rm + d, rp - d, n + 1)
    mid = 0.5 * (r[1:] + r[:-1])
    body = np.sum((r[1] - r[0]) / np.sqrt(2 * (E - psi(mid))))
    # near a simple turning point int_0^d dx / sqrt(2 |Psi'| x) = sqrt(2 d / |Psi'|)
    caps = sum(math.sqrt(2 * d / abs(float(psi.derivative(x)))) for x in (rm, rp))
    return body + caps


def qaws_time(profile, E, L):
    """QUADPACK rule with the (r - r_-)^(-1/2) (r_+ - r)^(-1/2) weight built in."""
    rm, rp = orbits.turning_points(profile, E, L)
    psi = EffectivePotential(profile, L)

    def smooth(r):
        gap = E - float(psi(r))
        if gap <= 1e-13 * abs(E):
            # endpoint limit of (r - r_-)(r_+ - r) / (E - Psi)
            end = rm if r - rm < rp - r else rp
            return math.sqrt((rp - rm) / (2 * abs(float(psi.derivative(end)))))
        return math.sqrt((r - rm) * (rp - r) / (2 * gap))

    val, _ = integrate.quad(smooth, rm, rp, weight="alg", wvar=(-0.5, -0.5), epsabs=0,
                            epsrel=1e-12, limit=200)
    return val


@given(st.floats(-0.9, -0.1), st.floats(0.02, 0.98))
@settings(max_examples=60, deadline=None)
def test_kepler_turning_points(kepler, E, frac):
    L = frac / (-2 * E)
    rm, rp = orbits.turning_points(kepler, E, L)
    em, ep = kepler_roots(E, L)
    assert rm == pytest.approx(em, rel=1e-10)
    assert rp == pytest.approx(ep, rel=1e-10)


@pytest.mark.parametrize("E,frac", [(-0.5, 0.5), (-0.2, 0.1), (-0.8, 0.9)])
def test_kepler_radial_time(kepler, E, frac):
    L = frac / (-2 * E)
    t = orbits.radial_time_integral(kepler, E, L)
    assert t == pytest.approx(math.pi / (-2 * E) ** 1.5, rel=1e-6)


def test_midpoint_oracle_on_kepler(kepler):
    E, L = -0.5, 0.5
    exact = math.pi / (-2 * E) ** 1.5
    assert midpoint_time(kepler, E, L) == pytest.approx(exact, rel=1e-6)
    assert orbits.radial_time_integral(kepler, E, L) == pytest.approx(
        midpoint_time(kepler, E, L), rel=1e-6)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("frac", [0.01, 0.3, 0.5, 0.9])
def test_radial_time_against_weighted_quadrature(model, frac):
    L = 1e-3
    _, pmin, _ = orbits.find_r_L(model, L)
    E = pmin + frac * (model.E0 - pmin)
    # the weighted rule itself only reaches ~1e-8 here: its smooth factor is 0/0 at the ends
    assert orbits.radial_time_integral(model, E, L) == pytest.approx(
        qaws_time(model, E, L), rel=1e-7)
    assert orbits.radial_time_integral(model, E, L) == pytest.approx(
        midpoint_time(model, E, L), rel=1e-6)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
@settings(max_examples=40, deadline=None)
def test_orbit_geometry_properties(model, a, b):
    L = a * 0.5 * model.L_max
    rl, pmin, second = orbits.find_r_L(model, L)
    E = pmin + b * (model.E0 - pmin)
    rm, rp = orbits.turning_points(model, E, L)
    psi = EffectivePotential(model, L)
    assert rm < rl < rp
    assert second > 0
    scale = abs(E)
    assert abs(psi(rm) - E) < 1e-12 * scale / max(rm, 1e-3)
    assert abs(psi(rp) - E) < 1e-12 * scale
    assert abs(psi.derivative(rl)) < 1e-8 * abs(psi.derivative(rp))


def test_line_integral_of_one_is_time(model):
    L = 2e-3
    _, pmin, _ = orbits.find_r_L(model, L)
    E = pmin + 0.3 * (model.E0 - pmin)
    t = orbits.radial_time_integral(model, E, L)
    t1 = orbits.orbit_line_integral(model, lambda r, w, l: np.ones_like(r), E, L)
    assert t1 == pytest.approx(t, rel=1e-12)
    rm, rp = orbits.turning_points(model, E, L)
    # int dr = int w (dr / w)
    span = orbits.orbit_line_integral(model, lambda r, w, l: w, E, L)
    assert span == pytest.approx(rp - rm, rel=1e-9)


def test_partial_integral_is_monotone(model):
    L = 2e-3
    _, pmin, _ = orbits.find_r_L(model, L)
    E = pmin + 0.5 * (model.E0 - pmin)
    rm, rp = orbits.turning_points(model, E, L)
    ups = np.linspace(rm, rp, 7)
    vals = [orbits.orbit_line_integral(model, None, E, L, upper=u) for u in ups]
    assert vals[0] == pytest.approx(0.0, abs=1e-14)
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] == pytest.approx(orbits.radial_time_integral(model, E, L), rel=1e-12)


@pytest.mark.parametrize("depth", [1e-9, 1e-7, 1e-5])
def test_near_circular_orbit_limit(model, depth):
    L = 2e-3
    _, pmin, second = orbits.find_r_L(model, L)
    t = orbits.radial_time_integral(model, pmin + depth, L)
    # the anharmonic correction is linear in the depth of the orbit
    assert t == pytest.approx(math.pi / math.sqrt(second), rel=1e-6 + depth)


def test_shallow_well_switch_is_continuous(model):
    L = 2e-3
    _, pmin, second = orbits.find_r_L(model, L)
    base = math.pi / math.sqrt(second)
    scale = abs(pmin) + abs(pmin)
    slopes = []
    for f in (0.95, 1.05):
        de = f * orbits.SHALLOW_WELL * scale
        slopes.append((orbits.radial_time_integral(model, pmin + de, L) / base - 1) / de)
    assert slopes[0] == pytest.approx(slopes[1], rel=1e-3)


def test_no_orbit_below_well(model):
    L = 2e-3
    _, pmin, _ = orbits.find_r_L(model, L)
    with pytest.raises(NoOrbit):
        orbits.turning_points(model, pmin - 1e-3, L)
    with pytest.raises(NoOrbit):
        orbits.radial_time_integral(model, 0.1, L)


def test_orbit_table_columns(model, tmp_path):
    E, L = orbits.orbit_grid(model, model.E0 - 0.1, 1e-3, 4, 3)
    table = orbits.orbit_table(model, E, L)
    assert table.shape == (12, 6)
    assert np.all(table[:, 2] < table[:, 4]) and np.all(table[:, 4] < table[:, 3])
    path = tmp_path / "orbits.csv"
    orbits.write_orbit_csv(path, table)
    lines = path.read_text().splitlines()
    assert lines[1] == "E,L,r_minus,r_plus,r_L,time_integral"
    assert len(lines) == 14


def test_well_convexity_on_grid(model):
    E, L = orbits.orbit_grid(model, model.E0 - 0.1, 1e-2 * model.M * model.R, 20, 20)
    for l in np.unique(L):
        assert orbits.find_r_L(model, l)[2] > 0
