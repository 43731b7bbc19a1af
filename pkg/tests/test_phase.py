import math

import numpy as np
import pytest
from scipy import integrate

from kingstab.phase import OrbitQuadrature, PhaseFunction, SupportQuadrature, cumulative_matrix, gauss01


def reduced(x, v):
    r = np.linalg.norm(x, axis=1)
    w = np.sum(x * v, axis=1) / r
    L = np.sum(np.cross(x, v) ** 2, axis=1)
    return r, w, L


def uniform_ball(rng, n, radius):
    p = rng.normal(size=(n, 3))
    p /= np.linalg.norm(p, axis=1)[:, None]
    return p * radius * rng.uniform(0, 1, n)[:, None] ** (1 / 3)


def test_six_dimensional_measure_by_monte_carlo():
    # int g(r, w, L) dx dv over |x| < a, |v| < b equals 4 pi^2 int g dr dw dL over the image
    rng = np.random.default_rng(5)
    a, b, n = 1.0, 1.5, 1_000_000
    x = uniform_ball(rng, n, a)
    v = uniform_ball(rng, n, b)
    r, w, L = reduced(x, v)
    g = np.exp(-r * r - 0.5 * w * w - L)
    vol = (4 / 3 * math.pi) ** 2 * a**3 * b**3
    mc = vol * g.mean()
    err = vol * g.std() / math.sqrt(n)

    # image of the two balls: 0 < r < a, w^2 + L / r^2 < b^2
    def inner(L, w, r):
        return math.exp(-r * r - 0.5 * w * w - L)

    val, _ = integrate.tplquad(inner, 0, a, lambda r: -b, lambda r: b,
                               lambda r, w: 0.0, lambda r, w: r * r * (b * b - w * w),
                               epsrel=1e-10)
    assert abs(mc - 4 * math.pi**2 * val) < 4 * err


def test_velocity_measure_by_monte_carlo():
    # at fixed x: int g dv = (pi / r^2) int g dw dL
    rng = np.random.default_rng(6)
    r0, b, n = 0.7, 2.0, 1_000_000
    x = np.tile([0.0, 0.0, r0], (n, 1))
    v = uniform_ball(rng, n, b)
    _, w, L = reduced(x, v)
    g = np.exp(-w * w - L)
    vol = 4 / 3 * math.pi * b**3
    mc = vol * g.mean()
    err = vol * g.std() / math.sqrt(n)
    val, _ = integrate.dblquad(lambda L, w: math.exp(-w * w - L), -b, b, 0.0,
                               lambda w: r0 * r0 * (b * b - w * w), epsrel=1e-12)
    assert abs(mc - math.pi / r0**2 * val) < 4 * err


def test_gauss_and_cumulative_rules():
    x, w = gauss01(12)
    assert np.sum(w) == pytest.approx(1.0, rel=1e-14)
    assert np.sum(w * x**7) == pytest.approx(1 / 8, rel=1e-13)
    C = cumulative_matrix(12)
    assert np.allclose(C @ np.cos(x), np.sin(x), atol=1e-13)


def test_support_rule_reproduces_the_model(model):
    q = SupportQuadrature(model)
    f0 = model.f0_of_energy(q.energy)
    assert q.integrate(f0) == pytest.approx(model.M, rel=1e-10)
    assert np.allclose(q.density(f0), model.density_at(q.r_nodes), rtol=1e-10)
    m_nodes = q.enclosed_mass(q.density(f0))
    assert np.allclose(m_nodes, model.mass_at(q.r_nodes), rtol=1e-9)
    # ||grad U0||^2 = 4 pi int m^2 / r^2 dr, inside plus the Kepler tail M^2 / R
    r = np.linspace(1e-9, model.R, 200_001)
    inside = integrate.simpson(model.mass_at(r) ** 2 / r**2, x=r)
    expect = 4 * math.pi * (inside + model.M**2 / model.R)
    assert q.field_energy(q.density(f0)) == pytest.approx(expect, rel=1e-7)


def test_phase_function_integrates(model):
    q = SupportQuadrature(model)
    pf = PhaseFunction.sample(q, lambda r, w, L: model.f0_of_energy(model.energy(r, w, L)))
    assert pf.integrate() == pytest.approx(model.M, rel=1e-10)


def test_orbit_rule_volume(model):
    # phase volume of {E <= E_top, L >= L_lo} two ways
    E_top, L_lo = model.E0 - 0.1, 1e-3
    oq = OrbitQuadrature(model, E_top, L_lo)
    q = SupportQuadrature(model, E_top, n_r=96, n_s=64, n_c=64)
    # the support rule needs a smooth integrand; compare a weight vanishing at E_top
    g_oq = (E_top - oq.E) ** 2 * (oq.L >= L_lo)
    g_sq = (E_top - q.energy) ** 2 * (q.L >= L_lo)
    assert oq.integrate(g_oq, g_oq) == pytest.approx(q.integrate(g_sq), rel=2e-3)


def test_orbit_rule_cumulative_ends_at_full_orbit(model):
    oq = OrbitQuadrature(model, model.E0 - 0.1, 1e-3, n_L=6, n_E=6)
    vals = np.ones(oq.shape)
    cum = oq.cumulative(vals)
    full = oq.full_orbit(vals)
    # inner nodes run from r_L towards pericentre, outer ones from r_L to apocentre
    assert np.all(np.diff(cum[..., 0, :], axis=-1) < 0)
    assert np.all(np.diff(cum[..., 1, :], axis=-1) > 0)
    assert np.all(cum[..., 1, -1] < full) and np.allclose(cum[..., 1, -1], full, rtol=1e-2)
