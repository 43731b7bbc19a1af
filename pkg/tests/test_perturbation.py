import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kingstab.errors import FlowBlowup
from kingstab.functionals import CASIMIR_BATTERY
from kingstab.perturbation import (
    EnergyGenerator, OddBumpGenerator, bracket_with_f0, fd_grad, flow, flow_points,
    reduced_bracket, transport, verify_S_membership,
)
from kingstab.sim import sample_steady_state


def points(model, n=200, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.02, 0.98, n) * model.R
    w = rng.uniform(-0.9, 0.9, n) * model.w_max
    L = rng.uniform(0.0, 0.3, n) * model.L_max
    return r, w, L


@pytest.fixture(scope="module")
def gen(model):
    return OddBumpGenerator(model)


def test_generator_is_odd_and_compactly_supported(model, gen):
    r, w, L = points(model)
    assert np.array_equal(gen(r, -w, L), -gen(r, w, L))
    E = model.energy(r, w, L)
    outside = E >= gen.E_cut
    assert np.all(gen(r[outside], w[outside], L[outside]) == 0.0)
    assert np.any(gen(r, w, L) != 0.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_random_generators_are_odd(model, seed):
    g = OddBumpGenerator.random(model, np.random.default_rng(seed))
    r, w, L = points(model, 50, seed % 1000)
    assert np.allclose(g(r, -w, L), -g(r, w, L), rtol=0, atol=1e-300)


def test_analytic_gradient_matches_differences(model, gen):
    r, w, L = points(model, 100)
    hr, hw = gen.grad(r, w, L)
    fr, fw = fd_grad(gen, r, w, L)
    scale = np.max(np.abs(hr)) + np.max(np.abs(hw))
    assert np.max(np.abs(hr - fr)) < 1e-7 * scale
    assert np.max(np.abs(hw - fw)) < 1e-7 * scale


def test_transport_matches_bracket_with_energy(model, gen):
    r, w, L = points(model, 100)
    # {E, h} = -D h
    br = reduced_bracket(EnergyGenerator(model), gen)(r, w, L)
    assert np.allclose(br, -transport(model, gen, r, w, L), rtol=1e-6, atol=1e-9)
    assert np.allclose(gen.transport(r, w, L), transport(model, gen, r, w, L), rtol=1e-6, atol=1e-9)


def test_bracket_with_f0_is_even(model, gen):
    r, w, L = points(model, 100)
    g = bracket_with_f0(model, gen)
    assert np.allclose(g(r, -w, L), g(r, w, L), rtol=1e-10, atol=1e-14)


def test_flow_is_reversible_and_conserves_generator(model, gen):
    r, w, L = points(model, 300)
    r1, w1, _ = flow_points(model, gen, r, w, L, 0.2)
    r2, w2, _ = flow_points(model, gen, r1, w1, L, -0.2)
    assert np.max(np.abs(r2 - r)) < 1e-9 * model.R
    assert np.max(np.abs(w2 - w)) < 1e-9 * model.w_max
    h0 = gen(r, w, L)
    assert np.max(np.abs(gen(r1, w1, L) - h0)) < 1e-9 * np.max(np.abs(h0))


def test_flow_preserves_area(model, gen):
    r, w, L = points(model, 50, seed=2)
    eps = 1e-6
    def image(dr, dw):
        a, b, _ = flow_points(model, gen, r + dr, w + dw, L, 0.3)
        return a, b
    ar, aw = image(eps, 0.0)
    br, bw = image(-eps, 0.0)
    cr, cw = image(0.0, eps)
    dr_, dw_ = image(0.0, -eps)
    det = ((ar - br) * (cw - dw_) - (aw - bw) * (cr - dr_)) / (4 * eps * eps)
    assert np.allclose(det, 1.0, atol=1e-5)


def test_energy_flow_keeps_f_values(model):
    ens = sample_steady_state(model, 2000, seed=8)
    moved = flow(ens, EnergyGenerator(model), 0.05, model)
    E0 = model.energy(ens.r, ens.w, ens.L)
    E1 = model.energy(moved.r, moved.w, moved.L)
    assert np.max(np.abs(E1 - E0)) < 1e-9
    assert np.array_equal(moved.f_value, ens.f_value)


def test_membership_report(model, gen):
    ref = sample_steady_state(model, 4000, seed=9)
    ens = flow(ref, gen, 0.1, model)
    rep = verify_S_membership(ens, ref, model)
    assert rep["passed"] and rep["sorted_values_equal"] and rep["sup_within"]
    assert len(rep["casimirs"]) == len(CASIMIR_BATTERY)
    tampered = ens.copy()
    tampered.f_value[0] *= 0.5
    assert not verify_S_membership(tampered, ref, model)["passed"]


def test_runaway_flow_raises(model):
    wild = OddBumpGenerator(model, amplitude=1e4)
    r, w, L = points(model, 20)
    with pytest.raises(FlowBlowup):
        flow_points(model, wild, r, w, L, 10.0)
