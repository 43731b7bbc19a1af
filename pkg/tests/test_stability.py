import math

import numpy as np
import pytest

from kingstab.errors import OrthogonalityViolation, ParityViolation, SupportViolation
from kingstab.perturbation import OddBumpGenerator, bracket_with_f0
from kingstab.phase import SupportQuadrature
from kingstab.stability import (
    CutoffRegion, antonov_bound_check, appendix_identity, bracket_decomposition_check,
    bracket_potential_derivative, check_odd, field_energy_from_derivative, quadratic_form,
    reconstruct_h, reconstruction_error, second_moment_density, weak_identity_check,
)


@pytest.fixture(scope="module")
def gen(model):
    return OddBumpGenerator(model)


@pytest.fixture(scope="module")
def rec(model, gen):
    return reconstruct_h(model, bracket_with_f0(model, gen))


def test_cutoff_defaults(model):
    cut = CutoffRegion.default(model)
    assert cut.eps_E == pytest.approx(0.1)
    assert cut.eps_L == pytest.approx(1e-2 * model.M * model.R)
    with pytest.raises(ValueError):
        CutoffRegion(0.0, 1e-3)


def test_quadratic_form_of_bracket_is_positive(model, gen):
    g = bracket_with_f0(model, gen)
    form = quadratic_form(model, g, SupportQuadrature(model, gen.E_cut), probe=False)
    assert form.kinetic > form.field > 0
    assert form.value > 0


def test_field_term_two_routes(model, gen):
    q = SupportQuadrature(model, gen.E_cut)
    form = quadratic_form(model, bracket_with_f0(model, gen), q, probe=False)
    _, up = bracket_potential_derivative(model, gen, q)
    assert field_energy_from_derivative(q, up) / (8 * math.pi) == pytest.approx(form.field, rel=1e-6)


def test_support_probe(model):
    with pytest.raises(SupportViolation):
        quadratic_form(model, lambda r, w, L: np.ones_like(r))


def test_parity_probe(model):
    with pytest.raises(ParityViolation):
        check_odd(model, lambda r, w, L: w**2 + r)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_antonov_bound(model, seed):
    g = OddBumpGenerator.random(model, np.random.default_rng(seed))
    res = antonov_bound_check(model, g)
    assert res.passed
    assert res.rhs > 0


@pytest.mark.parametrize("frac", [0.05, 0.5, 0.95])
def test_second_moment_identity(model, frac):
    r = frac * model.R
    assert second_moment_density(model, r) == pytest.approx(float(model.density_at(r)), rel=1e-8)
    assert second_moment_density(model, 1.2 * model.R) == 0.0


def test_appendix_rows(model):
    rows = appendix_identity(model, np.linspace(0.1, 0.9, 5) * model.R)
    assert max(row[3] for row in rows) < 1e-6


def test_nested_bracket_identity(model):
    worst, _, _ = bracket_decomposition_check(model, n=200)
    assert worst < 1e-6


def test_reconstruction_round_trip(model, gen, rec):
    assert reconstruction_error(rec, gen) < 1e-3
    times = rec.oq.full_orbit(np.ones(rec.oq.shape))
    assert np.max(np.abs(rec.orthogonality) / (rec.scale * times)) < 1e-6


def test_reconstruction_rejects_non_brackets(model, gen):
    cut = gen.E_cut

    def positive(r, w, L):
        E = model.energy(r, w, L)
        return np.where(E < cut, (cut - E) ** 2, 0.0)

    with pytest.raises(OrthogonalityViolation):
        reconstruct_h(model, positive)


@pytest.mark.parametrize("psi", [
    lambda r, w, L: np.ones_like(r),
    lambda r, w, L: r * w,
    lambda r, w, L: w**3 + r**2 * np.exp(-L),
])
def test_weak_identity(model, rec, psi):
    lhs, rhs, residual = weak_identity_check(model, rec, psi)
    assert residual < 1e-3
