"""One test per acceptance criterion; each prints a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also printed in the terminal summary of any run.
"""

import time

import pytest

from kingstab import checks
from kingstab.functionals import energy_scale

RESULTS = []


def report(number, title, rows, extra=""):
    ok = all(r.passed for r in rows)
    body = "; ".join(f"{r.name}: {r.lhs:.10g} vs {r.rhs:.10g} (tol {r.tolerance:.3g})" for r in rows)
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {body}{extra}"
    RESULTS.append(line)
    print("\n" + line)
    failed = [r.name for r in rows if not r.passed]
    assert ok, f"criterion {number} failed rows: {failed}"


def timed_row(name, start, limit):
    elapsed = time.perf_counter() - start
    return checks._row(name, elapsed, limit, 0.0, 1.0, elapsed < limit)


def test_criterion_1_king_build():
    _, rows = checks.check_king_build()
    report(1, "steady state build", rows)


def test_criterion_2_orbit_geometry(model):
    start = time.perf_counter()
    rows = checks.check_kepler_orbits(n=20) + checks.check_well_convexity(model, n=20)
    rows.append(timed_row("runtime_s", start, 10.0))
    report(2, "orbit geometry", rows)


def test_criterion_3_second_moment_identity(model):
    report(3, "second moment identity on 50 radii", checks.check_appendix_identity(model, n=50))


def test_criterion_4_antonov(model):
    start = time.perf_counter()
    rows = checks.check_antonov(model, n=50)
    rows.append(timed_row("runtime_s", start, 120.0))
    report(4, "coercivity bound on 50 generators", rows)


def test_criterion_5_reconstruction(model):
    report(5, "bracket reconstruction on 10 generators", checks.check_reconstruction(model, n_gen=10))


def test_criterion_6_functional_identities(model):
    report(6, "distance identities and Casimirs", checks.check_functional_identities(model))


def test_criterion_7_local_minimizer(model):
    rows = checks.check_local_minimizer(model)
    d = rows[0].detail
    extra = (f" | ratios {', '.join(f'{x:.4g}' for x in d['ratios'])},"
             f" small-amplitude limit {d['small_amplitude_ratio']:.4g}, monotone {d['monotone_in_s']}")
    report(7, "energy-Casimir minimizer sweep", rows, extra)


@pytest.mark.slow
def test_criterion_8_particle_stability(model):
    rows = checks.check_long_time_stability(model, log=print)
    bg = rows[0].detail
    grid = ", ".join(f"{k} {v:.3g}" for k, v in bg["refinement"].items())
    extra = (f" | scale {energy_scale(model):.4g}, grid d(0) by resolution {grid},"
             f" paired background sup/d(0) {bg['paired_sup_ratio']:.3g} (diagnostic)")
    report(8, "particle runs over 10 dynamical times", rows, extra)
