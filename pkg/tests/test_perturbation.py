import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hoplab.ensemble import CoefficientField, RandomPotential, deterministic_coefficients, parse_law, \
    sample_coefficients
from hoplab.errors import ConfigError, NotInRegime
from hoplab.limits import antiderivative_energy
from hoplab.perturbation import (CharacteristicSeries, SeriesCalibration, _Grid, calibrate, phi, phi_root,
                                 regularized_kernel, term_a)
from hoplab.profiles import make_bump, normalized, parse_profile, psi, zero
from hoplab.resonances import Box, find_resonances, free_pair, resonant_pair
from hoplab.sobolev import sample_seed

INT_PSI = 0.4439938161680794
PAIR = free_pair()
RADE = parse_law("rademacher")


def _rand(q, N, seed):
    return RandomPotential(zero(), q, sample_coefficients(RADE, N, 1, seed))


@given(st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False).filter(lambda z: abs(z) > 1e-3))
def test_kernel_vanishes_on_diagonal(lam):
    assert regularized_kernel(lam, 0.0) == 0


@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_kernel_slope_at_zero(lam):
    h = 1e-7
    assert abs(regularized_kernel(lam, h) / h + 0.5) < 1e-5 * max(1, abs(lam))


@given(st.floats(0, 5))
def test_kernel_at_zero_energy(r):
    assert regularized_kernel(0.0, r) == pytest.approx(-r / 2, abs=1e-15)


@given(st.complex_numbers(max_magnitude=1e-2, allow_nan=False, allow_infinity=False), st.floats(1e-3, 2.0))
def test_kernel_series_branch_is_continuous(lam, r):
    lam = lam + 1e-6
    exact = 1j * np.expm1(1j * lam * r) / (2 * lam)
    assert abs(regularized_kernel(lam, r) - exact) < 1e-9 * max(abs(exact), 1e-12)


@pytest.mark.parametrize("lam", [0.05 + 0.02j, 0.2 - 0.1j, 1.3 + 0.4j, 3.0])
def test_grid_kernel_against_quad(lam):
    g = _Grid(np.linspace(-1, 1, 9), 0.25)
    vals = np.cos(3 * g.x) + 1j * g.x**2
    out = g.apply_kernel(lam, vals)
    i = 37
    x = g.x[i]

    def part(fn, a, b):
        return quad(lambda y: fn(regularized_kernel(lam, abs(x - y)) * (np.cos(3 * y) + 1j * y * y)), a, b,
                    epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    ref = sum(part(fn, a, b) * c for fn, c in ((np.real, 1), (np.imag, 1j)) for a, b in ((-1, x), (x, 1)))
    assert abs(out[i] - ref) < 1e-13


def test_a0_free_pair_direct_formula():
    q = normalized(psi())
    V = _rand(q, 12, 3)
    assert term_a(0, V, PAIR, 0j) == pytest.approx(V.coeffs.values.sum() / (2 * 12), abs=1e-15)


def test_a0_vanishes_for_mean_zero_q_with_constant_fg():
    V = _rand(make_bump("psi_prime"), 20, 1)
    assert abs(term_a(0, V, PAIR, 0j)) < 1e-16


def test_multilinearity():
    V = _rand(psi(), 10, 2)
    V2 = V.with_coeffs(V.coeffs.scaled(2.0))
    a = CharacteristicSeries(PAIR, V, K=1).terms(0.1 - 0.05j)
    b = CharacteristicSeries(PAIR, V2, K=1).terms(0.1 - 0.05j)
    assert abs(b[0] - 2 * a[0]) < 1e-12 * abs(a[0])
    assert abs(b[1] - 4 * a[1]) < 1e-12 * abs(a[1])


def test_zero_field_root_is_lambda0():
    V = RandomPotential(zero(), psi(), CoefficientField(1, 5, np.zeros(11)))
    s = CharacteristicSeries(PAIR, V, K=2)
    assert phi(s, 0.3j) == pytest.approx(0.3j, abs=1e-16)
    assert phi_root(s, 0j, 0.5) == 0


def test_tiny_potential_first_order():
    eps = 1e-3
    V = RandomPotential(zero(), psi().scaled(eps), deterministic_coefficients("all_ones", 1)).with_coeffs(
        CoefficientField(1, 1, np.array([0.0, 1.0, 0.0])))
    root = CharacteristicSeries(PAIR, V, K=0).root()
    assert abs(root + 0.5j * eps * INT_PSI) < 1e-15
    solver = find_resonances(V, Box.around(0j, 0.05))[0].lam
    assert abs(root - solver) < 4 * eps**2


def test_case_three_second_term_limit():
    # N^2 a_1 concentrates at the integral of Q^2 with O(N^-1/2) fluctuations
    q = make_bump("psi_prime")
    target = antiderivative_energy(q).real
    vals = np.array([80 * 80 * CharacteristicSeries(PAIR, _rand(q, 80, sample_seed(5, i)), K=1).terms(0j)[1]
                     for i in range(8)])
    assert np.max(np.abs(vals.imag)) < 1e-12 * target
    assert np.max(np.abs(vals.real / target - 1)) < 0.15
    assert abs(vals.real.mean() / target - 1) < 0.05


def test_series_root_matches_solver_within_next_term():
    V = _rand(psi(), 20, sample_seed(2, 0))
    s = CharacteristicSeries(PAIR, V, K=2)
    root = s.root()
    solver = min((r.lam for r in find_resonances(V, Box.around(0j, 0.5))), key=abs)
    a3 = abs(CharacteristicSeries(PAIR, V, K=3).terms(root)[3])
    assert abs(root - solver) < 10 * a3


def test_roots_stay_in_the_isolation_disk():
    N = 40
    radius = 4 * N ** -0.25
    inside = 0
    for i in range(100):
        try:
            root = CharacteristicSeries(PAIR, _rand(psi(), N, sample_seed(9, i)), K=0).root(radius)
        except NotInRegime:
            continue
        inside += abs(root) < radius
    assert inside >= 95


def test_calibration_tail():
    cal = SeriesCalibration(2.0, 3)
    assert cal.tail(0.1, 1) == pytest.approx(0.2**3 / 0.8)
    Vs = [_rand(psi(), 10, sample_seed(1, i)) for i in range(3)]
    c = calibrate(Vs, PAIR, 1)
    for V in Vs:
        s = CharacteristicSeries(PAIR, V, K=1)
        a = s.terms(0j, K=2)
        assert np.all(np.abs(a) <= (c.C * s.h) ** np.arange(1, 4) * (1 + 1e-12))
    with pytest.raises(ConfigError):
        calibrate([RandomPotential(zero(), psi(), CoefficientField(1, 3, np.zeros(7)))], PAIR, 1)


def test_higher_terms_need_free_background():
    pair = resonant_pair(parse_profile("lincomb(-8*psi)"), 1.14j)
    V = _rand(psi(), 8, 0)
    CharacteristicSeries(pair, V, K=0).root(radius=1.0)
    with pytest.raises(ConfigError):
        CharacteristicSeries(pair, V, K=1)
    with pytest.raises(ConfigError):
        CharacteristicSeries(PAIR, V, K=5)


def test_not_in_regime_when_disk_misses():
    V = _rand(normalized(psi()), 4, 0).with_coeffs(deterministic_coefficients("all_ones", 4))
    with pytest.raises(NotInRegime):
        CharacteristicSeries(PAIR, V, K=0).root(radius=0.1)
