import warnings

import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from hoplab.ensemble import RandomPotential, parse_law, sample_coefficients
from hoplab.errors import ConfigError
from hoplab.limits import (antiderivative_energy, case_classifier, constant_L, constants_json, constants_report,
                           effective_potential, sigma2_corollary, sigma_matrix)
from hoplab.perturbation import CharacteristicSeries
from hoplab.profiles import make_bump, parse_profile, psi, zero
from hoplab.resonances import Box, find_resonances, free_pair, resonant_pair
from hoplab.sobolev import sample_seed

INT_PSI_SQ = 0.1330861208449943
PAIR = free_pair()
PSI_PRIME = make_bump("psi_prime")


def _one(x):
    return np.ones_like(x)


def test_sigma_real_constant():
    S = sigma_matrix(lambda x: 0.5 * _one(x))
    assert np.allclose(S.entries, [[0.5, 0], [0, 0]], atol=1e-15)
    assert S.degenerate and S.alpha == float("inf")


def test_sigma_imaginary_constant():
    S = sigma_matrix(lambda x: 0.5j * _one(x))
    assert np.allclose(S.entries, [[0, 0], [0, 0.5]], atol=1e-15)
    assert S.alpha == 0.0


def test_sigma_mixed_polynomial():
    S = sigma_matrix(lambda x: x + 1j * x**2)
    assert S.entries[0, 0] == pytest.approx(2 / 3, rel=1e-14)
    assert S.entries[1, 1] == pytest.approx(2 / 5, rel=1e-14)
    assert abs(S.entries[0, 1]) < 1e-15
    assert not S.degenerate


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_sigma_is_symmetric_nonnegative(a, b):
    S = sigma_matrix(lambda x: a * np.cos(x) + 1j * b * x)
    assert np.allclose(S.entries, S.entries.T)
    assert np.all(np.linalg.eigvalsh(S.entries) >= -1e-14)


def test_constant_L_psi_prime():
    L = constant_L(PSI_PRIME, PAIR)
    assert L.real == pytest.approx(INT_PSI_SQ, rel=1e-11)
    assert abs(L.imag) < 1e-15
    assert antiderivative_energy(PSI_PRIME).real == pytest.approx(L.real, rel=1e-11)


def test_constant_L_is_quadratic_in_q():
    L2 = constant_L(PSI_PRIME.scaled(2.0), PAIR)
    assert L2.real == pytest.approx(4 * INT_PSI_SQ, rel=1e-11)


def test_constant_L_rejects_nonzero_mean():
    with pytest.raises(ConfigError):
        constant_L(psi(), PAIR)


def test_free_case_one_variance():
    assert sigma2_corollary("I", PAIR) == pytest.approx(0.5, abs=1e-14)


def test_case_three_limit_is_L():
    s2 = sigma2_corollary("III", PAIR, q=PSI_PRIME)
    assert s2 == pytest.approx(1j * constant_L(PSI_PRIME, PAIR), rel=1e-11)
    with pytest.raises(ConfigError):
        sigma2_corollary("III", PAIR)


def test_classifier():
    assert case_classifier(1, psi(), PAIR) == "I"
    assert case_classifier(1, PSI_PRIME, PAIR) == "III"
    assert case_classifier(3, psi()) == "I"
    assert case_classifier(1, PSI_PRIME, resonant_pair(parse_profile("lincomb(-8*psi)"), 1.14j)) == "II"
    with pytest.raises(ConfigError):
        case_classifier(2, psi())


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_effective_constant_scaling():
    c20 = effective_potential(zero(), PSI_PRIME, 20).constant
    c40 = effective_potential(zero(), PSI_PRIME, 40).constant
    assert c40 == pytest.approx(c20 / 4, rel=1e-14)
    c3 = effective_potential(zero(), PSI_PRIME.scaled(3.0), 20).constant
    assert c3 == pytest.approx(9 * c20, rel=1e-11)
    assert c20.real < 0 and abs(c20.imag) < 1e-15 * abs(c20)


def test_effective_potential_regime_checks():
    # d/2 + m = 3/2 in one dimension: the random N^-3/2 term dominates
    with pytest.warns(UserWarning):
        effective_potential(zero(), PSI_PRIME, 20)
    with pytest.raises(ConfigError):
        effective_potential(zero(), psi(), 20)


def test_effective_resonance_tracks_random_model():
    N = 20
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        veff = effective_potential(zero(), PSI_PRIME, N).profile()
    lam_eff = min((r.lam for r in find_resonances(veff, Box.around(0j, 0.01))), key=abs)
    law = parse_law("rademacher")
    good = 0
    for i in range(20):
        V = RandomPotential(zero(), PSI_PRIME, sample_coefficients(law, N, 1, sample_seed(3, i)))
        lam_N = CharacteristicSeries(PAIR, V, K=2).root()
        good += abs(lam_N - lam_eff) / abs(lam_N) < 0.2
    assert good >= 18


def test_constants_report():
    rep = constants_report(PSI_PRIME, PAIR, N=20)
    assert rep["case"] == "III" and rep["gamma"] == str(Fraction(3, 2))
    assert rep["L"][0] == pytest.approx(INT_PSI_SQ, rel=1e-11)
    assert rep["sigma2"][1] == pytest.approx(INT_PSI_SQ, rel=1e-11)
    assert constants_json(rep) == constants_json(dict(reversed(list(rep.items()))))
