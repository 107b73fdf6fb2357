import numpy as np
import pytest
from hypothesis import given, strategies as st

from hoplab.ensemble import (CoefficientLaw, RandomPotential, counter_uniforms, deterministic_coefficients,
                             evaluate, parse_law, sample_coefficients, stream_key, weak_pairing)
from hoplab.errors import ConfigError
from hoplab.profiles import normalized, parse_profile, psi, zero

seeds = st.integers(0, 2**63 - 1)


@given(seeds, st.integers(1, 40))
def test_rademacher_values(seed, N):
    u = sample_coefficients(parse_law("rademacher"), N, 1, seed).values
    assert set(np.unique(u)) <= {-1.0, 1.0}


@given(seeds, st.integers(1, 30))
def test_uniform_scaled_bounds(seed, N):
    u = sample_coefficients(parse_law("uniform_scaled"), N, 1, seed).values
    assert np.all(np.abs(u) <= np.sqrt(3.0))


@given(seeds)
def test_sampling_is_deterministic(seed):
    law = parse_law("uniform_scaled")
    a = sample_coefficients(law, 7, 3, seed)
    b = sample_coefficients(law, 7, 3, seed)
    assert np.array_equal(a.values, b.values)


def test_counter_stream_is_index_local():
    # each value depends only on its own index: any sub-batch reproduces it
    key = stream_key(123, 10, 1)
    full = counter_uniforms(key, np.arange(21, dtype=np.uint64))
    part = counter_uniforms(key, np.array([5, 17], dtype=np.uint64))
    assert np.array_equal(full[[5, 17]], part)


def test_uniform_mean_sanity():
    law = parse_law("uniform_scaled")
    means = np.array([sample_coefficients(law, 50, 1, s).values.mean() for s in range(1000)])
    assert np.mean(np.abs(means) < 3 / np.sqrt(101)) >= 0.99


def test_law_moments():
    law = parse_law("uniform_scaled")
    u = np.concatenate([sample_coefficients(law, 500, 1, s).values for s in range(20)])
    assert abs(u.mean()) < 0.03 and abs(u.var() - 1) < 0.03


def test_discrete_law():
    law = parse_law("discrete_symmetric([-2, 0, 2],[0.125, 0.75, 0.125])")
    u = sample_coefficients(law, 200, 1, 3).values
    assert set(np.unique(u)) <= {-2.0, 0.0, 2.0}
    with pytest.raises(ConfigError):
        CoefficientLaw("discrete_symmetric", (1.0, 2.0), (0.5, 0.5))
    with pytest.raises(ConfigError):
        parse_law("gaussian")


def test_deterministic_patterns():
    alt = deterministic_coefficients("alternating", 5)
    assert alt[3] == -1 and alt[0] == 1 and alt[-2] == 1
    ones = deterministic_coefficients("all_ones", 4)
    assert np.all(ones.values == 1)
    alt3 = deterministic_coefficients("alternating", 2, 3)
    assert alt3[(1, 1, 1)] == -1 and alt3[(1, 1, 0)] == 1


def test_evaluate_support_and_center():
    V = RandomPotential(zero(), psi(), deterministic_coefficients("all_ones", 1))
    assert evaluate(V, np.array([0.0]))[0] == pytest.approx(np.exp(-1.0), rel=1e-15)
    V = RandomPotential(zero(), psi(), sample_coefficients(parse_law("rademacher"), 10, 1, 5))
    assert np.all(evaluate(V, np.array([-1.2, 1.11, 3.0])) == 0)


@given(seeds, st.floats(-1.2, 1.2))
def test_overlap_bound(seed, x):
    N = 13
    V = RandomPotential(zero(), psi(), sample_coefficients(parse_law("rademacher"), N, 1, seed))
    j = np.arange(-N, N + 1)
    direct = np.sum(V.coeffs.values * psi()(N * x - j))
    val = evaluate(V, np.array([x]))[0]
    assert val == pytest.approx(direct, abs=1e-15)
    assert abs(val) <= 3 * np.exp(-1.0) + 1e-15


def test_weak_pairing_counts():
    q = normalized(psi())
    V = RandomPotential(zero(), q, deterministic_coefficients("all_ones", 10))
    assert weak_pairing(V, lambda x: np.ones_like(x)) == pytest.approx(2.1, abs=1e-13)
    assert weak_pairing(V, lambda x: ((x > 2) & (x < 3)).astype(float)) == 0


def test_weak_pairing_converges_like_inverse_N():
    q = normalized(psi())
    phi = np.cos
    target = 2 * np.sin(1.0)
    errs = []
    for N in (10, 20, 40, 80):
        V = RandomPotential(zero(), q, deterministic_coefficients("all_ones", N))
        errs.append(abs(weak_pairing(V, phi) - target))
    slope = np.polyfit(np.log([10, 20, 40, 80]), np.log(errs), 1)[0]
    assert abs(slope + 1) < 0.1


def test_three_dimensional_radial_evaluation():
    V = RandomPotential(zero(), psi(), deterministic_coefficients("all_ones", 2, 3))
    x = np.array([[0.0, 0.0, 0.0], [0.25, 0.1, -0.3]])
    vals = evaluate(V, x)
    assert vals[0] == pytest.approx(np.exp(-1.0), rel=1e-14)
    j = np.stack(np.meshgrid(*([np.arange(-2, 3)] * 3), indexing="ij"), -1).reshape(-1, 3)
    r = np.linalg.norm(2 * x[1] - j, axis=1)
    assert vals[1] == pytest.approx(np.sum(psi()(r)), abs=1e-15)


def test_field_csv_and_errors():
    f = sample_coefficients(parse_law("rademacher"), 2, 1, 0)
    lines = f.to_csv().strip().splitlines()
    assert lines[0] == "j1,u" and len(lines) == 6
    with pytest.raises(ConfigError):
        sample_coefficients(parse_law("rademacher"), 0)
    with pytest.raises(ConfigError):
        deterministic_coefficients("checkerboard", 3)


def test_potential_is_real_flag():
    q = parse_profile("lincomb(1j*psi)")
    V = RandomPotential(zero(), q, deterministic_coefficients("all_ones", 3))
    assert not V.is_real
